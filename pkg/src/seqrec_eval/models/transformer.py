"""SASRec (causal, ReLU, BPR) and BERT4Rec (bidirectional, GELU, cloze)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from .base import ModelConfig, ModelError, SequenceModel, left_pad
from .recurrent import _NextItemModel, uniform_param


@dataclass
class TransformerConfig(ModelConfig):
    layers: int = 2
    heads: int = 2

    def validate(self) -> None:
        super().validate()
        if self.embedding_size != self.hidden_size:
            raise ModelError("transformers use one width: embedding_size must equal hidden_size")
        if self.hidden_size % self.heads:
            raise ModelError(f"hidden_size {self.hidden_size} is not divisible by heads {self.heads}")
        if self.layers < 1:
            raise ModelError("layers must be >= 1")


@dataclass
class SasRecConfig(TransformerConfig):
    negatives: str = "sequence"  # exclude the whole sequence, or only the step target ("step")


@dataclass
class Bert4RecConfig(TransformerConfig):
    mask_prob: float = 0.2
    last_mask_prob: float = 0.1

    def validate(self) -> None:
        super().validate()
        if not 0.0 < self.mask_prob < 1.0:
            raise ModelError("mask_prob must be in (0, 1)")
        if not 0.0 <= self.last_mask_prob <= 1.0:
            raise ModelError("last_mask_prob must be in [0, 1]")


def block_params(rng: np.random.Generator, d: int, j: int) -> dict[str, Tensor]:
    p = {}
    for name in ("W_Q", "W_K", "W_V", "W_O", "W_F1", "W_F2"):
        p[f"{j}.{name}"] = uniform_param(rng, (d, d), d)
        p[f"{j}.b{name[1:]}"] = ad.zeros(d)
    for ln in ("ln1", "ln2"):
        p[f"{j}.{ln}.g"] = ad.ones(d)
        p[f"{j}.{ln}.b"] = ad.zeros(d)
    return p


def attention_mask(valid: np.ndarray, causal: bool) -> np.ndarray:
    """allowed[b, m, n]: query m may attend to key n."""
    allowed = np.broadcast_to(valid[:, None, :], (valid.shape[0], valid.shape[1], valid.shape[1]))
    if causal:
        T = valid.shape[1]
        allowed = allowed & np.tril(np.ones((T, T), dtype=bool))[None]
    return np.ascontiguousarray(allowed)


def multi_head_attention(p: dict, j: int, x: Tensor, allowed: np.ndarray, heads: int) -> Tensor:
    """Heads are column blocks of the d x d projections; logits are scaled by sqrt(d).

    Rows with no allowed key output zeros.
    """
    B, T, d = x.shape
    dh = d // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)

    q = split(ad.linear(x, p[f"{j}.W_Q"], p[f"{j}.b_Q"]))
    k = split(ad.linear(x, p[f"{j}.W_K"], p[f"{j}.b_K"]))
    v = split(ad.linear(x, p[f"{j}.W_V"], p[f"{j}.b_V"]))
    logits = (q @ k.T) * (1.0 / math.sqrt(d))
    mask = allowed[:, None, :, :]
    w = ad.softmax(ad.masked_fill(logits, np.broadcast_to(~mask, logits.shape)))
    w = w * mask.any(axis=-1, keepdims=True).astype(np.float64)
    out = (w @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
    return ad.linear(out, p[f"{j}.W_O"], p[f"{j}.b_O"])


class _TransformerMixin:
    causal = True

    def _build_transformer(self, rng):
        c = self.config
        d, n, T = c.hidden_size, c.n_items, c.max_len
        self.params["M"] = uniform_param(rng, (n + self.n_special, d), d)
        self.params["P"] = uniform_param(rng, (T, d), d)
        for j in range(c.layers):
            self.params.update(block_params(rng, d, j))
        self.params["ln_out.g"] = ad.ones(d)
        self.params["ln_out.b"] = ad.zeros(d)

    def activation(self, x: Tensor) -> Tensor:
        return ad.relu(x)

    def embed(self, items: np.ndarray, rng=None) -> Tensor:
        """Item embedding plus position embedding; sequences are right-aligned to max_len."""
        T = items.shape[1]
        x = ad.embedding(self.params["M"], items) + self.params["P"][self.config.max_len - T:]
        return ad.dropout(x, self.config.dropout, rng, self.training)

    def encode(self, x: Tensor, valid: np.ndarray, rng=None) -> Tensor:
        """Stack of ``x + Dropout(sublayer(LayerNorm(x)))`` blocks and a final LayerNorm."""
        p, c = self.params, self.config
        allowed = attention_mask(valid, self.causal)
        for j in range(c.layers):
            h = ad.layer_norm(x, p[f"{j}.ln1.g"], p[f"{j}.ln1.b"])
            x = x + ad.dropout(multi_head_attention(p, j, h, allowed, c.heads), c.dropout, rng,
                               self.training)
            h = ad.layer_norm(x, p[f"{j}.ln2.g"], p[f"{j}.ln2.b"])
            ff = ad.linear(self.activation(ad.linear(h, p[f"{j}.W_F1"], p[f"{j}.b_F1"])),
                           p[f"{j}.W_F2"], p[f"{j}.b_F2"])
            x = x + ad.dropout(ff, c.dropout, rng, self.training)
        return ad.layer_norm(x, p["ln_out.g"], p["ln_out.b"])

    def output_logits(self, states: Tensor) -> Tensor:
        return states @ ad.transpose(self.params["M"][: self.n_items])

    def item_logits(self, states: Tensor, items: np.ndarray) -> Tensor:
        return (states * ad.embedding(self.params["M"], items)).sum(axis=-1)


class SASRecModel(_TransformerMixin, _NextItemModel):
    arch = "sasrec"
    config_cls = SasRecConfig
    n_special = 1  # padding

    def build(self, rng):
        self._build_transformer(rng)

    def pad_length(self, seqs) -> int:
        return self.config.max_len

    def sequence_states(self, items, valid, rng=None):
        return self.encode(self.embed(items, rng), valid, rng)

    def loss(self, batch, rng):
        from .losses import loss_bpr_shifted
        return loss_bpr_shifted(self, batch, rng)


class BERT4RecModel(_TransformerMixin, SequenceModel):
    arch = "bert4rec"
    config_cls = Bert4RecConfig
    n_special = 2  # padding, mask
    causal = False

    @property
    def mask_token(self) -> int:
        return self.n_items + 1

    def build(self, rng):
        self._build_transformer(rng)

    def activation(self, x):
        return ad.gelu(x)

    def masked_states(self, items: np.ndarray, valid: np.ndarray, rng=None) -> Tensor:
        """Final states for sequences that already contain mask tokens."""
        if not np.any(items == self.mask_token):
            raise ModelError(f"{self.name}: input contains no mask token")
        return self.encode(self.embed(items, rng), valid, rng)

    def prefix_logits(self, prefixes, rng=None):
        T = self.config.max_len
        seqs = [list(p)[-(T - 1):] + [self.mask_token] if T > 1 else [self.mask_token]
                for p in prefixes]
        items, valid = left_pad(seqs, T, self.pad)
        H = self.masked_states(items, valid, rng)
        return self.output_logits(H[:, T - 1])

    def loss(self, batch, rng):
        from .losses import loss_cloze
        return loss_cloze(self, batch, rng, self.config.mask_prob, self.config.last_mask_prob)
