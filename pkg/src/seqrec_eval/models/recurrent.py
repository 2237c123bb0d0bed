"""GRU and NARM next-item models."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from .base import ModelConfig, ModelError, SequenceModel, left_pad


def uniform_param(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def gru_params(rng: np.random.Generator, e: int, d: int, prefix: str = "") -> dict[str, Tensor]:
    p = {}
    for gate in ("z", "r", "h"):
        p[f"{prefix}W_{gate}"] = uniform_param(rng, (e, d), e)
        p[f"{prefix}R_{gate}"] = uniform_param(rng, (d, d), d)
        p[f"{prefix}b_{gate}"] = ad.zeros(d)
    return p


def gru_encode(params: dict[str, Tensor], x: Tensor, valid: np.ndarray, prefix: str = "") -> Tensor:
    """Hidden state after every step, shape (B, T, d); padded steps keep the previous state.

    z_t = sigmoid(e_t W_z + h_{t-1} R_z + b_z)
    r_t = sigmoid(e_t W_r + h_{t-1} R_r + b_r)
    h_t = (1 - z_t) * h_{t-1} + z_t * tanh(e_t W_h + (r_t * h_{t-1}) R_h + b_h)
    """
    B, T, _ = x.shape
    W = {g: params[f"{prefix}W_{g}"] for g in "zrh"}
    R = {g: params[f"{prefix}R_{g}"] for g in "zrh"}
    b = {g: params[f"{prefix}b_{g}"] for g in "zrh"}
    d = R["z"].shape[0]
    xz = ad.linear(x, W["z"], b["z"])
    xr = ad.linear(x, W["r"], b["r"])
    xh = ad.linear(x, W["h"], b["h"])
    h = Tensor(np.zeros((B, d)))
    states = []
    for t in range(T):
        z = ad.sigmoid(xz[:, t] + h @ R["z"])
        r = ad.sigmoid(xr[:, t] + h @ R["r"])
        cand = ad.tanh(xh[:, t] + (r * h) @ R["h"])
        new = (1.0 - z) * h + z * cand
        m = valid[:, t]
        if m.all():
            h = new
        elif m.any():
            keep = m[:, None].astype(np.float64)
            h = new * keep + h * (1.0 - keep)
        states.append(h)
    return ad.stack(states, axis=1)


@dataclass
class GruConfig(ModelConfig):
    pass


@dataclass
class NarmConfig(ModelConfig):
    normalize_attention: bool = False


class _NextItemModel(SequenceModel):
    """Models trained on every prefix of every training sequence."""

    def _window(self, batch: Sequence[np.ndarray]):
        T = self.config.max_len
        inputs, targets, kept = [], [], []
        for i, s in enumerate(batch):
            s = np.asarray(s)[-(T + 1):]
            if len(s) < 2:
                continue
            inputs.append(s[:-1])
            targets.append(s[1:])
            kept.append(i)
        if not inputs:
            raise ModelError(f"{self.name}: batch has no sequence of length >= 2")
        return inputs, targets, np.asarray(kept, dtype=np.int64)

    def sequence_states(self, items: np.ndarray, valid: np.ndarray, rng=None) -> Tensor:
        """Representation after every position, shape (B, T, k)."""
        raise NotImplementedError

    def output_logits(self, states: Tensor) -> Tensor:
        raise NotImplementedError

    def item_logits(self, states: Tensor, items: np.ndarray) -> Tensor:
        raise NotImplementedError

    def pad_length(self, seqs) -> int:
        return min(self.config.max_len, max(len(s) for s in seqs))

    def next_item_states(self, batch, rng=None):
        """States at every real position, the next item there, and its batch row."""
        inputs, targets, kept = self._window(batch)
        L = self.pad_length(inputs)
        items, valid = left_pad(inputs, L, self.pad)
        tgt, _ = left_pad(targets, L, self.pad)
        H = self.sequence_states(items, valid, rng)
        rows = np.nonzero(valid)[0]
        return H[valid], tgt[valid], kept[rows]

    def prefix_logits(self, prefixes, rng=None) -> Tensor:
        L = self.pad_length(prefixes)
        items, valid = left_pad(prefixes, L, self.pad)
        H = self.sequence_states(items, valid, rng)
        return self.output_logits(H[:, L - 1])

    def loss(self, batch, rng):
        from .losses import loss_cross_entropy_prefixes
        return loss_cross_entropy_prefixes(self, batch, rng)


class GRUModel(_NextItemModel):
    arch = "gru"
    config_cls = GruConfig

    def build(self, rng):
        c = self.config
        e, d, n = c.embedding_size, c.hidden_size, c.n_items
        self.params["M"] = uniform_param(rng, (n + 1, e), e)
        self.params.update(gru_params(rng, e, d))
        self.params["W_s"] = uniform_param(rng, (d, n), d)
        self.params["b_s"] = ad.zeros(n)

    def embed(self, items: np.ndarray, rng=None) -> Tensor:
        x = ad.embedding(self.params["M"], items)
        return ad.dropout(x, self.config.dropout, rng, self.training)

    def encode(self, x: Tensor, valid: np.ndarray) -> Tensor:
        return gru_encode(self.params, x, valid)

    def sequence_states(self, items, valid, rng=None):
        return self.encode(self.embed(items, rng), valid)

    def output_logits(self, states):
        return ad.linear(states, self.params["W_s"], self.params["b_s"])

    def item_logits(self, states, items):
        cols = ad.embedding(ad.transpose(self.params["W_s"]), items)
        return (states * cols).sum(axis=-1) + self.params["b_s"][items]


class NARMModel(_NextItemModel):
    """Global GRU summary concatenated with an attention-pooled local GRU.

    Alignment between the last local state and state j is
    ``V^T sigmoid(h_last A_1 + h_j A_2 + b)``; by default the weights are used
    unnormalised, ``normalize_attention`` applies a softmax over j instead.
    """

    arch = "narm"
    config_cls = NarmConfig

    def build(self, rng):
        c = self.config
        e, d, n = c.embedding_size, c.hidden_size, c.n_items
        a = d
        self.params["M"] = uniform_param(rng, (n + 1, e), e)
        self.params.update(gru_params(rng, e, d, prefix="g_"))
        self.params.update(gru_params(rng, e, d, prefix="l_"))
        self.params["A_1"] = uniform_param(rng, (d, a), d)
        self.params["A_2"] = uniform_param(rng, (d, a), d)
        self.params["b_a"] = ad.zeros(a)
        self.params["V"] = uniform_param(rng, (a, 1), a)
        self.params["B"] = uniform_param(rng, (2 * d, e), 2 * d)
        self.params["b_B"] = ad.zeros(e)

    def embed(self, items, rng=None):
        x = ad.embedding(self.params["M"], items)
        return ad.dropout(x, self.config.dropout, rng, self.training)

    def attention_weights(self, HL: Tensor, valid: np.ndarray, queries: slice) -> Tensor:
        """alpha[b, t, j] for query positions ``queries`` and every key position j."""
        B, T, d = HL.shape
        p = self.params
        q = HL[:, queries] @ p["A_1"]
        Tq = q.shape[1]
        k = ad.linear(HL, p["A_2"], p["b_a"])
        a = q.shape[-1]
        pre = q.reshape(B, Tq, 1, a) + k.reshape(B, 1, T, a)
        alpha = (ad.sigmoid(pre) @ p["V"]).reshape(B, Tq, T)
        qpos = np.arange(T)[queries]
        allowed = (np.arange(T)[None, :] <= qpos[:, None])[None, :, :] & valid[:, None, :]
        if self.config.normalize_attention:
            w = ad.softmax(ad.masked_fill(alpha, ~allowed))
            return w * allowed.any(axis=-1, keepdims=True).astype(np.float64)
        return alpha * allowed.astype(np.float64)

    def representation(self, x: Tensor, valid: np.ndarray, queries: slice) -> Tensor:
        p = self.params
        HG = gru_encode(p, x, valid, prefix="g_")
        HL = gru_encode(p, x, valid, prefix="l_")
        alpha = self.attention_weights(HL, valid, queries)
        c_local = alpha @ HL
        c = ad.concat([HG[:, queries], c_local], axis=-1)
        return ad.linear(c, p["B"], p["b_B"])

    def sequence_states(self, items, valid, rng=None):
        return self.representation(self.embed(items, rng), valid, slice(None))

    def prefix_logits(self, prefixes, rng=None):
        L = self.pad_length(prefixes)
        items, valid = left_pad(prefixes, L, self.pad)
        rep = self.representation(self.embed(items, rng), valid, slice(L - 1, L))
        return self.output_logits(rep[:, 0])

    def output_logits(self, states):
        M = self.params["M"][: self.n_items]
        return states @ ad.transpose(M)

    def item_logits(self, states, items):
        return (states * ad.embedding(self.params["M"], items)).sum(axis=-1)
