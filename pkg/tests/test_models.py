import math

import numpy as np
import pytest

import oracles
from gradcheck import numeric_grad, relative_error
from seqrec_eval import autodiff as ad
from seqrec_eval.autodiff import Tensor
from seqrec_eval.dataset import EvaluationInstance, split
from seqrec_eval.evaluation import evaluate
from seqrec_eval.metrics import MetricSpec
from seqrec_eval.models import (ARCHITECTURES, MarkovScorer, ModelError, PopularityScorer,
                                TrainingDiverged, catalog_checksum, create_model, load_model,
                                train)
from seqrec_eval.models.base import left_pad
from seqrec_eval.models.losses import cloze_masks, cross_entropy, sample_negatives
from seqrec_eval.models.transformer import attention_mask
from seqrec_eval.synthetic import cycle_dataset
from seqrec_eval.targetset import TargetSetSpec

N = 20
TOY = dict(embedding_size=8, hidden_size=8, max_len=8, dropout=0.0)


def toy(arch, n_items=N, seed=0, scale=0.4, **kw):
    """A model with every parameter (biases and norms included) randomised."""
    extra = dict(layers=2, heads=2) if arch in ("sasrec", "bert4rec") else {}
    m = create_model(arch, n_items, **{**TOY, **extra, **kw})
    g = np.random.default_rng(seed)
    for p in m.params.values():
        p.data = p.data + g.normal(size=p.shape) * scale
    return m


def params(m):
    return m.state_dict()


# ---------------------------------------------------------------- forward passes vs oracles

def test_gru_matches_oracle(rng):
    m = toy("gru")
    for prefix in ([3], [4, 0, 19, 7, 7], [1, 2, 3, 4, 5, 6, 7, 8]):
        got = m.score_all([prefix])[0]
        np.testing.assert_allclose(got, oracles.gru_scores(params(m), prefix), rtol=0, atol=1e-12)


@pytest.mark.parametrize("normalize", [False, True])
def test_narm_matches_oracle(normalize):
    m = toy("narm", normalize_attention=normalize)
    for prefix in ([5], [2, 9, 9, 14], [0, 1, 2, 3, 4, 5, 6]):
        got = m.score_all([prefix])[0]
        want = oracles.narm_scores(params(m), prefix, N, normalize)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


@pytest.mark.parametrize("arch", ["sasrec", "bert4rec"])
def test_transformers_match_oracle(arch):
    m = toy(arch)
    fn = oracles.sasrec_scores if arch == "sasrec" else oracles.bert4rec_scores
    for prefix in ([6], [3, 1, 4, 1, 5], [9, 2, 6, 5, 3, 5, 8, 9], list(range(12))):
        got = m.score_all([prefix])[0]
        want = fn(params(m), prefix, N, 8, 2, 2)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_batched_scoring_matches_single():
    for arch in ARCHITECTURES:
        m = toy(arch)
        prefixes = [[1], [2, 3, 4], [5, 6, 7, 8, 9, 10, 11, 12, 13], [0, 0]]
        batched = m.score_all(prefixes)
        for row, p in zip(batched, prefixes):
            np.testing.assert_allclose(row, m.score_all([p])[0], rtol=0, atol=1e-12)


# ---------------------------------------------------------------- trivial forward examples

def test_gru_zero_network_gives_uniform_scores():
    m = create_model("gru", N, **TOY)
    for p in m.params.values():
        p.data = np.zeros_like(p.data)
    s = m.score_all([[1, 2, 3]])[0]
    assert np.all(s == s[0])


def test_gru_single_step_closed_form():
    m = toy("gru")
    p = params(m)
    e = p["M"][4]
    z = oracles.sigmoid(e @ p["W_z"] + p["b_z"])
    h1 = z * np.tanh(e @ p["W_h"] + p["b_h"])
    np.testing.assert_allclose(m.score_all([[4]])[0], h1 @ p["W_s"] + p["b_s"], atol=1e-12)


def test_narm_single_position_and_zero_v():
    m = toy("narm")
    items, valid = left_pad([[7]], 1, m.pad)
    x = m.embed(items)
    from seqrec_eval.models.recurrent import gru_encode
    HL = gru_encode(m.params, x, valid, "l_")
    alpha = m.attention_weights(HL, valid, slice(0, 1)).data
    p = params(m)
    hl = HL.data[0, 0]
    want = float(oracles.sigmoid(hl @ p["A_1"] + hl @ p["A_2"] + p["b_a"]) @ p["V"][:, 0])
    assert alpha.shape == (1, 1, 1) and alpha[0, 0, 0] == pytest.approx(want, abs=1e-14)

    m.params["V"].data = np.zeros_like(m.params["V"].data)
    items, valid = left_pad([[1, 2, 3, 4]], 4, m.pad)
    HL = gru_encode(m.params, m.embed(items), valid, "l_")
    assert np.all(m.attention_weights(HL, valid, slice(3, 4)).data == 0.0)
    m.config.normalize_attention = True
    np.testing.assert_allclose(m.attention_weights(HL, valid, slice(3, 4)).data, 0.25, atol=1e-15)


def test_sasrec_single_key_attention_is_one(rng):
    valid = np.zeros((1, 8), dtype=bool)
    valid[0, -1] = True
    allowed = attention_mask(valid, causal=True)
    logits = Tensor(rng.normal(size=(1, 8, 8)))
    w = ad.softmax(ad.masked_fill(logits, ~allowed)).data
    assert w[0, -1, -1] == 1.0
    assert np.all(w[0, -1, :-1] == 0.0)


def _position_gradient(arch, query, key):
    m = toy(arch)
    x = Tensor(np.random.default_rng(1).normal(size=(1, 8, 8)), requires_grad=True)
    valid = np.ones((1, 8), dtype=bool)
    H = m.encode(x, valid)
    ad.tsum(H[:, query] * np.random.default_rng(2).normal(size=8)).backward()
    return x.grad[0, key]


def test_sasrec_causal_gradient_is_zero():
    assert np.all(_position_gradient("sasrec", 0, 1) == 0.0)
    assert np.all(_position_gradient("sasrec", 2, 5) == 0.0)
    assert np.any(_position_gradient("sasrec", 5, 2) != 0.0)


def test_bert4rec_bidirectional_gradient_nonzero():
    assert np.max(np.abs(_position_gradient("bert4rec", 0, 2))) > 0


def test_bert4rec_mask_requirements():
    m = toy("bert4rec")
    items, valid = left_pad([[1, 2, 3]], 8, m.pad)
    with pytest.raises(ModelError, match="mask"):
        m.masked_states(items, valid)
    single = toy("bert4rec", max_len=1)
    s = single.score_all([[3], [7, 1], [19]])
    assert np.array_equal(s[0], s[1]) and np.array_equal(s[1], s[2])


def test_empty_prefix_rejected():
    for arch in ARCHITECTURES:
        with pytest.raises(ModelError, match="empty prefix"):
            toy(arch).score_all([[1], []])


# ---------------------------------------------------------------- invariants

@pytest.mark.parametrize("arch", ["gru", "narm", "sasrec"])
def test_causal_invariance(arch):
    m = toy(arch)
    seq = [3, 8, 1, 0, 12, 5, 9, 2]
    items, valid = left_pad([seq], 8, m.pad)
    other = items.copy()
    other[0, 4:] = [17, 16, 15, 14]
    a = m.sequence_states(items, valid).data
    b = m.sequence_states(other, valid).data
    np.testing.assert_allclose(a[0, :4], b[0, :4], rtol=0, atol=1e-12)
    assert not np.allclose(a[0, 4:], b[0, 4:])


@pytest.mark.parametrize("arch", list(ARCHITECTURES))
def test_truncation_keeps_recent_window(arch):
    m = toy(arch)
    long = [int(i) for i in np.random.default_rng(4).integers(0, N, size=15)]
    keep = 8 if arch != "bert4rec" else 7
    assert np.array_equal(m.score_all([long])[0], m.score_all([long[-keep:]])[0])


def test_eval_scores_deterministic_and_finite():
    for arch in ARCHITECTURES:
        m = toy(arch, dropout=0.3)
        a = m.score_all([[1, 2, 3], [4]])
        b = m.score_all([[1, 2, 3], [4]])
        assert np.array_equal(a, b) and np.all(np.isfinite(a))


# ---------------------------------------------------------------- losses

def test_cross_entropy_examples():
    m = create_model("gru", 4, **TOY)
    for p in m.params.values():
        p.data = np.zeros_like(p.data)
    assert m.loss([np.array([0, 1])], np.random.default_rng(0)).item() == pytest.approx(math.log(4), abs=1e-15)
    big = Tensor(np.array([[60.0, 0.0, 0.0, 0.0]]))
    assert cross_entropy(big, np.array([0])).item() < 1e-25


def _toy_batch(seed=5):
    g = np.random.default_rng(seed)
    return [g.integers(0, N, size=n) for n in (9, 5, 2, 7)]


@pytest.mark.parametrize("arch", ["gru", "narm"])
def test_prefix_cross_entropy_matches_oracle(arch):
    m = toy(arch)
    batch = _toy_batch()
    got = m.loss(batch, np.random.default_rng(0)).item()
    want = 0.0
    for s in batch:
        s = [int(i) for i in s][-9:]
        for t in range(1, len(s)):
            o = (oracles.gru_scores(params(m), s[:t]) if arch == "gru"
                 else oracles.narm_scores(params(m), s[:t], N))
            want += oracles.logsumexp(o) - o[s[t]]
    assert got == pytest.approx(want, rel=1e-10, abs=1e-10)
    m.config.loss_reduction = "mean"
    n_terms = sum(min(len(s), 9) - 1 for s in batch)
    assert m.loss(batch, np.random.default_rng(0)).item() == pytest.approx(want / n_terms, rel=1e-10)


def test_bpr_uniform_logits_give_two_ln2_per_term():
    m = create_model("sasrec", N, **TOY, layers=1, heads=1)
    m.params["M"].data = np.zeros_like(m.params["M"].data)
    batch = _toy_batch()
    terms = sum(min(len(s), 9) - 1 for s in batch)
    assert m.loss(batch, np.random.default_rng(0)).item() == pytest.approx(2 * math.log(2) * terms,
                                                                           rel=1e-12)


@pytest.mark.parametrize("mode", ["sequence", "step"])
def test_bpr_matches_oracle(mode):
    m = toy("sasrec", negatives=mode)
    batch = _toy_batch()
    got = m.loss(batch, np.random.default_rng(11)).item()
    inputs, targets, rows = m._window(batch)
    flat_t = np.concatenate(targets)
    flat_r = np.concatenate([[r] * len(t) for r, t in zip(rows, targets)])
    negs = sample_negatives(np.random.default_rng(11), N, flat_t, flat_r, batch, mode)
    want, j = 0.0, 0
    relu = lambda z: np.maximum(z, 0.0)  # noqa: E731
    for r in rows:
        # training states come from the whole window, right-aligned as one sequence
        s = [int(i) for i in batch[r]][-9:]
        H = oracles.transformer_states(params(m), s[:-1], 8, 2, 2, True, relu)
        for t in range(1, len(s)):
            o = H[t - 1] @ params(m)["M"][:N].T
            assert negs[j] != s[t]
            if mode == "sequence":
                assert negs[j] not in set(int(i) for i in batch[r])
            want += oracles.softplus(-o[s[t]]) + oracles.softplus(o[negs[j]])
            j += 1
    assert j == len(negs)
    assert got == pytest.approx(want, rel=1e-10, abs=1e-10)


def test_cloze_uniform_single_mask_is_ln4():
    m = create_model("bert4rec", 4, **TOY, layers=1, heads=1, last_mask_prob=1.0)
    m.params["M"].data = np.zeros_like(m.params["M"].data)
    assert m.loss([np.array([0, 1, 2])], np.random.default_rng(0)).item() == pytest.approx(math.log(4))


def test_cloze_masks_examples():
    masks = cloze_masks(np.random.default_rng(0), [5, 3, 8, 1], 0.2, 1.0)
    for mk in masks:
        assert mk[-1] and mk.sum() == 1
    for mk in cloze_masks(np.random.default_rng(1), [6] * 50, 0.01, 0.0):
        assert mk.any()
    a = cloze_masks(np.random.default_rng(9), [7, 4], 0.3, 0.1)
    b = cloze_masks(np.random.default_rng(9), [7, 4], 0.3, 0.1)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_cloze_matches_oracle():
    m = toy("bert4rec")
    batch = _toy_batch()
    got = m.loss(batch, np.random.default_rng(21)).item()
    seqs = [[int(i) for i in s][-8:] for s in batch]
    masks = cloze_masks(np.random.default_rng(21), [len(s) for s in seqs], 0.2, 0.1)
    want = 0.0
    for s, mk in zip(seqs, masks):
        inp = [m.mask_token if f else i for i, f in zip(s, mk)]
        H = oracles.transformer_states(params(m), inp, 8, 2, 2, False, oracles.gelu)
        for pos in np.flatnonzero(mk):
            o = H[pos] @ params(m)["M"][:N].T
            want += oracles.logsumexp(o) - o[s[pos]]
    assert got == pytest.approx(want, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("arch", list(ARCHITECTURES))
def test_loss_gradient_check_small(arch):
    m = toy(arch, n_items=6, embedding_size=4, hidden_size=4, max_len=4, loss_reduction="mean",
            **({"layers": 1, "heads": 2} if arch in ("sasrec", "bert4rec") else {}))
    batch = [np.array([0, 3, 5, 1]), np.array([2, 4])]
    m.train()
    m.loss(batch, np.random.default_rng(3)).backward()
    for k, p in m.params.items():
        num = numeric_grad(lambda: m.loss(batch, np.random.default_rng(3)).item(), p.data)
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        assert relative_error(grad, num) < 1e-4, k


# ---------------------------------------------------------------- baselines

def test_popularity_baseline():
    pop = PopularityScorer(np.array([5.0, 1.0]))
    for prefix in ([0], [1], [1, 0, 1]):
        s = pop.score(prefix, [0, 1])
        assert s[0] > s[1]
    with pytest.raises(ValueError):
        PopularityScorer(np.array([]))


def test_markov_baseline():
    a, b, c = 0, 1, 2
    mk = MarkovScorer([np.array([a, b])] * 3 + [np.array([a, c])], 3)
    s = mk.score([c, a], [b, c])
    assert s[0] > s[1]
    assert s[0] == pytest.approx(4 / 7) and s[1] == pytest.approx(2 / 7)
    assert mk.score([b], [a, b, c]).tolist() == pytest.approx([1 / 3] * 3)
    with pytest.raises(ValueError):
        MarkovScorer([np.array([a])], 3)


def test_markov_is_perfect_on_cycle():
    ds = cycle_dataset()
    sp = split(ds)
    res = evaluate([MarkovScorer(sp.train_sequences, ds.n_items)], sp.test_instances, ds.n_items,
                   TargetSetSpec("full"), [MetricSpec("HR", 1)])
    assert res["markov"]["HR@1"] == [1.0]


# ---------------------------------------------------------------- training

def tiny_cycle():
    return split(cycle_dataset(n_items=8, n_users=16, length=6))


def test_zero_epochs_returns_initialisation():
    m = create_model("gru", 8, **TOY, batch_size=4)
    init = m.state_dict()
    state = train(m, tiny_cycle(), epochs=0)
    assert state.epoch == 0 and len(state.history) == 1
    assert all(np.array_equal(init[k], v) for k, v in m.state_dict().items())


@pytest.mark.parametrize("arch", list(ARCHITECTURES))
def test_training_is_bit_identical(arch):
    def run():
        m = create_model(arch, 8, **{**TOY, "dropout": 0.2}, batch_size=4, learning_rate=1e-2,
                         **({"layers": 1, "heads": 2} if arch in ("sasrec", "bert4rec") else {}))
        st = train(m, tiny_cycle(), epochs=2)
        return st, m.state_dict()
    (s1, p1), (s2, p2) = run(), run()
    assert s1.summary() == s2.summary()
    assert all(p1[k].tobytes() == p2[k].tobytes() for k in p1)


def test_best_checkpoint_tracks_max_validation():
    m = create_model("gru", 8, **TOY, batch_size=4, learning_rate=2e-2)
    st = train(m, tiny_cycle(), epochs=6, patience=100)
    best = max(h["HR@10"] for h in st.history)
    assert st.best_validation == best
    first = next(h["epoch"] for h in st.history if h["HR@10"] == best)
    assert st.best_epoch == first
    assert all(np.array_equal(st.best_params[k], v) for k, v in m.state_dict().items())


def test_patience_stops_early():
    m = create_model("gru", 8, **TOY, batch_size=4, learning_rate=0.0)
    st = train(m, tiny_cycle(), epochs=30, patience=3)
    assert st.stop_reason == "patience" and st.epoch == 3


def test_divergence_restores_last_finite_state():
    m = create_model("gru", 8, **TOY, batch_size=64)
    real = m.loss
    calls = {"n": 0}

    def flaky(batch, gen):
        calls["n"] += 1
        out = real(batch, gen)
        return out * math.nan if calls["n"] >= 2 else out
    m.loss = flaky
    with pytest.raises(TrainingDiverged) as info:
        train(m, tiny_cycle(), epochs=5)
    st = info.value.state
    assert st.stop_reason == "diverged" and st.epoch == 1
    assert all(np.array_equal(st.last_finite_params[k], v) for k, v in m.state_dict().items())
    assert all(np.all(np.isfinite(v)) for v in m.state_dict().values())


# ---------------------------------------------------------------- registry and persistence

def test_registry_and_config_errors():
    assert set(ARCHITECTURES) == {"gru", "narm", "sasrec", "bert4rec"}
    with pytest.raises(ModelError):
        create_model("caser", N)
    with pytest.raises(ModelError):
        create_model("sasrec", N, embedding_size=8, hidden_size=8, heads=3)
    with pytest.raises(ModelError):
        create_model("gru", N, no_such_field=1)
    with pytest.raises(ModelError):
        create_model("bert4rec", N, mask_prob=0.0)


@pytest.mark.parametrize("arch", list(ARCHITECTURES))
def test_save_load_round_trip(arch, tmp_path):
    m = toy(arch)
    catalog = [f"i{i}" for i in range(N)]
    m.save(tmp_path / arch, catalog_checksum(catalog))
    back = load_model(tmp_path / arch, expected_catalog=catalog_checksum(catalog))
    assert back.arch == arch and back.config == m.config
    assert np.array_equal(back.score_all([[1, 2, 3]]), m.score_all([[1, 2, 3]]))
    with pytest.raises(ModelError, match="catalog"):
        load_model(tmp_path / arch, expected_catalog=catalog_checksum(catalog[::-1]))


def test_score_instances_interface():
    m = toy("gru")
    inst = [EvaluationInstance(0, (1, 2), 3), EvaluationInstance(1, (4,), 5)]
    rows = m.score_instances(inst)
    assert rows.shape == (2, N)
    np.testing.assert_allclose(m.score([1, 2], [3, 0]), rows[0, [3, 0]], rtol=0, atol=1e-12)
