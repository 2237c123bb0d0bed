"""Acceptance criteria, each checked at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line (collected again in the terminal
summary).  Criterion 7 as literally stated cannot hold; it is implemented
faithfully and marked as an expected failure, next to a corrected variant.
"""
import os
import time
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import oracles
from acceptance_log import skipped, verdict
from gradcheck import numeric_grad, relative_error
from seqrec_eval.dataset import (EvaluationInstance, ColumnFormat, ingest, preprocess, split)
from seqrec_eval.evaluation import evaluate
from seqrec_eval.harness import ExperimentConfig, analyze, run_experiment
from seqrec_eval.metrics import MetricSpec, RankedList, hit_rate_at_k, ndcg_at_k
from seqrec_eval.models import MarkovScorer, TableScorer, create_model, train
from seqrec_eval.ranking import (ModelRanking, RankTieWarning, consistency, kendall_tau_a,
                                 rank_models, repeated_sampled_evaluation, sample_size_sweep)
from seqrec_eval.synthetic import (cycle_dataset, expected_scenario_hr, items_above,
                                   zipf_scenario)
from seqrec_eval.targetset import FULL, TargetSetSpec, build_popularity, build_uniform

HR10 = MetricSpec("HR", 10)


# ---------------------------------------------------------------- 1

def test_criterion_1_metric_oracle_equivalence():
    gen = np.random.default_rng(2024)
    start = time.perf_counter()
    hr_bad = nd_err = 0
    for _ in range(10_000):
        n = int(gen.integers(1, 1001))
        perm = gen.permutation(n)
        rel = int(gen.integers(n))
        k = int(gen.integers(1, n + 11))
        r = RankedList(perm)
        items = perm.tolist()
        hr_bad += hit_rate_at_k(r, rel, k) != oracles.hr_scan(items, rel, k)
        nd_err = max(nd_err, abs(ndcg_at_k(r, rel, k) - oracles.ndcg_scan(items, rel, k)))
    elapsed = time.perf_counter() - start
    ok = hr_bad == 0 and nd_err <= 1e-12 and elapsed < 10
    verdict(1, ok, f"10000 cases, HR mismatches {hr_bad}, max NDCG error {nd_err:.1e}, "
                   f"{elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 2

MODELS = ("GRU", "NARM", "SASRec", "BERT4Rec")


def _ranking(ranks):
    return ModelRanking.from_ranks(dict(zip(MODELS, ranks)))


def test_criterion_2_kendall_tau_table_values():
    ml1m_full, ml1m_pop = (1, 2, 3, 4), (3, 4, 2, 1)
    beauty_full, beauty_uni = (3, 2, 1, 4), (4, 3, 2, 1)
    games_full, games_sampled = (4, 1, 3, 2), (4, 2, 3, 1)
    got = {
        "ML-1m popularity": kendall_tau_a(_ranking(ml1m_pop), _ranking(ml1m_full)).tau_exact,
        "Beauty uniform": kendall_tau_a(_ranking(beauty_uni), _ranking(beauty_full)).tau_exact,
        "Games both": kendall_tau_a(_ranking(games_sampled), _ranking(games_full)).tau_exact,
    }
    want = {"ML-1m popularity": Fraction(-2, 3), "Beauty uniform": Fraction(0),
            "Games both": Fraction(2, 3)}
    printed = {"ML-1m popularity": -0.67, "Beauty uniform": 0.00, "Games both": 0.67}
    ok = got == want and all(round(float(got[k]), 2) == printed[k] for k in got)
    verdict(2, ok, ", ".join(f"{k} tau={v}" for k, v in got.items()))
    assert ok


# ---------------------------------------------------------------- 3

def test_criterion_3_ml1m_preprocessing():
    path = os.environ.get("SEQREC_ML1M_RATINGS")
    if not path or not os.path.exists(path):
        skipped(3, "set SEQREC_ML1M_RATINGS to the raw ML-1m ratings.dat to run")
        pytest.skip("ML-1m ratings not available")
    start = time.perf_counter()
    ds = preprocess(ingest(path, ColumnFormat.preset("ml1m")), min_count=5)
    elapsed = time.perf_counter() - start
    s = ds.stats()
    ok = (s["users"] == 6040 and s["items"] == 3416 and abs(s["avg_length"] - 165.50) <= 0.01
          and abs(100 * s["density"] - 4.84) <= 0.01 and elapsed < 60)
    verdict(3, ok, f"users {s['users']}, items {s['items']}, avg length {s['avg_length']:.2f}, "
                   f"density {100 * s['density']:.2f}%, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 4

def test_criterion_4_sampling_chi_square():
    start = time.perf_counter()
    trials = 100_000
    # (a) uniform, 10-item pool, eta = 3
    inst = EvaluationInstance(0, (10,), 11)
    gen = np.random.default_rng(101)
    incl = np.zeros(12)
    for _ in range(trials):
        incl[build_uniform(inst, 12, 3, gen).candidates] += 1
    p_uniform = stats.chisquare(incl[:10], np.full(10, 0.3 * trials)).pvalue
    # (b) popularity, 5-item pool, single draws
    counts = np.array([5.0, 1.0, 3.0, 8.0, 2.0, 4.0, 4.0])
    inst = EvaluationInstance(1, (5,), 6)
    freq = np.zeros(7)
    for _ in range(trials):
        freq[build_popularity(inst, 7, 1, counts, gen).candidates] += 1
    expected = counts[:5] / counts[:5].sum() * trials
    p_pop = stats.chisquare(freq[:5], expected).pvalue
    elapsed = time.perf_counter() - start
    ok = p_uniform > 0.01 and p_pop > 0.01 and elapsed < 10
    verdict(4, ok, f"uniform inclusion p={p_uniform:.3f} (mean {incl[:10].mean() / trials:.4f}), "
                   f"popularity p={p_pop:.3f}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 5

TOY5 = dict(embedding_size=8, hidden_size=8, max_len=8, dropout=0.0)


def test_criterion_5_gradient_checks():
    start = time.perf_counter()
    gen = np.random.default_rng(5)
    batch = [gen.integers(0, 20, size=n) for n in (8, 6, 3, 9)]
    worst = {}
    for arch in ("gru", "narm", "sasrec", "bert4rec"):
        extra = dict(layers=2, heads=2) if arch in ("sasrec", "bert4rec") else {}
        m = create_model(arch, 20, **TOY5, **extra, batch_size=4)
        init = np.random.default_rng(6)
        for p in m.params.values():  # move biases and norms off their initial constants
            p.data = p.data + init.normal(size=p.shape) * 0.3
        m.train()

        def loss():
            return m.loss(batch, np.random.default_rng(3))
        m.zero_grad()
        loss().backward()
        err = 0.0
        for k, p in m.params.items():
            num = numeric_grad(lambda: loss().item(), p.data, 1e-5)
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            err = max(err, relative_error(grad, num))
        worst[arch] = err
    elapsed = time.perf_counter() - start
    ok = all(e < 1e-4 for e in worst.values()) and elapsed < 300
    verdict(5, ok, ", ".join(f"{a} {e:.1e}" for a, e in worst.items()) + f", {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------- 6

CYCLE_MODEL = dict(embedding_size=32, hidden_size=32, max_len=12, dropout=0.0, batch_size=16,
                   learning_rate=1e-2, patience=50)
CYCLE_EXTRA = {"gru": {}, "narm": {}, "sasrec": {"negatives": "step"}, "bert4rec": {}}


def test_criterion_6_trainability_on_cycle():
    start = time.perf_counter()
    ds = cycle_dataset(20, 200, 12)
    sp = split(ds)
    best = {}
    for arch, extra in CYCLE_EXTRA.items():
        m = create_model(arch, ds.n_items, **CYCLE_MODEL, **extra)
        state = train(m, sp, epochs=50, metrics=[MetricSpec("HR", 1)])
        best[arch] = max(h["HR@1"] for h in state.history)
    markov = evaluate([MarkovScorer(sp.train_sequences, ds.n_items)], sp.test_instances,
                      ds.n_items, TargetSetSpec("full"), [MetricSpec("HR", 1)])["markov"]["HR@1"][0]
    elapsed = time.perf_counter() - start
    ok = all(v >= 0.9 for v in best.values()) and markov == 1.0 and elapsed < 900
    verdict(6, ok, ", ".join(f"{a} val HR@1 {v:.2f}" for a, v in best.items())
            + f", markov test HR@1 {markov:.2f}, {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------- 7 and 8

@pytest.fixture(scope="module")
def literal_scenario():
    return zipf_scenario(n_items=1000, n_instances=1000, popular=50, b_rank=6, seed=0)


def _phenomenon(scenario):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankTieWarning)
        report = analyze(scenario.scorer_list("A", "B"), scenario.instances, scenario.n_items,
                         metrics=[HR10], strategies=["full", "uniform"], eta=100, runs=20,
                         counts=scenario.counts, seed=0)
    full, uni = report.block("full", "HR@10"), report.block("uniform", "HR@10")
    expected = {n: (expected_scenario_hr(scenario, n, None), expected_scenario_hr(scenario, n, 100))
                for n in ("A", "B")}
    return full, uni, expected


def _close_to_closed_form(uni, expected):
    # each run mean is over 1000 instances; 20 runs; allow four standard errors
    return all(abs(uni.means[n] - expected[n][1]) <= 4 * max(uni.std[n], 1e-3) / np.sqrt(20) + 1e-3
               for n in ("A", "B"))


@pytest.mark.xfail(strict=True, reason="B has full rank 6, so every sampled target set keeps it in "
                   "the top 10 and sampled HR@10(B) = 1; A can never rank above B (see ledger)")
def test_criterion_7_literal(literal_scenario):
    full, uni, expected = _phenomenon(literal_scenario)
    prefers_b = full.ranks == {"A": 2, "B": 1}
    flips = uni.ranks == {"A": 1, "B": 2}
    detail = (f"full HR@10 A={full.means['A']:.3f} B={full.means['B']:.3f}; uniform@100 "
              f"A={uni.means['A']:.3f} (closed form {expected['A'][1]:.3f}) B={uni.means['B']:.3f} "
              f"(closed form {expected['B'][1]:.3f}); tau={uni.tau}")
    ok = prefers_b and flips and uni.tau == "-1"
    verdict(7, ok, detail + " [literal construction; unattainable, see ledger]")
    assert _close_to_closed_form(uni, expected)
    assert prefers_b
    assert flips and uni.tau == "-1"


def test_criterion_7_corrected_variant():
    sc = zipf_scenario(n_items=1000, n_instances=1000, popular=50, b_rank=60, seed=0)
    full, uni, expected = _phenomenon(sc)
    # pre-registered: the closed form decides the direction before looking at runs
    pre = expected["B"][1] > expected["A"][1] and expected["A"][0] > expected["B"][0]
    ok = (pre and full.ranks == {"A": 1, "B": 2} and uni.ranks == {"A": 2, "B": 1}
          and uni.tau == "-1" and _close_to_closed_form(uni, expected))
    verdict("7 (corrected, B at full rank 60)", ok,
            f"full HR@10 A={full.means['A']:.3f} B={full.means['B']:.3f}; uniform@100 "
            f"A={uni.means['A']:.3f} (closed form {expected['A'][1]:.3f}) B={uni.means['B']:.3f} "
            f"(closed form {expected['B'][1]:.3f}); tau={uni.tau}")
    assert ok


def test_criterion_8_repeated_run_stability(literal_scenario):
    sc = literal_scenario
    models = sc.scorer_list("A", "B")
    r100 = repeated_sampled_evaluation(models, sc.instances, sc.n_items,
                                       TargetSetSpec("uniform", 100, 0), runs=20, metric=HR10)
    pool = items_above(sc.scorers["A"].rows[0], sc.instances[0])[1]
    rfull = repeated_sampled_evaluation(models, sc.instances, sc.n_items,
                                        TargetSetSpec("uniform", pool, 0), runs=20, metric=HR10)
    ok = all(v < 0.01 for v in r100.std.values()) and all(v == 0.0 for v in rfull.std.values())
    verdict(8, ok, "std at eta=100 " + ", ".join(f"{n} {v:.4f}" for n, v in r100.std.items())
            + f"; std at eta={pool} " + ", ".join(f"{n} {v}" for n, v in rfull.std.items()))
    assert ok


# ---------------------------------------------------------------- 9

SWEEP_RESULTS = []


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**31 - 1), st.sampled_from(["uniform", "popularity"]))
def test_criterion_9_sweep_full_boundary(n_models, seed, strategy):
    gen = np.random.default_rng(seed)
    n_items, n_inst = 40, 30
    instances = [EvaluationInstance(u, (int(gen.integers(n_items)),), int(gen.integers(n_items)))
                 for u in range(n_inst)]
    instances = [i if i.relevant not in i.prefix else
                 EvaluationInstance(i.user, ((i.relevant + 1) % n_items,), i.relevant)
                 for i in instances]
    models = []
    for j in range(n_models):
        rows = {i.user: gen.normal(size=n_items) + (j * 0.4) * np.eye(n_items)[i.relevant]
                for i in instances}
        models.append(TableScorer(f"m{j}", rows, n_items))
    counts = gen.integers(0, 50, size=n_items)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankTieWarning)
        res = sample_size_sweep(models, instances, n_items, strategy, [FULL], HR10, runs=2,
                                counts=counts, seed=seed)
        full = evaluate(models, instances, n_items, TargetSetSpec("full"), [HR10])
        direct = rank_models({m: v["HR@10"][0] for m, v in full.items()})
    ok = (res.rankings[FULL].ranks() == direct.ranks() and res.taus[FULL].tau_exact == 1
          and consistency(res.rankings[FULL], direct).consistent)
    SWEEP_RESULTS.append(ok)
    assert ok


def test_criterion_9_summary():
    # runs after the property test in file order
    ok = bool(SWEEP_RESULTS) and all(SWEEP_RESULTS)
    verdict(9, ok, f"{len(SWEEP_RESULTS)} random model sets, eta=FULL ranking equals full "
                   "evaluation with tau=1 and consistency=true")
    assert ok


# ---------------------------------------------------------------- 10

CONFIG10 = """
[experiment]
name = determinism
output_dir = out
runs = 3
eta = 10
sweep = uniform, popularity
sweep_etas = 5, FULL

[dataset]
source = cycle
cycle_items = 12
cycle_users = 40
cycle_length = 8

[model:gru]
embedding_size = 8
hidden_size = 8
max_epochs = 2
batch_size = 8
dropout = 0.2

[model:narm]
embedding_size = 8
hidden_size = 8
max_epochs = 2
batch_size = 8

[model:sasrec]
embedding_size = 8
hidden_size = 8
max_len = 8
max_epochs = 2
batch_size = 8

[model:bert4rec]
embedding_size = 8
hidden_size = 8
max_len = 8
max_epochs = 2
batch_size = 8

[model:popularity]

[model:markov]
"""


def test_criterion_10_determinism(tmp_path, monkeypatch):
    bodies = []
    for sub, workers in (("first", "1"), ("second", "3")):
        d = tmp_path / sub
        d.mkdir()
        (d / "exp.ini").write_text(CONFIG10, encoding="utf-8")
        monkeypatch.setenv("SEQREC_EVAL_WORKERS", workers)
        _, out = run_experiment(ExperimentConfig.from_file(d / "exp.ini"))
        bodies.append({n: (out / n).read_bytes() for n in
                       ("report.json", "results.csv", "runs.csv", "table.txt", "sweep.csv")})
    same = [n for n in bodies[0] if bodies[0][n] == bodies[1][n]]
    ok = len(same) == len(bodies[0])
    verdict(10, ok, f"{len(same)}/{len(bodies[0])} report files byte-identical across two runs "
                    "(1 and 3 evaluation workers)")
    assert ok
