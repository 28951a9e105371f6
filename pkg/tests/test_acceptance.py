"""Acceptance gate.  Each test records one PASS/FAIL line, printed at the end of the run."""
import math
import time
from itertools import permutations

import numpy as np
import pytest

from tripletguard import numeric as nk
from tripletguard.baselines import HeuristicScorer, Priority, RandomScorer
from tripletguard.cli import main
from tripletguard.evaluation import auc_from_scores, evaluate_scorer, generate_anomalous, hits_at_n, mrr
from tripletguard.graph import build_graph
from tripletguard.model import HyperParams, corrupt_batch, init_params, loss_and_grad, score, score_triplets, train
from tripletguard.ranking import CORRUPT_OBJECT, CORRUPT_SUBJECT, SIDES, expand_known, filtered_rank
from tripletguard.scoring import VerdictKind, rank_based_score, score_triplet
from tripletguard.synthgen import DEFAULT_SPEC, generate

from conftest import random_graph
from oracles import key_fn, pairwise_auc, sorted_rank


def test_c1_factory_tables_not_reproducible(criterion):
    criterion("C1 factory results", None,
              "not reproducible: proprietary captures; replaced by C2-C9 on synthetic data")
    pytest.skip("factory captures are proprietary")


# --- C2 -------------------------------------------------------------------


def _grad_instance(rng, num_layers):
    n = int(rng.integers(3, 11))
    r = int(rng.integers(1, 4))
    g = random_graph(rng, n, r, int(rng.integers(n, 2 * n + 1)))
    d = int(rng.choice([2, 4, 6]))
    bs = int(rng.choice([b for b in (1, 2, 3, 6) if d % b == 0]))
    hp = HyperParams(hidden_dim=d, num_layers=num_layers, block_size=bs, dropout_rate=0.0,
                     l2_weight=float(rng.choice([0.0, 0.01])), negative_rate=int(rng.integers(1, 4)))
    params = init_params(g.num_nodes, g.num_relations, hp, rng)
    pos = np.array(g.edges())
    neg = corrupt_batch(pos, hp.negative_rate, g.num_nodes, rng)
    batch = np.concatenate([pos, neg])
    labels = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
    _, grad = loss_and_grad(params, g, batch, labels, hp)

    def f(vec):
        return loss_and_grad(params.with_vector(vec), g, batch, labels, hp, need_grad=False)[0]

    fd = nk.finite_diff_gradient(f, params.to_vector(), h=1e-5)
    a = grad.to_vector()
    # relative error per parameter; denominators below 1e-6 count as 1e-6
    return float(np.max(np.abs(a - fd) / np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-6)))


def test_c2_gradient_oracle(criterion):
    start = time.perf_counter()
    rng = nk.make_rng(2024)
    worst = {"rgcn": 0.0, "distmult": 0.0}
    for k in range(20):
        worst["rgcn"] = max(worst["rgcn"], _grad_instance(rng, num_layers=1 + k % 2))
        worst["distmult"] = max(worst["distmult"], _grad_instance(rng, num_layers=0))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-4 and elapsed < 30
    criterion("C2 gradient oracle", ok,
              f"20+20 instances, max rel err rgcn {worst['rgcn']:.2e} distmult {worst['distmult']:.2e}, {elapsed:.1f}s")
    assert ok


# --- C3 -------------------------------------------------------------------


def test_c3_decoder_symmetry(criterion):
    rng = nk.make_rng(3)
    mismatches = 0
    for k in range(1000):
        d = int(rng.integers(1, 128))
        scale = 10.0 ** rng.uniform(-3, 3)
        es, rp, ec = (rng.normal(scale=scale, size=d) for _ in range(3))
        if score(es, rp, ec) != score(ec, rp, es):
            mismatches += 1
    emb, rel = rng.normal(size=(50, 16)), rng.normal(size=(4, 16))
    t = np.column_stack([rng.integers(0, 50, 1000), rng.integers(0, 4, 1000), rng.integers(0, 50, 1000)])
    vec = score_triplets(emb, rel, t)
    mismatches += int(np.sum(vec != score_triplets(emb, rel, t[:, ::-1])))
    criterion("C3 decoder symmetry", mismatches == 0, f"1000 scalar + 1000 batched pairs, {mismatches} mismatches")
    assert mismatches == 0


# --- C4 -------------------------------------------------------------------


def test_c4_metric_oracles(criterion):
    start = time.perf_counter()
    rng = nk.make_rng(4)
    auc_bad = 0
    for k in range(100):
        n_norm, n_anom = int(rng.integers(1, 40)), int(rng.integers(1, 40))
        levels = int(rng.integers(2, 30))  # few levels -> many ties
        normal = list(rng.integers(0, levels, n_norm) / 4.0)
        anomalous = list(rng.integers(0, levels, n_anom) / 4.0)
        if auc_from_scores(normal, anomalous) != pairwise_auc(normal, anomalous):
            auc_bad += 1

    rank_bad = 0
    graphs = 0
    for k in range(40):
        n = int(rng.integers(3, 9))
        g = random_graph(rng, n, 2, int(rng.integers(2, 2 * n)))
        known = expand_known(g.edges())
        table = rng.integers(0, 4, size=(n, 2, n)).astype(float)
        scorers = [HeuristicScorer(g, Priority.FIRST_ORDER_FIRST), HeuristicScorer(g, Priority.SECOND_ORDER_FIRST),
                   lambda t, table=table: table[t[:, 0], t[:, 1], t[:, 2]]]
        queries = [(int(s), int(rng.integers(2)), int(c)) for s, c in (rng.choice(n, 2, replace=False) for _ in range(5))]
        for scorer in scorers:
            key = key_fn(scorer)
            ours, oracle = [], []
            for q in queries:
                for side in SIDES:
                    ours.append(filtered_rank(scorer, q, side, known, n))
                    oracle.append(sorted_rank(key, q, side, n, known))
            rank_bad += ours != oracle
            rank_bad += not math.isclose(mrr(ours), sum(1 / r for r in oracle) / len(oracle), rel_tol=1e-12)
            for h in (1, 3, 10):
                rank_bad += hits_at_n(ours, h) != sum(r <= h for r in oracle) / len(oracle)
        graphs += 1
    elapsed = time.perf_counter() - start
    ok = auc_bad == 0 and rank_bad == 0 and elapsed < 10
    criterion("C4 metric oracles", ok,
              f"100 AUC inputs ({auc_bad} off), {graphs} graphs x 3 scorers ({rank_bad} rank/MRR/Hits off), {elapsed:.1f}s")
    assert ok


# --- C5 -------------------------------------------------------------------


def test_c5_whitelist_semantics(criterion, small_model, small_dataset):
    g = small_model.graph
    assert g.num_nodes <= 10
    ips = list(g.vocab_ips) + ["10.99.0.1"]
    rels = list(g.vocab_relations) + ["tcp/31337"]
    train_set = set(small_dataset.train)
    wrong = 0
    counts = {k: 0 for k in VerdictKind}
    for s, c in permutations(ips, 2):
        for p in rels:
            v = score_triplet(small_model, (s, p, c))
            counts[v.kind] += 1
            if (s, p, c) in train_set or (c, p, s) in train_set:
                wrong += v.kind is not VerdictKind.WHITELISTED or v.raw_score != math.inf
            elif s not in g.ip_index or c not in g.ip_index or p not in g.relation_index:
                wrong += v.kind is not VerdictKind.UNSEEN or v.raw_score != -math.inf
            else:
                wrong += v.kind is not VerdictKind.SCORED or not math.isfinite(v.raw_score)
    ok = wrong == 0 and all(counts.values())
    criterion("C5 whitelist semantics", ok,
              f"{g.num_nodes} nodes, {sum(counts.values())} triplets: " +
              ", ".join(f"{k.value} {n}" for k, n in counts.items()) + f"; {wrong} wrong")
    assert ok


# --- C6 / C7 / C9 share one synthetic run ---------------------------------


@pytest.fixture(scope="module")
def default_run():
    start = time.perf_counter()
    dataset = generate(DEFAULT_SPEC, seed=0)
    graph = build_graph(dataset)
    anomalies = generate_anomalous(dataset, 500, nk.make_rng(0))
    model = train(dataset, HyperParams())
    scorers = {
        "rgcn": model.score_indices,
        "first_order": HeuristicScorer(graph, Priority.FIRST_ORDER_FIRST),
        "second_order": HeuristicScorer(graph, Priority.SECOND_ORDER_FIRST),
        "random": RandomScorer(nk.make_rng(1)),
    }
    rows = {m: evaluate_scorer(s, dataset, graph, anomalies, m) for m, s in scorers.items()}
    return dict(dataset=dataset, model=model, rows=rows, elapsed=time.perf_counter() - start)


def test_c6_synthetic_anomaly_auc(criterion, default_run):
    rows, elapsed = default_run["rows"], default_run["elapsed"]
    auc = {m: r.auc_score_based for m, r in rows.items()}
    ok = (auc["rgcn"] >= 0.85 and auc["rgcn"] > auc["first_order"] and auc["rgcn"] > auc["second_order"]
          and 0.40 <= auc["random"] <= 0.60 and elapsed < 300)
    s = default_run["dataset"].summary()
    criterion("C6 synthetic score-based AUC", ok,
              f"{s['ip_addresses']} devices, {s['training_triplets']}/{s['test_triplets']} train/test, 500 anomalies; "
              + ", ".join(f"{m} {v:.3f}" for m, v in auc.items()) + f"; {elapsed:.0f}s")
    assert ok


def test_c7_ordering_and_training_loss(criterion, default_run):
    rows, log = default_run["rows"], default_run["model"].training_log
    ratio = rows["rgcn"].mrr / rows["random"].mrr
    ok = ratio >= 10 and log[-1] < 0.5 * log[0]
    criterion("C7 MRR ordering and loss drop", ok,
              f"MRR rgcn {rows['rgcn'].mrr:.3f} random {rows['random'].mrr:.3f} (x{ratio:.1f}); "
              f"loss {log[0]:.4f} -> {log[-1]:.4f}")
    assert ok


def test_c9_rank_score_bounds(criterion, default_run):
    model = default_run["model"]
    g = model.graph
    rng = nk.make_rng(9)
    test_idx = [g.to_index(t) for t in default_run["dataset"].test]
    others = [(i, p, j) for i, j in permutations(range(g.num_nodes), 2) for p in range(g.num_relations)
              if (i, p, j) not in g.whitelist]
    pick = rng.choice(len(others), size=1000 - len(test_idx), replace=False)
    queries = test_idx + [others[k] for k in pick]
    known = expand_known(g.whitelist)
    bad, top = 0, 0
    for t in queries:
        assert score_triplet(model, (g.vocab_ips[t[0]], g.vocab_relations[t[1]], g.vocab_ips[t[2]])).kind is VerdictKind.SCORED
        value = rank_based_score(model, t)
        both_first = (filtered_rank(model.score_indices, t, CORRUPT_OBJECT, known, g.num_nodes) == 1.0
                      and filtered_rank(model.score_indices, t, CORRUPT_SUBJECT, known, g.num_nodes) == 1.0)
        bad += not (0.0 < value <= 2.0) or ((value == 2.0) != both_first)
        top += value == 2.0
    ok = bad == 0 and len(queries) == 1000 and 0 < top < 1000
    criterion("C9 rank-based score bounds", ok, f"1000 scored triplets, {top} at 2.0, {bad} violations")
    assert ok


# --- C8 -------------------------------------------------------------------


def _pipeline(workdir):
    workdir.mkdir()
    ds, model, res = workdir / "ds.txt", workdir / "model.txt", workdir / "results.tsv"
    assert main(["synth", "--output", str(ds), "--seed", "0"]) == 0
    assert main(["train", "--input", str(ds), "--output", str(model), "--seed", "7", "--epochs", "40"]) == 0
    assert main(["eval", "--input", str(ds), "--output", str(res), "--seed", "7", "--epochs", "40"]) == 0
    return [p.read_bytes() for p in (model, res, res.with_suffix(".json"))]


def test_c8_determinism(criterion, tmp_path, capsys):
    first = _pipeline(tmp_path / "run1")
    second = _pipeline(tmp_path / "run2")
    capsys.readouterr()
    same = [a == b for a, b in zip(first, second)]
    ok = all(same)
    criterion("C8 determinism", ok, "snapshot, results TSV, results JSON byte-identical: " + str(same))
    assert ok
