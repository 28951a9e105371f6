"""Link-prediction and anomaly-distinction metrics, and the experiment runner."""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import numeric as nk
from .baselines import HeuristicScorer, Priority, RandomScorer, distmult_train
from .graph import IndexTriplet, MultiGraph, build_graph
from .ingest import Triplet, TripletDataset
from .model import HyperParams, train
from .ranking import (
    CORRUPT_OBJECT,
    CORRUPT_SUBJECT,
    as_keys,
    candidates,
    expand_known,
    filtered_rank,
    rank_score,
)

log = logging.getLogger(__name__)

METHODS = ("rgcn", "distmult", "first_order", "second_order", "random")


class EvaluationError(RuntimeError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RankQuery:
    target: IndexTriplet
    side: str
    filtered_candidates: tuple[IndexTriplet, ...]
    target_rank: float


class Label(str, enum.Enum):
    NORMAL = "normal"
    ANOMALOUS = "anomalous"


@dataclass(frozen=True)
class LabeledScore:
    score: object  # float (may be +-inf) or a tuple of floats compared lexicographically
    label: Label


def rank_query(scorer, target: IndexTriplet, side: str, known: set, num_nodes: int) -> RankQuery:
    cands = candidates(target, side, num_nodes, known)
    rank = filtered_rank(scorer, target, side, known, num_nodes)
    return RankQuery(tuple(target), side, tuple(map(tuple, cands.tolist())), rank)


def mrr(queries: Sequence) -> float:
    ranks = _ranks(queries)
    return float(np.mean(1.0 / ranks))


def hits_at_n(queries: Sequence, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    ranks = _ranks(queries)
    return float(np.mean(ranks <= n))


def _ranks(queries) -> np.ndarray:
    if len(queries) == 0:
        raise ValueError("no queries")
    return np.array([q.target_rank if isinstance(q, RankQuery) else float(q) for q in queries])


def _ordinals(scores: Sequence) -> np.ndarray:
    keys = as_keys(np.array([s if isinstance(s, (tuple, list)) else (s,) for s in scores], dtype=np.float64))
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    return inverse.ravel()


def roc_auc(samples: Iterable[LabeledScore]) -> float:
    """P(anomalous scores below normal), ties counted one half.

    Computed from mid-ranks (Mann-Whitney U); lower scores mean anomalous.
    """
    samples = list(samples)
    labels = np.array([Label(s.label) is Label.NORMAL for s in samples], dtype=bool)
    n_norm, n_anom = int(labels.sum()), int((~labels).sum())
    if n_norm == 0 or n_anom == 0:
        raise ValueError("roc_auc needs both normal and anomalous samples")
    ords = _ordinals([s.score for s in samples])
    # mid-ranks (1-based) of the ordinal levels
    counts = np.bincount(ords)
    upper = np.cumsum(counts)
    mid = upper - (counts - 1) / 2.0
    rank_sum = float(np.sum(mid[ords[labels]]))
    u = rank_sum - n_norm * (n_norm + 1) / 2.0
    return u / (n_norm * n_anom)


def auc_from_scores(normal: Sequence, anomalous: Sequence) -> float:
    return roc_auc(
        [LabeledScore(_plain(s), Label.NORMAL) for s in normal]
        + [LabeledScore(_plain(s), Label.ANOMALOUS) for s in anomalous]
    )


def _plain(s):
    arr = np.asarray(s, dtype=np.float64)
    return float(arr) if arr.ndim == 0 else tuple(float(v) for v in arr.ravel())


def generate_anomalous(dataset: TripletDataset, count: int, rng: np.random.Generator,
                       max_attempts: Optional[int] = None) -> list[Triplet]:
    """Random (server, relation, client) triplets absent from train and test.

    Addresses and relations are drawn uniformly from the training vocabulary;
    draws already present (either orientation) or already generated are
    rejected and redrawn.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    ips, rels = dataset.vocab_ips, dataset.vocab_relations
    if count and len(ips) < 2:
        raise GenerationError("need at least two addresses")
    taken = set()
    for s, p, c in dataset.train + dataset.test:
        taken.add((s, p, c))
        taken.add((c, p, s))
    budget = max_attempts if max_attempts is not None else 1000 * count + 10000
    out: list[Triplet] = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > budget:
            raise GenerationError(f"only {len(out)} of {count} anomalous triplets found in {budget} attempts")
        i, j = rng.choice(len(ips), size=2, replace=False)
        t = (ips[i], rels[int(rng.integers(len(rels)))], ips[j])
        if t in taken:
            continue
        taken.add(t)
        taken.add((t[2], t[1], t[0]))
        out.append(t)
    return out


@dataclass
class ExperimentConfig:
    anomaly_count: int = 500
    seed: int = 0
    rgcn: HyperParams = field(default_factory=HyperParams)
    distmult: HyperParams = field(default_factory=HyperParams.distmult)
    max_attempts: Optional[int] = None


@dataclass
class ResultRow:
    method: str
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    auc_score_based: float
    auc_rank_based: float


def _framework_keys(scorer, graph: MultiGraph, triplets: np.ndarray) -> np.ndarray:
    """Whitelisted triplets get +inf keys; everything here is in vocabulary."""
    keys = as_keys(scorer(triplets)).copy()
    for row, t in enumerate(map(tuple, triplets.tolist())):
        if t in graph.whitelist:
            keys[row] = math.inf
    return keys


def build_scorer(method: str, dataset: TripletDataset, graph: MultiGraph, config: ExperimentConfig, rng):
    if method == "rgcn":
        return train(dataset, config.rgcn).score_indices
    if method == "distmult":
        return distmult_train(dataset, config.distmult).score_indices
    if method == "first_order":
        return HeuristicScorer(graph, Priority.FIRST_ORDER_FIRST)
    if method == "second_order":
        return HeuristicScorer(graph, Priority.SECOND_ORDER_FIRST)
    if method == "random":
        return RandomScorer(rng)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def evaluate_scorer(scorer, dataset: TripletDataset, graph: MultiGraph, anomalies: Sequence[Triplet],
                    method: str = "") -> ResultRow:
    to_idx = graph.to_index
    test = np.array([to_idx(t) for t in dataset.test], dtype=np.int64).reshape(-1, 3)
    anom = np.array([to_idx(t) for t in anomalies], dtype=np.int64).reshape(-1, 3)
    known = expand_known(to_idx(t) for t in dataset.train + dataset.test)

    ranks = []
    for t in map(tuple, test.tolist()):
        for side in (CORRUPT_SUBJECT, CORRUPT_OBJECT):
            ranks.append(filtered_rank(scorer, t, side, known, graph.num_nodes))

    norm_keys = _framework_keys(scorer, graph, test)
    anom_keys = _framework_keys(scorer, graph, anom)
    auc_score = auc_from_scores(list(norm_keys), list(anom_keys))

    # candidates() always keeps the query itself, so the same known set serves every query
    def rs(t):
        return rank_score(scorer, t, known, graph.num_nodes)

    auc_rank = auc_from_scores([rs(t) for t in map(tuple, test.tolist())], [rs(t) for t in map(tuple, anom.tolist())])
    return ResultRow(method, mrr(ranks), hits_at_n(ranks, 1), hits_at_n(ranks, 3), hits_at_n(ranks, 10),
                     auc_score, auc_rank)


def run_experiment(dataset: TripletDataset, methods: Sequence[str] = METHODS,
                   config: Optional[ExperimentConfig] = None) -> list[ResultRow]:
    config = config or ExperimentConfig()
    if not dataset.test:
        raise EvaluationError("dataset has no test triplets")
    graph = build_graph(dataset)
    anomalies = generate_anomalous(dataset, config.anomaly_count, nk.make_rng(config.seed), config.max_attempts)
    if not anomalies:
        raise EvaluationError("anomaly_count must be positive")
    rows = []
    for k, method in enumerate(methods):
        rng = nk.make_rng(config.seed + 1 + k)
        scorer = build_scorer(method, dataset, graph, config, rng)
        rows.append(evaluate_scorer(scorer, dataset, graph, anomalies, method))
        log.info("%s: %s", method, rows[-1])
    return rows


RESULT_COLUMNS = ("method", "mrr", "hits1", "hits3", "hits10", "auc_score_based", "auc_rank_based")


def results_to_tsv(rows: Sequence[ResultRow]) -> str:
    lines = ["\t".join(RESULT_COLUMNS)]
    for r in rows:
        d = asdict(r)
        lines.append("\t".join(d["method"] if c == "method" else repr(d[c]) for c in RESULT_COLUMNS))
    return "\n".join(lines) + "\n"


def results_to_json(rows: Sequence[ResultRow]) -> str:
    return json.dumps({"columns": list(RESULT_COLUMNS), "results": [asdict(r) for r in rows]}, indent=2) + "\n"
