"""Comparison scorers: plain DistMult, proximity heuristics and uniform random."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import total_ordering
from typing import Optional

import numpy as np

from .graph import IndexTriplet, MultiGraph
from .ingest import TripletDataset
from .model import HyperParams, TrainedModel, train


def distmult_train(dataset: TripletDataset, hp: Optional[HyperParams] = None) -> TrainedModel:
    """Same loop as the R-GCN trainer with zero convolution layers."""
    hp = hp or HyperParams.distmult()
    if hp.num_layers != 0:
        raise ValueError("DistMult uses no convolution layers")
    return train(dataset, hp)


def proximity_profile(graph: MultiGraph) -> np.ndarray:
    """N x N matrix; entry [i, j] counts the relations linking i and j."""
    prof = np.zeros((graph.num_nodes, graph.num_nodes))
    for rows in graph.neighbors:
        for i, nbrs in enumerate(rows):
            if nbrs:
                prof[i, list(nbrs)] += 1.0
    return prof


def _check(graph: MultiGraph, *nodes: int) -> None:
    for v in nodes:
        if not 0 <= v < graph.num_nodes:
            raise IndexError(f"node {v} out of range")


def first_order(graph: MultiGraph, i: int, j: int) -> float:
    _check(graph, i, j)
    return float(sum(1 for rows in graph.neighbors if j in rows[i]))


def _cosine_masked(si: np.ndarray, sj: np.ndarray, i: int, j: int) -> float:
    a = si.copy()
    b = sj.copy()
    a[[i, j]] = 0.0
    b[[i, j]] = 0.0
    na, nb = float(np.dot(a, a)), float(np.dot(b, b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b)) / (np.sqrt(na) * np.sqrt(nb))


def second_order(graph: MultiGraph, i: int, j: int, profile: Optional[np.ndarray] = None) -> float:
    """Cosine similarity of the two proximity rows with entries i and j zeroed."""
    _check(graph, i, j)
    prof = proximity_profile(graph) if profile is None else profile
    return _cosine_masked(prof[i], prof[j], i, j)


def second_order_matrix(profile: np.ndarray) -> np.ndarray:
    # profile has a zero diagonal, so masking i and j leaves the dot product
    # unchanged and only removes prof[i, j]^2 from each squared norm
    dots = profile @ profile.T
    sq = np.sum(profile * profile, axis=1)
    pair_sq = profile * profile
    na = sq[:, None] - pair_sq
    nb = sq[None, :] - pair_sq.T
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = dots / (np.sqrt(na) * np.sqrt(nb))
    cos[(na == 0.0) | (nb == 0.0)] = 0.0
    np.fill_diagonal(cos, 0.0)
    return cos


class Priority(str, enum.Enum):
    FIRST_ORDER_FIRST = "first_order_first"
    SECOND_ORDER_FIRST = "second_order_first"


@total_ordering
@dataclass(frozen=True)
class HeuristicScore:
    """Lexicographic (primary, secondary) score, last tie-break on the triplet."""

    primary: float
    secondary: float
    triplet: IndexTriplet = (0, 0, 0)

    @property
    def combined(self) -> tuple[float, float]:
        return (self.primary, self.secondary)

    def _key(self):
        s, p, c = self.triplet
        return (self.primary, self.secondary, (min(s, c), p, max(s, c)))

    def __lt__(self, other: "HeuristicScore") -> bool:
        return self._key() < other._key()

    def __eq__(self, other) -> bool:
        return isinstance(other, HeuristicScore) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())


def heuristic_score(graph: MultiGraph, triplet: IndexTriplet, priority, profile: Optional[np.ndarray] = None) -> HeuristicScore:
    s, _, c = triplet
    prof = proximity_profile(graph) if profile is None else profile
    fo = float(prof[s, c])
    so = _cosine_masked(prof[s], prof[c], s, c)
    if Priority(priority) is Priority.FIRST_ORDER_FIRST:
        return HeuristicScore(fo, so, tuple(triplet))
    return HeuristicScore(so, fo, tuple(triplet))


class HeuristicScorer:
    """Vectorised heuristic keys for ranking; the relation is ignored."""

    def __init__(self, graph: MultiGraph, priority):
        self.priority = Priority(priority)
        self.profile = proximity_profile(graph)
        self.second = second_order_matrix(self.profile)
        self.num_nodes = graph.num_nodes

    def __call__(self, triplets) -> np.ndarray:
        t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
        fo = self.profile[t[:, 0], t[:, 2]]
        so = self.second[t[:, 0], t[:, 2]]
        if self.priority is Priority.FIRST_ORDER_FIRST:
            return np.column_stack([fo, so])
        return np.column_stack([so, fo])


def random_score(rng: np.random.Generator) -> float:
    return float(rng.random())


class RandomScorer:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def __call__(self, triplets) -> np.ndarray:
        n = len(np.asarray(triplets).reshape(-1, 3))
        return self.rng.random(n)
