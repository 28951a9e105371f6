"""Filtered candidate ranking shared by scoring and evaluation.

A scorer is any callable mapping an ``(n, 3)`` integer array of
(server, relation, client) indices to either an ``(n,)`` array of scores or
an ``(n, k)`` array of lexicographic keys.  Higher means more normal.
"""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .graph import IndexTriplet

CORRUPT_SUBJECT = "corrupt_subject"
CORRUPT_OBJECT = "corrupt_object"
SIDES = (CORRUPT_SUBJECT, CORRUPT_OBJECT)

Scorer = Callable[[np.ndarray], np.ndarray]


def as_keys(scores) -> np.ndarray:
    keys = np.asarray(scores, dtype=np.float64)
    if keys.ndim == 1:
        keys = keys[:, None]
    if keys.ndim != 2:
        raise ValueError(f"scores must be 1-d or 2-d, got shape {keys.shape}")
    if np.isnan(keys).any():
        raise ValueError("scores contain NaN")
    return keys


def lex_greater(keys: np.ndarray, target: np.ndarray) -> np.ndarray:
    gt = np.zeros(len(keys), dtype=bool)
    eq = np.ones(len(keys), dtype=bool)
    for col in range(keys.shape[1]):
        gt |= eq & (keys[:, col] > target[col])
        eq &= keys[:, col] == target[col]
    return gt


def lex_equal(keys: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.all(keys == target[None, :], axis=1)


def tie_rank(target_key, candidate_keys) -> float:
    """Average-tie descending rank of ``target_key``; candidates include the target."""
    keys = as_keys(candidate_keys)
    t = np.asarray(target_key, dtype=np.float64).ravel()
    if t.size != keys.shape[1]:
        raise ValueError("target key width differs from candidate keys")
    greater = int(np.sum(lex_greater(keys, t)))
    ties = int(np.sum(lex_equal(keys, t)))
    if ties < 1:
        raise ValueError("target key is not among the candidate keys")
    return 1.0 + greater + (ties - 1) / 2.0


def expand_known(known: Iterable[IndexTriplet]) -> set[IndexTriplet]:
    """Both orientations of every triplet; the graph is undirected."""
    out = set()
    for s, p, c in known:
        out.add((int(s), int(p), int(c)))
        out.add((int(c), int(p), int(s)))
    return out


def candidates(target: IndexTriplet, side: str, num_nodes: int, known: set[IndexTriplet]) -> np.ndarray:
    """Corruptions of one side over all nodes, target first.

    Self-pairs and triplets in ``known`` (in either orientation) are
    dropped; the target itself is always kept.
    """
    s, p, c = (int(v) for v in target)
    if side not in SIDES:
        raise ValueError(f"unknown side {side!r}")
    rows = [(s, p, c)]
    for v in range(num_nodes):
        cand = (v, p, c) if side == CORRUPT_SUBJECT else (s, p, v)
        if cand == (s, p, c) or cand[0] == cand[2]:
            continue
        if cand in known or (cand[2], p, cand[0]) in known:
            continue
        rows.append(cand)
    return np.array(rows, dtype=np.int64)


def filtered_rank(scorer: Scorer, target: IndexTriplet, side: str, known: set[IndexTriplet],
                  num_nodes: int) -> float:
    cands = candidates(target, side, num_nodes, known)
    keys = as_keys(scorer(cands))
    if len(keys) != len(cands):
        raise RuntimeError("scorer returned the wrong number of scores")
    return tie_rank(keys[0], keys)


def rank_score(scorer: Scorer, target: IndexTriplet, known: set[IndexTriplet], num_nodes: int) -> float:
    """1/rank over (s, p, *) plus 1/rank over (*, p, c)."""
    rank_s = filtered_rank(scorer, target, CORRUPT_OBJECT, known, num_nodes)
    rank_c = filtered_rank(scorer, target, CORRUPT_SUBJECT, known, num_nodes)
    return 1.0 / rank_s + 1.0 / rank_c
