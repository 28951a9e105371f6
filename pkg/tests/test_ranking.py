import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tripletguard.baselines import HeuristicScorer, Priority
from tripletguard.ranking import (
    CORRUPT_OBJECT,
    CORRUPT_SUBJECT,
    SIDES,
    candidates,
    expand_known,
    filtered_rank,
    rank_score,
    tie_rank,
)

from conftest import random_graph
from oracles import enumerate_candidates, key_fn, sorted_rank


def const_scorer(value=0.0):
    return lambda t: np.full(len(t), value)


def test_tie_rank_examples():
    assert tie_rank(5.0, [5.0, 1.0, 2.0]) == 1.0
    assert tie_rank(1.0, [1.0, 1.0, 1.0, 1.0]) == 2.5  # (k+1)/2
    assert tie_rank((1.0, 0.2), [(1.0, 0.2), (1.0, 0.9), (0.5, 9.0)]) == 2.0
    with pytest.raises(ValueError):
        tie_rank(3.0, [1.0, 2.0])
    with pytest.raises(ValueError):
        tie_rank(float("nan"), [float("nan")])


def test_candidates_filtering():
    known = expand_known([(0, 0, 1), (2, 0, 3)])
    c = candidates((0, 0, 1), CORRUPT_OBJECT, 5, known)
    # target first; self pair (0,0,0) gone; nothing else known on this side
    assert c.tolist() == [[0, 0, 1], [0, 0, 2], [0, 0, 3], [0, 0, 4]]
    c = candidates((1, 0, 2), CORRUPT_SUBJECT, 5, known)
    # (3,0,2) is the reverse of known (2,0,3)
    assert c.tolist() == [[1, 0, 2], [0, 0, 2], [4, 0, 2]]
    with pytest.raises(ValueError):
        candidates((0, 0, 1), "sideways", 5, known)


def test_unique_max_ranks_first():
    def scorer(t):
        return np.where(t[:, 2] == 3, 10.0, 0.0)

    assert filtered_rank(scorer, (0, 0, 3), CORRUPT_OBJECT, set(), 6) == 1.0


def test_all_equal_scores_give_middle_rank():
    # 5 candidates (6 nodes minus the self pair) tie -> (5 + 1) / 2
    assert filtered_rank(const_scorer(), (0, 0, 3), CORRUPT_OBJECT, set(), 6) == 3.0


def test_rank_score_bounds_examples():
    def top(t):
        return np.where((t[:, 0] == 0) & (t[:, 2] == 1), 1.0, 0.0)

    assert rank_score(top, (0, 0, 1), set(), 5) == 2.0

    def bottom(t):
        return np.where((t[:, 0] == 0) & (t[:, 2] == 1), -1.0, 0.0)

    # last among k = 4 candidates on each side
    assert rank_score(bottom, (0, 0, 1), set(), 5) == 2.0 / 4


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(3, 8), st.sampled_from(list(Priority)))
def test_filtered_rank_matches_sort_oracle(seed, n, priority):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, 2, int(rng.integers(1, 2 * n)))
    scorer = HeuristicScorer(g, priority)
    known = expand_known(g.edges())
    key = key_fn(scorer)
    for _ in range(4):
        s, c = rng.choice(n, size=2, replace=False)
        target = (int(s), int(rng.integers(2)), int(c))
        for side in SIDES:
            assert candidates(target, side, n, known).tolist() == [list(t) for t in enumerate_candidates(target, side, n, known)]
            assert filtered_rank(scorer, target, side, known, n) == sorted_rank(key, target, side, n, known)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(3, 8))
def test_filtered_rank_with_tied_real_scores(seed, n):
    # scores from a small alphabet force plenty of ties
    table = np.random.default_rng(seed).integers(0, 3, size=(n, n)).astype(float)

    def scorer(t):
        return table[t[:, 0], t[:, 2]]

    rng = np.random.default_rng(seed + 1)
    known = expand_known([(0, 0, 1)])
    s, c = rng.choice(n, size=2, replace=False)
    for side in SIDES:
        target = (int(s), 0, int(c))
        assert filtered_rank(scorer, target, side, known, n) == sorted_rank(key_fn(scorer), target, side, n, known)
