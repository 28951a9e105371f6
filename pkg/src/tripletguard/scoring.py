"""Whitelist-aware scoring of communication triplets."""
from __future__ import annotations

import enum
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .graph import IndexTriplet
from .ingest import Triplet
from .model import TrainedModel
from .ranking import expand_known, rank_score


class VerdictKind(str, enum.Enum):
    WHITELISTED = "WHITELISTED"
    UNSEEN = "UNSEEN"
    SCORED = "SCORED"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    raw_score: float
    rank_score: Optional[float] = None

    def __post_init__(self):
        expected = {VerdictKind.WHITELISTED: math.inf, VerdictKind.UNSEEN: -math.inf}
        if self.kind in expected:
            if self.raw_score != expected[self.kind]:
                raise ValueError(f"{self.kind.value} verdict must carry {expected[self.kind]}")
        elif not math.isfinite(self.raw_score):
            raise ValueError("scored verdicts carry a finite score")


def lookup(model: TrainedModel, triplet: Triplet) -> Optional[IndexTriplet]:
    """Index form of ``triplet``, or None when any element is out of vocabulary."""
    s, p, c = triplet
    g = model.graph
    if s not in g.ip_index or c not in g.ip_index or p not in g.relation_index:
        return None
    return g.ip_index[s], g.relation_index[p], g.ip_index[c]


def score_triplet(model: TrainedModel, triplet: Triplet) -> Verdict:
    s, p, c = triplet
    if s == c:
        raise ValueError(f"server and client are both {s}")
    idx = lookup(model, triplet)
    if idx is None:
        return Verdict(VerdictKind.UNSEEN, -math.inf)
    if idx in model.graph.whitelist:
        return Verdict(VerdictKind.WHITELISTED, math.inf)
    raw = float(model.score_indices(np.array([idx]))[0])
    return Verdict(VerdictKind.SCORED, raw)


def model_scorer(model: TrainedModel):
    return model.score_indices


def rank_based_score(model: TrainedModel, triplet, known: Optional[Iterable[IndexTriplet]] = None) -> float:
    """Filtered 1/rank_s + 1/rank_c of a non-whitelisted, in-vocabulary triplet.

    ``known`` defaults to the model's whitelist.  Ranks average over ties.
    """
    if isinstance(triplet[0], str):
        idx = lookup(model, triplet)
        if idx is None:
            raise ValueError(f"{triplet} is outside the model vocabulary")
    else:
        idx = tuple(int(v) for v in triplet)
    known_set = expand_known(model.graph.whitelist if known is None else known)
    if idx in known_set:
        raise ValueError(f"query {idx} is itself in the known set")
    return rank_score(model_scorer(model), idx, known_set, model.graph.num_nodes)


@dataclass
class ScoreReport:
    triplets: list[Triplet] = field(default_factory=list)
    verdicts: list[Optional[Verdict]] = field(default_factory=list)
    errors: list[tuple[int, str]] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        c = Counter(v.kind.value for v in self.verdicts if v is not None)
        out = {k.value: c.get(k.value, 0) for k in VerdictKind}
        out["ERROR"] = len(self.errors)
        return out

    def to_tsv(self) -> str:
        buf = io.StringIO()
        buf.write("server_ip\trelation\tclient_ip\tverdict\traw_score\trank_score\n")
        for t, v in zip(self.triplets, self.verdicts):
            if v is None:
                continue
            s, p, c = t
            rank = "" if v.rank_score is None else repr(v.rank_score)
            buf.write(f"{s}\t{p}\t{c}\t{v.kind.value}\t{format_score(v.raw_score)}\t{rank}\n")
        return buf.getvalue()


def format_score(x: float) -> str:
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    return repr(float(x))


def batch_score(model: TrainedModel, triplets: Iterable[Triplet], with_rank: bool = True) -> ScoreReport:
    """One verdict per input in order; bad rows land in ``errors`` and get no verdict."""
    report = ScoreReport()
    known = expand_known(model.graph.whitelist)
    for k, t in enumerate(triplets):
        t = tuple(t)
        report.triplets.append(t)
        try:
            if len(t) != 3:
                raise ValueError(f"expected 3 fields, got {len(t)}")
            v = score_triplet(model, t)
        except ValueError as exc:
            report.errors.append((k, str(exc)))
            report.verdicts.append(None)
            continue
        if with_rank and v.kind is VerdictKind.SCORED:
            idx = lookup(model, t)
            rs = rank_score(model_scorer(model), idx, known, model.graph.num_nodes)
            v = Verdict(v.kind, v.raw_score, rs)
        report.verdicts.append(v)
    return report
