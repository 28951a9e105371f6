"""Undirected labelled multigraph over integer node and relation indices."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np

from .ingest import Triplet, TripletDataset

IndexTriplet = tuple[int, int, int]


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MultiGraph:
    vocab_ips: tuple[str, ...]
    vocab_relations: tuple[str, ...]
    # neighbors[p][i] -> sorted tuple of j with (i, p, j) an edge
    neighbors: tuple[tuple[tuple[int, ...], ...], ...]
    whitelist: frozenset[IndexTriplet]

    @property
    def num_nodes(self) -> int:
        return len(self.vocab_ips)

    @property
    def num_relations(self) -> int:
        return len(self.vocab_relations)

    def neighbors_of(self, i: int, p: int) -> tuple[int, ...]:
        return self.neighbors[p][i]

    def norm(self, i: int, p: int) -> int:
        n = len(self.neighbors[p][i])
        if n == 0:
            raise KeyError(f"node {i} has no neighbours under relation {p}")
        return n

    @cached_property
    def ip_index(self) -> dict[str, int]:
        return {ip: k for k, ip in enumerate(self.vocab_ips)}

    @cached_property
    def relation_index(self) -> dict[str, int]:
        return {r: k for k, r in enumerate(self.vocab_relations)}

    @cached_property
    def norm_adjacency(self) -> np.ndarray:
        """(R, N, N) array with entry [p, i, j] = 1/C_{i,p} when j is a p-neighbour of i."""
        adj = np.zeros((self.num_relations, self.num_nodes, self.num_nodes))
        for p, rows in enumerate(self.neighbors):
            for i, nbrs in enumerate(rows):
                if nbrs:
                    adj[p, i, list(nbrs)] = 1.0 / len(nbrs)
        return adj

    @property
    def num_directed_edges(self) -> int:
        return sum(len(n) for rows in self.neighbors for n in rows)

    def edges(self) -> list[IndexTriplet]:
        """Each undirected edge once, as (i, p, j) with i < j."""
        return sorted((i, p, j) for (i, p, j) in self.whitelist if i < j)

    def contains(self, triplet: IndexTriplet) -> bool:
        s, p, c = triplet
        if not (0 <= s < self.num_nodes and 0 <= c < self.num_nodes and 0 <= p < self.num_relations):
            raise IndexError(f"triplet {triplet} out of range")
        return (s, p, c) in self.whitelist

    def to_index(self, triplet: Triplet) -> IndexTriplet:
        s, p, c = triplet
        return self.ip_index[s], self.relation_index[p], self.ip_index[c]


def graph_from_index_triplets(
    vocab_ips: Iterable[str], vocab_relations: Iterable[str], triplets: Iterable[IndexTriplet]
) -> MultiGraph:
    vocab_ips = tuple(vocab_ips)
    vocab_relations = tuple(vocab_relations)
    n, r = len(vocab_ips), len(vocab_relations)
    adj = [[set() for _ in range(n)] for _ in range(r)]
    whitelist = set()
    for s, p, c in triplets:
        if not (0 <= s < n and 0 <= c < n and 0 <= p < r):
            raise GraphError(f"triplet {(s, p, c)} references an unknown vocabulary entry")
        if s == c:
            raise GraphError(f"self-loop triplet {(s, p, c)}")
        adj[p][s].add(c)
        adj[p][c].add(s)
        whitelist.add((s, p, c))
        whitelist.add((c, p, s))
    neighbors = tuple(tuple(tuple(sorted(nb)) for nb in rows) for rows in adj)
    return MultiGraph(vocab_ips, vocab_relations, neighbors, frozenset(whitelist))


def build_graph(dataset: TripletDataset) -> MultiGraph:
    ip_index = {ip: k for k, ip in enumerate(dataset.vocab_ips)}
    rel_index = {r: k for k, r in enumerate(dataset.vocab_relations)}
    idx = []
    for s, p, c in dataset.train:
        try:
            idx.append((ip_index[s], rel_index[p], ip_index[c]))
        except KeyError as exc:
            raise GraphError(f"training triplet {(s, p, c)} uses {exc.args[0]!r}, absent from the vocabulary") from None
    if not idx:
        raise GraphError("cannot build a graph without training triplets")
    return graph_from_index_triplets(dataset.vocab_ips, dataset.vocab_relations, idx)
