"""Relational graph-convolution autoencoder with a DistMult decoder.

The encoder stacks relational convolutions whose per-relation weights are
block-diagonal; the decoder scores (server, relation, client) as
``sum_k e_s[k] * r_p[k] * e_c[k]``.  Gradients are derived by hand and
checked against central differences in the test suite.  With ``num_layers=0``
the encoder is the identity on the embedding table, which is plain DistMult.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import numeric as nk
from .graph import IndexTriplet, MultiGraph, build_graph
from .ingest import TripletDataset

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class HyperParams:
    hidden_dim: int = 100
    num_layers: int = 2
    block_size: int = 10
    dropout_rate: float = 0.2
    l2_weight: float = 0.0
    learning_rate: float = 0.01
    negative_rate: int = 10
    epochs: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim <= 0 or self.block_size <= 0:
            raise ValueError("hidden_dim and block_size must be positive")
        if self.num_layers > 0 and self.hidden_dim % self.block_size:
            raise ValueError(f"block_size {self.block_size} does not divide hidden_dim {self.hidden_dim}")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.l2_weight < 0 or self.learning_rate <= 0:
            raise ValueError("l2_weight must be >= 0 and learning_rate > 0")
        if self.negative_rate <= 0 or self.epochs < 0:
            raise ValueError("negative_rate must be positive and epochs non-negative")

    @classmethod
    def rgcn(cls, **overrides) -> "HyperParams":
        return cls(**overrides)

    @classmethod
    def distmult(cls, **overrides) -> "HyperParams":
        base = dict(hidden_dim=50, num_layers=0, dropout_rate=0.0, l2_weight=0.01, learning_rate=0.02, negative_rate=10)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        types = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in types:
                raise ValueError(f"unknown hyperparameter {k!r}")
            out[k] = float(v) if types[k] in ("float", float) else int(v)
        return cls(**out)


@dataclass
class ModelParameters:
    embedding: np.ndarray  # (N, d) layer-0 node features
    blocks: list[np.ndarray]  # per layer: (R, d/bs, bs, bs)
    self_loops: list[np.ndarray]  # per layer: (d, d)
    relations: np.ndarray  # (R, d) decoder diagonals

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        out = [("embedding", self.embedding)]
        for layer, (b, w0) in enumerate(zip(self.blocks, self.self_loops), start=1):
            out.append((f"layer{layer}.blocks", b))
            out.append((f"layer{layer}.self_loop", w0))
        out.append(("relations", self.relations))
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate([t.ravel() for _, t in self.tensors()])

    def with_vector(self, vec: np.ndarray) -> "ModelParameters":
        arrays, pos = [], 0
        for _, t in self.tensors():
            arrays.append(np.array(vec[pos:pos + t.size], dtype=np.float64).reshape(t.shape))
            pos += t.size
        if pos != len(vec):
            raise ValueError("parameter vector has the wrong length")
        nl = len(self.blocks)
        return ModelParameters(
            embedding=arrays[0],
            blocks=arrays[1:1 + 2 * nl:2],
            self_loops=arrays[2:2 + 2 * nl:2],
            relations=arrays[-1],
        )

    def copy(self) -> "ModelParameters":
        return self.with_vector(self.to_vector())

    def sq_norm(self) -> float:
        return float(sum(np.sum(t * t) for _, t in self.tensors()))


def init_params(num_nodes: int, num_relations: int, hp: HyperParams, rng: np.random.Generator) -> ModelParameters:
    d, bs = hp.hidden_dim, hp.block_size
    embedding = nk.glorot_init(num_nodes, d, rng)
    blocks, self_loops = [], []
    for _ in range(hp.num_layers):
        nb = d // bs
        b = np.empty((num_relations, nb, bs, bs))
        for p in range(num_relations):
            for k in range(nb):
                b[p, k] = nk.glorot_init(bs, bs, rng)
        blocks.append(b)
        self_loops.append(nk.glorot_init(d, d, rng))
    relations = nk.glorot_init(num_relations, d, rng)
    return ModelParameters(embedding, blocks, self_loops, relations)


# ---------------------------------------------------------------------------
# encoder


def _aggregate(adj: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Per-relation normalised neighbour sums: out[p] = adj[p] @ h."""
    out = np.zeros((adj.shape[0], adj.shape[1], h.shape[1]))
    for k in range(adj.shape[2]):
        out += adj[:, :, k, None] * h[None, k, :]
    return out


def _scatter_neighbours(adj: np.ndarray, dm: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`_aggregate`: sum over p of adj[p].T @ dm[p]."""
    out = np.zeros((adj.shape[0], adj.shape[2], dm.shape[2]))
    for i in range(adj.shape[1]):
        out += adj[:, i, :, None] * dm[:, i, None, :]
    return out.sum(axis=0)


def _apply_blocks(blocks: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Sum over relations of the block-diagonal transform of m[p]."""
    r, nb, bs, _ = blocks.shape
    mb = m.reshape(r, m.shape[1], nb, bs)
    out = np.zeros_like(mb)
    for k in range(bs):
        out += mb[:, :, :, k, None] * blocks[:, None, :, :, k]
    return out.sum(axis=0).reshape(m.shape[1], nb * bs)


def _forward(graph: MultiGraph, params: ModelParameters, rate: float, rng: Optional[np.random.Generator]):
    adj = graph.norm_adjacency
    h = params.embedding
    cache = []
    n_layers = len(params.blocks)
    for layer in range(n_layers):
        mask = nk.dropout_mask(h.shape, rate, rng) if rng is not None and rate > 0 else None
        x = h * mask if mask is not None else h
        m = _aggregate(adj, x)
        z = _apply_blocks(params.blocks[layer], m) + nk.matmul(x, params.self_loops[layer].T)
        last = layer == n_layers - 1
        h = z if last else nk.relu(z)
        cache.append((mask, x, m, z, last))
    return h, cache


def encode(graph: MultiGraph, params: ModelParameters, dropout_rng: Optional[np.random.Generator] = None,
           dropout_rate: float = 0.0) -> np.ndarray:
    """Node embeddings; dropout on layer inputs only when ``dropout_rng`` is given."""
    if params.embedding.shape[0] != graph.num_nodes:
        raise ValueError("embedding table does not match the graph")
    h, _ = _forward(graph, params, dropout_rate, dropout_rng)
    return h


def _backward(graph: MultiGraph, params: ModelParameters, cache, d_out: np.ndarray):
    adj = graph.norm_adjacency
    r, n, _ = adj.shape
    g_blocks, g_loops = [None] * len(cache), [None] * len(cache)
    dh = d_out
    for layer in reversed(range(len(cache))):
        mask, x, m, z, last = cache[layer]
        dz = dh if last else dh * (z > 0)
        blocks = params.blocks[layer]
        _, nb, bs, _ = blocks.shape
        g_loops[layer] = nk.matmul(dz.T, x)
        dx = nk.matmul(dz, params.self_loops[layer])

        dzb = dz.reshape(n, nb, bs)
        mb = m.reshape(r, n, nb, bs)
        gb = np.zeros_like(blocks)
        for i in range(n):
            gb += dzb[None, i, :, :, None] * mb[:, i, :, None, :]
        g_blocks[layer] = gb
        dm = np.zeros_like(mb)
        for j in range(bs):
            dm += dzb[None, :, :, j, None] * blocks[:, None, :, j, :]
        dx = dx + _scatter_neighbours(adj, dm.reshape(r, n, nb * bs))
        dh = dx * mask if mask is not None else dx
    return dh, g_blocks, g_loops


# ---------------------------------------------------------------------------
# decoder


def score(e_s, r_p, e_c) -> float:
    e_s, r_p, e_c = (np.asarray(v, dtype=np.float64) for v in (e_s, r_p, e_c))
    if not (e_s.shape == r_p.shape == e_c.shape) or e_s.ndim != 1:
        raise ValueError("score needs three vectors of equal length")
    # e_s * e_c first: the product is commutative, so f(s,p,c) == f(c,p,s) bit for bit
    return float(np.sum((e_s * e_c) * r_p))


def score_triplets(emb: np.ndarray, relations: np.ndarray, triplets) -> np.ndarray:
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    return np.sum((emb[t[:, 0]] * emb[t[:, 2]]) * relations[t[:, 1]], axis=1)


# ---------------------------------------------------------------------------
# negatives and loss


def corrupt_batch(positives: np.ndarray, omega: int, num_nodes: int, rng: np.random.Generator) -> np.ndarray:
    """``omega`` corruptions per positive, grouped positive by positive.

    A fair coin picks server or client; the replacement is uniform over the
    nodes other than the one being replaced.
    """
    if num_nodes < 2:
        raise ValueError("negative sampling needs at least two nodes")
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    neg = np.repeat(pos, omega, axis=0)
    side = rng.integers(0, 2, size=len(neg)) * 2  # column 0 (server) or 2 (client)
    rows = np.arange(len(neg))
    orig = neg[rows, side]
    draw = rng.integers(0, num_nodes - 1, size=len(neg))
    draw += draw >= orig  # uniform over V minus the original endpoint
    neg[rows, side] = draw
    return neg


def sample_negatives(positive: IndexTriplet, omega: int, graph: MultiGraph, rng: np.random.Generator) -> list[IndexTriplet]:
    neg = corrupt_batch(np.array([positive]), omega, graph.num_nodes, rng)
    return [tuple(int(v) for v in row) for row in neg]


def _scatter_rows(index: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    """out[i] = sum of rows[k] with index[k] == i, in a fixed order."""
    order = np.argsort(index, kind="stable")
    index = index[order]
    starts = np.flatnonzero(np.r_[True, index[1:] != index[:-1]])
    out = np.zeros((n, rows.shape[1]))
    out[index[starts]] = np.add.reduceat(rows[order], starts, axis=0)
    return out


def _bce_terms(f: np.ndarray, y: np.ndarray) -> np.ndarray:
    return y * nk.log_sigmoid(f) + (1.0 - y) * nk.log_sigmoid(-f)


def loss_and_grad(params: ModelParameters, graph: MultiGraph, triplets, labels, hp: HyperParams,
                  rng: Optional[np.random.Generator] = None, need_grad: bool = True):
    """Negative-sampling cross-entropy plus ``l2_weight * ||params||^2``.

    Returns ``(loss, grad)`` where ``grad`` is a :class:`ModelParameters` of
    the same shapes (``None`` when ``need_grad`` is false).  Dropout is active
    only if ``rng`` is given.
    """
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    y = np.asarray(labels, dtype=np.float64)
    n_pos = float(np.sum(y))
    if n_pos == 0:
        raise ValueError("batch contains no positive triplets")
    denom = (1 + hp.negative_rate) * n_pos

    emb, cache = _forward(graph, params, hp.dropout_rate, rng)
    es, ec, rp = emb[t[:, 0]], emb[t[:, 2]], params.relations[t[:, 1]]
    f = np.sum((es * ec) * rp, axis=1)
    terms = _bce_terms(f, y)
    if not np.all(np.isfinite(terms)):
        bad = int(np.flatnonzero(~np.isfinite(terms))[0])
        raise nk.NumericError(f"non-finite loss term for triplet {tuple(int(v) for v in t[bad])}")
    loss = -float(np.sum(terms)) / denom + hp.l2_weight * params.sq_norm()
    if not need_grad:
        return loss, None

    g = (nk.sigmoid(f) - y) / denom
    d_emb = _scatter_rows(
        np.concatenate([t[:, 0], t[:, 2]]),
        np.concatenate([g[:, None] * rp * ec, g[:, None] * rp * es]),
        emb.shape[0],
    )
    g_rel = _scatter_rows(t[:, 1], g[:, None] * es * ec, params.relations.shape[0])

    d_input, g_blocks, g_loops = _backward(graph, params, cache, d_emb)
    grad = ModelParameters(d_input, g_blocks, g_loops, g_rel)
    if hp.l2_weight:
        two_l = 2.0 * hp.l2_weight
        grad = ModelParameters(
            grad.embedding + two_l * params.embedding,
            [gb + two_l * b for gb, b in zip(grad.blocks, params.blocks)],
            [gl + two_l * w for gl, w in zip(grad.self_loops, params.self_loops)],
            grad.relations + two_l * params.relations,
        )
    return loss, grad


def loss(params: ModelParameters, batch, graph: MultiGraph, hp: HyperParams,
         rng: Optional[np.random.Generator] = None) -> float:
    """Loss of ``batch``, a sequence of ``((s, p, c), y)`` pairs."""
    triplets = [tr for tr, _ in batch]
    labels = [lab for _, lab in batch]
    return loss_and_grad(params, graph, triplets, labels, hp, rng, need_grad=False)[0]


# ---------------------------------------------------------------------------
# training


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainedModel:
    method: str
    hyperparams: HyperParams
    graph: MultiGraph
    params: ModelParameters
    node_embeddings: np.ndarray
    training_log: list[float] = field(default_factory=list)

    @property
    def relation_diagonals(self) -> np.ndarray:
        return self.params.relations

    def score_indices(self, triplets) -> np.ndarray:
        return score_triplets(self.node_embeddings, self.relation_diagonals, triplets)


def positive_triplets(graph: MultiGraph) -> np.ndarray:
    return np.array(graph.edges(), dtype=np.int64).reshape(-1, 3)


def train_graph(graph: MultiGraph, hp: HyperParams, method: str = "rgcn") -> TrainedModel:
    rng = nk.make_rng(hp.seed)
    params = init_params(graph.num_nodes, graph.num_relations, hp, rng)
    positives = positive_triplets(graph)
    omega = hp.negative_rate
    labels = np.concatenate([np.ones(len(positives)), np.zeros(len(positives) * omega)])
    opt = Adam(hp.learning_rate)
    theta = params.to_vector()
    history = []
    dropout_rng = rng if hp.dropout_rate > 0 else None
    for epoch in range(hp.epochs):
        negatives = corrupt_batch(positives, omega, graph.num_nodes, rng)
        batch = np.concatenate([positives, negatives])
        try:
            value, grad = loss_and_grad(params, graph, batch, labels, hp, dropout_rng)
        except nk.NumericError as exc:
            raise TrainingError(f"training diverged at epoch {epoch}: {exc}") from exc
        gvec = grad.to_vector()
        if not (np.isfinite(value) and np.all(np.isfinite(gvec))):
            raise TrainingError(f"training diverged at epoch {epoch}: loss={value}")
        history.append(value)
        theta = opt.step(theta, gvec)
        params = params.with_vector(theta)
        if epoch % 50 == 0 or epoch == hp.epochs - 1:
            log.debug("epoch %d loss %.6f", epoch, value)
    emb = encode(graph, params)
    return TrainedModel(method, hp, graph, params, emb, history)


def train(dataset: TripletDataset, hp: Optional[HyperParams] = None) -> TrainedModel:
    hp = hp or HyperParams()
    method = "rgcn" if hp.num_layers > 0 else "distmult"
    return train_graph(build_graph(dataset), hp, method)


def with_epochs(hp: HyperParams, epochs: int) -> HyperParams:
    return replace(hp, epochs=epochs)
