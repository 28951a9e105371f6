"""Plain-text model snapshots.

Layout::

    tripletguard-model v1
    method rgcn
    <hyperparameter> <value>        (one per line)
    [vocab_ips]
    [vocab_relations]
    [edges]                         i<TAB>p<TAB>j, one undirected edge per line
    [training_log]
    [tensor <name>]                 followed by "shape d0 d1 ..." and rows of
                                    the last axis, floats in shortest
                                    round-trip form
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .graph import graph_from_index_triplets
from .ingest import FormatError
from .model import HyperParams, ModelParameters, TrainedModel

MODEL_FORMAT = "tripletguard-model v1"


def _tensor_lines(name: str, arr: np.ndarray) -> list[str]:
    lines = [f"[tensor {name}]", "shape " + " ".join(str(d) for d in arr.shape)]
    flat = arr.reshape(-1, arr.shape[-1]) if arr.ndim > 1 else arr.reshape(1, -1)
    for row in flat:
        lines.append(" ".join(repr(float(v)) for v in row))
    return lines


def dumps(model: TrainedModel) -> str:
    lines = [MODEL_FORMAT, f"method {model.method}"]
    for k, v in model.hyperparams.to_dict().items():
        lines.append(f"{k} {v!r}")
    lines.append("[vocab_ips]")
    lines += model.graph.vocab_ips
    lines.append("[vocab_relations]")
    lines += model.graph.vocab_relations
    lines.append("[edges]")
    lines += ["\t".join(map(str, e)) for e in model.graph.edges()]
    lines.append("[training_log]")
    lines += [repr(float(v)) for v in model.training_log]
    for name, arr in model.params.tensors():
        lines += _tensor_lines(name, arr)
    lines += _tensor_lines("node_embeddings", model.node_embeddings)
    return "\n".join(lines) + "\n"


def save_model(model: TrainedModel, path) -> None:
    Path(path).write_text(dumps(model), encoding="utf-8")


def loads(text: str) -> TrainedModel:
    lines = text.splitlines()
    if not lines or lines[0] != MODEL_FORMAT:
        raise FormatError(f"not a model snapshot (expected {MODEL_FORMAT!r} on line 1)")
    header: dict[str, str] = {}
    sections: dict[str, list[str]] = {}
    current = None
    for line in lines[1:]:
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is None:
            key, _, value = line.partition(" ")
            header[key] = value
        else:
            sections[current].append(line)
    try:
        method = header.pop("method")
        hp = HyperParams.from_dict(header)
        tensors = {name[len("tensor "):]: _parse_tensor(body) for name, body in sections.items() if name.startswith("tensor ")}
        edges = [tuple(int(v) for v in row.split("\t")) for row in sections["edges"]]
        graph = graph_from_index_triplets(sections["vocab_ips"], sections["vocab_relations"], edges)
        n_layers = hp.num_layers
        params = ModelParameters(
            embedding=tensors["embedding"],
            blocks=[tensors[f"layer{k}.blocks"] for k in range(1, n_layers + 1)],
            self_loops=[tensors[f"layer{k}.self_loop"] for k in range(1, n_layers + 1)],
            relations=tensors["relations"],
        )
        log = [float(v) for v in sections["training_log"]]
        emb = tensors["node_embeddings"]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"corrupt model snapshot: {exc}") from exc
    if emb.shape != (graph.num_nodes, hp.hidden_dim) or params.relations.shape != (graph.num_relations, hp.hidden_dim):
        raise FormatError("snapshot tensor shapes disagree with its vocabulary")
    return TrainedModel(method, hp, graph, params, emb, log)


def _parse_tensor(body: list[str]) -> np.ndarray:
    if not body or not body[0].startswith("shape "):
        raise ValueError("tensor section without a shape line")
    shape = tuple(int(v) for v in body[0].split()[1:])
    values = [float(v) for row in body[1:] for v in row.split()]
    return np.array(values, dtype=np.float64).reshape(shape)


def load_model(path) -> TrainedModel:
    return loads(Path(path).read_text(encoding="utf-8"))
