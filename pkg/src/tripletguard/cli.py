"""Command-line entry point: ``tripletguard {ingest,synth,train,score,eval}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric/training error.
Every random choice is driven by ``--seed`` (default 0).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import numeric as nk
from .evaluation import METHODS, ExperimentConfig, results_to_json, results_to_tsv, run_experiment
from .ingest import (
    IngestConfig,
    TripletDataset,
    build_dataset,
    filter_observations,
    make_relation,
    parse_connection_log,
)
from .model import HyperParams, TrainingError, train
from .scoring import batch_score
from .snapshot import load_model, save_model
from .synthgen import DEFAULT_SPEC, SynthSpec, connection_log, generate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

HP_FLAGS = {"epochs": "epochs", "dim": "hidden_dim", "dropout": "dropout_rate", "l2": "l2_weight",
            "lr": "learning_rate", "neg_rate": "negative_rate"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    return json.loads(p.read_text(encoding="utf-8"))


def _require(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} file not found: {p}")
    return p


def _hyperparams(method: str, args, config: dict) -> HyperParams:
    """Method defaults, then the config file's section for ``method``, then flags."""
    base = HyperParams.distmult() if method == "distmult" else HyperParams()
    values = base.to_dict()
    values.update(config.get(method, {}))
    for flag, name in HP_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if method == "distmult" and int(values["num_layers"]) != 0:
        raise UsageError("distmult has no convolution layers")
    return HyperParams.from_dict(values)


def cmd_ingest(args) -> int:
    log_path = _require(args.input, "input")
    cfg = IngestConfig.from_dict(_read_json(_require(args.config, "config")))
    parsed = parse_connection_log(log_path, args.format)
    for lineno, msg in parsed.errors:
        print(f"{log_path}:{lineno}: {msg}", file=sys.stderr)
    dataset = build_dataset(filter_observations(parsed.observations, cfg), cfg)
    if args.output is None:
        raise UsageError("--output is required")
    dataset.save(args.output)
    _print_summary(dataset)
    return EXIT_OK


def _print_summary(dataset: TripletDataset) -> None:
    s = dataset.summary()
    print(f"# of IP addresses\t{s['ip_addresses']}")
    print(f"# of TCP/UDP ports\t{s['relations']}")
    print(f"# of training triplets\t{s['training_triplets']}")
    print(f"# of test triplets\t{s['test_triplets']}")


def cmd_synth(args) -> int:
    spec = SynthSpec.load(args.config) if args.config else DEFAULT_SPEC
    rng = nk.make_rng(args.seed if args.seed is not None else 0)
    dataset = generate(spec, noise_rate=args.noise, train_fraction=args.train_fraction, rng=rng)
    if args.output is None:
        raise UsageError("--output is required")
    dataset.save(args.output)
    if args.log_output:
        Path(args.log_output).write_text(connection_log(dataset, rng=rng), encoding="utf-8")
    _print_summary(dataset)
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = TripletDataset.load(_require(args.input, "input"))
    hp = _hyperparams(args.method, args, _read_json(args.config))
    if args.output is None:
        raise UsageError("--output is required")
    model = train(dataset, hp)
    save_model(model, args.output)
    final = model.training_log[-1] if model.training_log else float("nan")
    print(f"trained {model.method} for {hp.epochs} epochs, final loss {final:.6f}")
    return EXIT_OK


def _read_triplets(path: Path) -> list[tuple]:
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        fields = set(reader.fieldnames or [])
        if not {"server_ip", "client_ip"} <= fields or not ({"relation"} <= fields or {"proto", "port"} <= fields):
            raise ValueError(f"{path}: header needs server_ip, client_ip and relation (or proto and port)")
        for row in reader:
            try:
                rel = row["relation"].strip() if "relation" in fields else make_relation(row["proto"], row["port"])
            except (ValueError, AttributeError) as exc:
                rel = f"invalid:{exc}"
            rows.append(((row["server_ip"] or "").strip(), rel, (row["client_ip"] or "").strip()))
    return rows


def cmd_score(args) -> int:
    model = load_model(_require(args.model, "model"))
    triplets = _read_triplets(_require(args.input, "input"))
    report = batch_score(model, triplets)
    if args.output is None:
        raise UsageError("--output is required")
    Path(args.output).write_text(report.to_tsv(), encoding="utf-8")
    for k, msg in report.errors:
        print(f"row {k + 1}: {msg}", file=sys.stderr)
    print("\t".join(f"{k}={v}" for k, v in report.counts().items()))
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = TripletDataset.load(_require(args.input, "input"))
    config = _read_json(args.config)
    methods = METHODS if args.method in (None, "all") else tuple(m.strip() for m in args.method.split(","))
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)} or all")
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    exp = ExperimentConfig(
        anomaly_count=args.anomaly_count if args.anomaly_count is not None else int(config.get("anomaly_count", 500)),
        seed=seed,
        rgcn=_hyperparams("rgcn", args, config),
        distmult=_hyperparams("distmult", args, config),
    )
    rows = run_experiment(dataset, methods, exp)
    tsv = results_to_tsv(rows)
    if args.output:
        out = Path(args.output)
        out.write_text(tsv, encoding="utf-8")
        out.with_suffix(".json").write_text(results_to_json(rows), encoding="utf-8")
    sys.stdout.write(tsv)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tripletguard", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="connection log -> dataset")
    p.add_argument("--input", help="TSV/CSV connection log")
    p.add_argument("--config", help="JSON with internal_cidrs, train_window, test_window")
    p.add_argument("--output", help="dataset file to write")
    p.add_argument("--format", choices=("tsv", "csv"), default="tsv")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic role-based dataset")
    p.add_argument("--config", help="JSON role/rule spec (default: built-in 60-device plant)")
    p.add_argument("--output", help="dataset file to write")
    p.add_argument("--log-output", help="also write a synthetic connection log here")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.set_defaults(func=cmd_synth)

    def hp_flags(p):
        p.add_argument("--seed", type=int, default=None, help="default 0")
        p.add_argument("--epochs", type=int)
        p.add_argument("--dim", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--l2", type=float)
        p.add_argument("--lr", type=float)
        p.add_argument("--neg-rate", type=int)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--input", help="dataset file")
    p.add_argument("--output", help="model snapshot to write")
    p.add_argument("--config", help="JSON with per-method hyperparameter overrides")
    p.add_argument("--method", choices=("rgcn", "distmult"), default="rgcn")
    hp_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score triplets with a trained model")
    p.add_argument("--model", help="model snapshot")
    p.add_argument("--input", help="TSV of triplets (server_ip, relation, client_ip)")
    p.add_argument("--output", help="score report to write")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="link prediction and anomaly distinction experiment")
    p.add_argument("--input", help="dataset file")
    p.add_argument("--output", help="results TSV (a .json twin is written next to it)")
    p.add_argument("--config", help="JSON with seed, anomaly_count and per-method overrides")
    p.add_argument("--method", default="all", help="comma-separated subset of " + ",".join(METHODS))
    p.add_argument("--anomaly-count", type=int)
    hp_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, nk.NumericError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
