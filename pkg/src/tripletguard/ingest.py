"""Connection-log parsing, preparation-phase filtering and train/test datasets."""
from __future__ import annotations

import csv
import ipaddress
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

DATASET_FORMAT = "tripletguard-dataset v1"
REQUIRED_COLUMNS = ("ts", "server_ip", "proto", "port", "client_ip")
PROTOCOLS = ("tcp", "udp")

Triplet = tuple[str, str, str]  # (server_ip, relation, client_ip)


class FormatError(ValueError):
    pass


class DatasetError(ValueError):
    pass


def make_relation(proto: str, port) -> str:
    proto = str(proto).strip().lower()
    if proto not in PROTOCOLS:
        raise ValueError(f"unknown protocol {proto!r}")
    try:
        num = int(str(port).strip())
    except ValueError:
        raise ValueError(f"port {port!r} is not an integer") from None
    if not 0 <= num <= 65535:
        raise ValueError("port out of range")
    return f"{proto}/{num}"


def parse_relation(relation: str) -> tuple[str, int]:
    proto, sep, port = relation.partition("/")
    if not sep:
        raise ValueError(f"relation {relation!r} is not of the form proto/port")
    rel = make_relation(proto, port)
    return rel.split("/")[0], int(port)


def _ipv4(text: str) -> str:
    try:
        return str(ipaddress.IPv4Address(text.strip()))
    except ipaddress.AddressValueError:
        raise ValueError(f"invalid IPv4 address {text!r}") from None


@dataclass(frozen=True)
class TripletObservation:
    server_ip: str
    relation: str
    client_ip: str
    timestamp: int

    def __post_init__(self):
        _ipv4(self.server_ip)
        _ipv4(self.client_ip)
        parse_relation(self.relation)
        if self.server_ip == self.client_ip:
            raise ValueError("server and client are the same address")

    @property
    def triplet(self) -> Triplet:
        return (self.server_ip, self.relation, self.client_ip)


@dataclass
class ParsedLog:
    observations: list[TripletObservation]
    errors: list[tuple[int, str]] = field(default_factory=list)

    def summary(self) -> str:
        return f"{len(self.observations)} observations, {len(self.errors)} rejected rows"


def parse_connection_log(path, fmt: str = "tsv") -> ParsedLog:
    """Read a header-prefixed TSV/CSV connection log.

    Bad rows are collected in ``errors`` as ``(line_number, message)`` and
    skipped; a missing required column raises :class:`FormatError`.
    """
    if fmt not in ("tsv", "csv"):
        raise FormatError(f"unknown log format {fmt!r}")
    delimiter = "\t" if fmt == "tsv" else ","
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise FormatError(f"{path}: empty file, header row required")
        header = [h.strip() for h in header]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise FormatError(f"{path}: missing required column(s) {', '.join(missing)}")
        col = {name: header.index(name) for name in REQUIRED_COLUMNS}

        result = ParsedLog(observations=[])
        for row in reader:
            lineno = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                if len(row) < len(header):
                    raise ValueError(f"expected {len(header)} fields, got {len(row)}")
                ts = int(row[col["ts"]].strip())
                obs = TripletObservation(
                    server_ip=_ipv4(row[col["server_ip"]]),
                    relation=make_relation(row[col["proto"]], row[col["port"]]),
                    client_ip=_ipv4(row[col["client_ip"]]),
                    timestamp=ts,
                )
            except ValueError as exc:
                result.errors.append((lineno, str(exc)))
                continue
            result.observations.append(obs)
    if result.errors:
        log.warning("%s: %s", path, result.summary())
    return result


@dataclass(frozen=True)
class IngestConfig:
    internal_cidrs: tuple[str, ...]
    train_window: tuple[int, int]
    test_window: tuple[int, int]

    def __post_init__(self):
        if not self.internal_cidrs:
            raise ValueError("internal_cidrs must not be empty")
        for cidr in self.internal_cidrs:
            ipaddress.IPv4Network(cidr, strict=False)
        (a, b), (c, d) = self.train_window, self.test_window
        if not (a < b and c < d):
            raise ValueError("windows must be non-empty [start, end) intervals")
        if b > c:
            raise ValueError("train window must end before the test window starts")

    @property
    def networks(self) -> list[ipaddress.IPv4Network]:
        return [ipaddress.IPv4Network(c, strict=False) for c in self.internal_cidrs]

    @classmethod
    def from_dict(cls, d: dict) -> "IngestConfig":
        return cls(
            internal_cidrs=tuple(d["internal_cidrs"]),
            train_window=tuple(d["train_window"]),
            test_window=tuple(d["test_window"]),
        )


_LIMITED_BROADCAST = ipaddress.IPv4Address("255.255.255.255")


def _usable(addr: ipaddress.IPv4Address, networks: Sequence[ipaddress.IPv4Network]) -> bool:
    if addr.is_multicast or addr.is_loopback or addr == _LIMITED_BROADCAST:
        return False
    inside = False
    for net in networks:
        if addr in net:
            inside = True
            # /31 and /32 have no directed broadcast address
            if net.prefixlen < 31 and addr == net.broadcast_address:
                return False
    return inside


def filter_observations(obs: Iterable[TripletObservation], cfg: IngestConfig) -> list[TripletObservation]:
    networks = cfg.networks
    cache: dict[str, bool] = {}

    def ok(ip: str) -> bool:
        if ip not in cache:
            cache[ip] = _usable(ipaddress.IPv4Address(ip), networks)
        return cache[ip]

    return [o for o in obs if o.server_ip != o.client_ip and ok(o.server_ip) and ok(o.client_ip)]


@dataclass(frozen=True)
class TripletDataset:
    """Distinct train/test triplets plus the vocabulary seen in training.

    ``train`` and ``test`` are sorted tuples without duplicates; the vocab
    tuples are in lexicographic order and fix the integer index of every
    address and relation.
    """

    train: tuple[Triplet, ...]
    test: tuple[Triplet, ...]
    vocab_ips: tuple[str, ...]
    vocab_relations: tuple[str, ...]

    @classmethod
    def from_triplets(cls, train: Iterable[Triplet], test: Iterable[Triplet] = ()) -> "TripletDataset":
        train_set = set(map(tuple, train))
        if not train_set:
            raise DatasetError("training set is empty")
        for s, p, c in train_set:
            if s == c:
                raise DatasetError(f"self-communication {s} in training data")
        ips = sorted({t[0] for t in train_set} | {t[2] for t in train_set})
        rels = sorted({t[1] for t in train_set})
        return cls(
            train=tuple(sorted(train_set)),
            test=tuple(sorted(_restrict_test(test, train_set, set(ips), set(rels)))),
            vocab_ips=tuple(ips),
            vocab_relations=tuple(rels),
        )

    def summary(self) -> dict[str, int]:
        return {
            "ip_addresses": len(self.vocab_ips),
            "relations": len(self.vocab_relations),
            "training_triplets": len(self.train),
            "test_triplets": len(self.test),
        }

    def dumps(self) -> str:
        lines = [DATASET_FORMAT, "[vocab_ips]", *self.vocab_ips, "[vocab_relations]", *self.vocab_relations]
        lines.append("[train]")
        lines += ["\t".join(t) for t in self.train]
        lines.append("[test]")
        lines += ["\t".join(t) for t in self.test]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "TripletDataset":
        lines = text.splitlines()
        if not lines or lines[0].strip() != DATASET_FORMAT:
            raise FormatError(f"not a dataset file (expected {DATASET_FORMAT!r} on line 1)")
        sections: dict[str, list[str]] = {}
        current = None
        for lineno, line in enumerate(lines[1:], start=2):
            line = line.strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                sections[current] = []
            elif current is None:
                raise FormatError(f"line {lineno}: record outside any section")
            else:
                sections[current].append(line)
        for name in ("vocab_ips", "vocab_relations", "train", "test"):
            if name not in sections:
                raise FormatError(f"missing section [{name}]")

        def triplets(name):
            out = []
            for rec in sections[name]:
                parts = rec.split("\t")
                if len(parts) != 3:
                    raise FormatError(f"[{name}] record {rec!r} is not server<TAB>relation<TAB>client")
                out.append(tuple(parts))
            return out

        ds = cls.from_triplets(triplets("train"), triplets("test"))
        if list(ds.vocab_ips) != sections["vocab_ips"] or list(ds.vocab_relations) != sections["vocab_relations"]:
            raise FormatError("vocabulary sections disagree with the training triplets")
        return ds

    @classmethod
    def load(cls, path) -> "TripletDataset":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _restrict_test(test, train_set, ips, rels):
    out = set()
    for t in map(tuple, test):
        s, p, c = t
        if t in train_set or (c, p, s) in train_set:
            continue
        if s in ips and c in ips and p in rels and s != c:
            out.add(t)
    return out


def build_dataset(obs: Iterable[TripletObservation], cfg: IngestConfig) -> TripletDataset:
    (tr0, tr1), (te0, te1) = cfg.train_window, cfg.test_window
    train, test = set(), set()
    for o in obs:
        if tr0 <= o.timestamp < tr1:
            train.add(o.triplet)
        elif te0 <= o.timestamp < te1:
            test.add(o.triplet)
    if not train:
        raise DatasetError("no observations fall inside the training window")
    return TripletDataset.from_triplets(train, test)
