"""Role-structured synthetic ICS datasets.

A spec lists device roles and communication rules.  Each rule says that
clients of one role reach servers of another role on one relation with a
given probability.  Spec files are JSON::

    {
      "roles": [{"name": "plc", "count": 16}, ...],
      "rules": [{"client": "hmi", "server": "plc", "relation": "tcp/502",
                 "probability": 1.0}, ...]
    }
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .ingest import Triplet, TripletDataset, parse_relation


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class Rule:
    client: str
    server: str
    relation: str
    probability: float = 1.0

    def __post_init__(self):
        parse_relation(self.relation)
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"rule probability {self.probability} outside [0, 1]")


@dataclass(frozen=True)
class RoleSpec:
    name: str
    count: int


@dataclass(frozen=True)
class SynthSpec:
    roles: tuple[RoleSpec, ...]
    rules: tuple[Rule, ...]
    subnet: str = "10.20"

    def __post_init__(self):
        if not self.roles:
            raise SynthError("spec needs at least one role")
        names = [r.name for r in self.roles]
        if len(set(names)) != len(names):
            raise SynthError("role names must be unique")
        if len(self.roles) > 250 or any(not 0 < r.count <= 250 for r in self.roles):
            raise SynthError("at most 250 roles of 1..250 devices each")
        for rule in self.rules:
            for role in (rule.client, rule.server):
                if role not in names:
                    raise SynthError(f"rule references unknown role {role!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        roles = tuple(RoleSpec(r["name"], int(r["count"])) for r in d["roles"])
        rules = tuple(
            Rule(r["client"], r["server"], r["relation"], float(r.get("probability", 1.0))) for r in d.get("rules", [])
        )
        return cls(roles, rules, d.get("subnet", "10.20"))

    @classmethod
    def load(cls, path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {
            "subnet": self.subnet,
            "roles": [{"name": r.name, "count": r.count} for r in self.roles],
            "rules": [vars(r).copy() for r in self.rules],
        }


# 60 devices in 6 roles of 10, one relation per rule (8 rules, 8 relations).
# Complete role-to-role blocks keep every withheld triplet predictable from
# roles, and one relation per rule keeps filtered candidate pools large.
DEFAULT_SPEC = SynthSpec(
    roles=tuple(RoleSpec(name, 10) for name in ("plc", "hmi", "io", "eng_ws", "historian", "it_server")),
    rules=(
        Rule("hmi", "plc", "tcp/502"),
        Rule("eng_ws", "plc", "tcp/44818"),
        Rule("plc", "io", "udp/2222"),
        Rule("historian", "plc", "tcp/102"),
        Rule("hmi", "historian", "tcp/1433"),
        Rule("eng_ws", "hmi", "tcp/3389"),
        Rule("hmi", "it_server", "udp/53"),
        Rule("eng_ws", "it_server", "tcp/445"),
    ),
)


def device_addresses(spec: SynthSpec) -> dict[str, list[str]]:
    return {
        role.name: [f"{spec.subnet}.{k + 1}.{j + 10}" for j in range(role.count)]
        for k, role in enumerate(spec.roles)
    }


def _undirected(t: Triplet) -> Triplet:
    s, p, c = t
    return (s, p, c) if s <= c else (c, p, s)


def rule_triplets(spec: SynthSpec, rng: np.random.Generator) -> list[Triplet]:
    """Rule-generated triplets, each undirected pair/relation at most once."""
    addrs = device_addresses(spec)
    seen: dict[Triplet, Triplet] = {}
    for rule in spec.rules:
        for si, server in enumerate(addrs[rule.server]):
            for ci, client in enumerate(addrs[rule.client]):
                if server == client:
                    continue
                # a self-rule covers each unordered pair once
                if rule.client == rule.server and ci < si:
                    continue
                if rule.probability < 1.0 and rng.random() >= rule.probability:
                    continue
                t = (server, rule.relation, client)
                seen.setdefault(_undirected(t), t)
    return list(seen.values())


def generate(spec: SynthSpec = DEFAULT_SPEC, noise_rate: float = 0.0, train_fraction: float = 0.8,
             rng: Optional[np.random.Generator] = None, seed: int = 0) -> TripletDataset:
    """Sample a dataset from ``spec``.

    A ``1 - train_fraction`` share of the rule-generated triplets is withheld
    as test data.  ``noise_rate`` adds that fraction (relative to the rule
    triplets) of uniformly random triplets to the training side.  Test
    triplets whose address or relation would otherwise be missing from the
    training vocabulary are moved to training.
    """
    if not 0.0 <= noise_rate <= 1.0:
        raise SynthError("noise_rate must lie in [0, 1]")
    if not 0.0 < train_fraction <= 1.0:
        raise SynthError("train_fraction must lie in (0, 1]")
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(seed))

    rule_set = rule_triplets(spec, rng)
    if not rule_set:
        raise SynthError("spec produced no triplets")
    order = rng.permutation(len(rule_set))
    n_test = int(round((1.0 - train_fraction) * len(rule_set)))
    test = [rule_set[i] for i in order[:n_test]]
    train = [rule_set[i] for i in order[n_test:]]

    n_noise = int(round(noise_rate * len(rule_set)))
    if n_noise:
        all_ips = [ip for ips in device_addresses(spec).values() for ip in ips]
        relations = sorted({r.relation for r in spec.rules})
        known = {_undirected(t) for t in rule_set}
        added = 0
        attempts = 0
        while added < n_noise and len(all_ips) > 1:
            attempts += 1
            if attempts > 100 * n_noise + 1000:
                raise SynthError("could not place the requested noise triplets")
            i, j = rng.choice(len(all_ips), size=2, replace=False)
            t = (all_ips[i], relations[rng.integers(len(relations))], all_ips[j])
            if _undirected(t) in known:
                continue
            known.add(_undirected(t))
            train.append(t)
            added += 1

    if not train:
        raise SynthError("no training triplets left after the split")
    # vocabulary closure: move uncovered test triplets into training
    while True:
        ips = {t[0] for t in train} | {t[2] for t in train}
        rels = {t[1] for t in train}
        uncovered = [t for t in test if t[0] not in ips or t[2] not in ips or t[1] not in rels]
        if not uncovered:
            break
        train.append(uncovered[0])
        test.remove(uncovered[0])
    return TripletDataset.from_triplets(train, test)


def satisfies_rules(spec: SynthSpec, triplet: Triplet) -> bool:
    role_of = {ip: role for role, ips in device_addresses(spec).items() for ip in ips}
    s, p, c = triplet
    for rule in spec.rules:
        if rule.relation != p:
            continue
        if (role_of.get(s), role_of.get(c)) in ((rule.server, rule.client), (rule.client, rule.server)):
            return True
    return False


def connection_log(dataset: TripletDataset, train_start: int = 0, period: int = 7 * 86400,
                   rng: Optional[np.random.Generator] = None) -> str:
    """Render ``dataset`` as a TSV connection log, train week then test week."""
    rng = rng or np.random.Generator(np.random.PCG64(0))
    rows = ["ts\tserver_ip\tproto\tport\tclient_ip"]
    for offset, triplets in ((train_start, dataset.train), (train_start + period, dataset.test)):
        stamps = np.sort(rng.integers(offset, offset + period, size=len(triplets)))
        for ts, (s, p, c) in zip(stamps, triplets):
            proto, port = p.split("/")
            rows.append(f"{int(ts)}\t{s}\t{proto}\t{port}\t{c}")
    return "\n".join(rows) + "\n"

