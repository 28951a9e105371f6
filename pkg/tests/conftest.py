import numpy as np
import pytest

from tripletguard import synthgen
from tripletguard.graph import graph_from_index_triplets
from tripletguard.ingest import TripletDataset
from tripletguard.model import HyperParams, train

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; call with (name, passed, detail). passed=None means not applicable."""

    def record(name, passed, detail=""):
        status = "N/A" if passed is None else ("PASS" if passed else "FAIL")
        _ACCEPTANCE.append((name, status, detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{status}] {name}  {detail}")


def random_graph(rng, n_nodes, n_rel, n_triplets):
    trip = set()
    while len(trip) < n_triplets:
        s, c = rng.choice(n_nodes, size=2, replace=False)
        trip.add((int(s), int(rng.integers(n_rel)), int(c)))
    # every node needs at least one edge to be a vocabulary member
    for v in range(n_nodes):
        if not any(v in (s, c) for s, _, c in trip):
            trip.add((v, int(rng.integers(n_rel)), (v + 1) % n_nodes))
    return graph_from_index_triplets([f"10.0.0.{i + 1}" for i in range(n_nodes)],
                                     [f"tcp/{100 + p}" for p in range(n_rel)], trip)


@pytest.fixture
def tiny_dataset():
    train_t = [
        ("10.0.0.1", "tcp/502", "10.0.0.2"),
        ("10.0.0.1", "tcp/502", "10.0.0.3"),
        ("10.0.0.4", "tcp/502", "10.0.0.2"),
        ("10.0.0.5", "udp/53", "10.0.0.2"),
        ("10.0.0.5", "udp/53", "10.0.0.3"),
    ]
    test_t = [("10.0.0.4", "tcp/502", "10.0.0.3")]
    return TripletDataset.from_triplets(train_t, test_t)


SMALL_SPEC = synthgen.SynthSpec(
    roles=(synthgen.RoleSpec("plc", 3), synthgen.RoleSpec("hmi", 3), synthgen.RoleSpec("io", 2)),
    rules=(
        synthgen.Rule("hmi", "plc", "tcp/502"),
        synthgen.Rule("plc", "io", "udp/2222"),
        synthgen.Rule("hmi", "hmi", "tcp/3389"),
    ),
)


@pytest.fixture(scope="session")
def small_dataset():
    return synthgen.generate(SMALL_SPEC, train_fraction=0.8, seed=3)


@pytest.fixture(scope="session")
def small_model(small_dataset):
    hp = HyperParams(hidden_dim=8, block_size=4, epochs=60, seed=1)
    return train(small_dataset, hp)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
