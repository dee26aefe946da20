import numpy as np
import pytest

from replaynet.data import Sequence, split_chronological, trajectories
from replaynet.synthetic import SyntheticSpec, generate_synthetic

T0 = 1672531200.0  # 2023-01-01T00:00:00Z, a Sunday


def make_sequence(user, pois, times, lat=None, lon=None, n_train=None):
    """Sequence with UTC used as local time."""
    pois = np.asarray(pois, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    n = len(pois)
    dt = times.astype("datetime64[s]").astype(object)
    return Sequence(
        user=user,
        pois=pois,
        times=times,
        lat=np.full(n, 40.7) if lat is None else np.asarray(lat, dtype=np.float64),
        lon=np.full(n, -74.0) if lon is None else np.asarray(lon, dtype=np.float64),
        weekday=np.array([d.weekday() for d in dt], dtype=np.int64),
        hour=np.array([d.hour for d in dt], dtype=np.int64),
        minute=np.array([d.minute for d in dt], dtype=np.int64),
        n_train=n if n_train is None else n_train,
    )


def alternating_corpus(n=40, gap_hours=6.0):
    """Two users, ten POIs: user u cycles through POIs 5u .. 5u+4."""
    out = []
    for u in range(2):
        t = T0 + np.arange(n) * gap_hours * 3600.0
        out.append(make_sequence(u, [5 * u + i % 5 for i in range(n)], t,
                                 lat=np.full(n, 40.7 + 0.01 * u)))
    return out


def synthetic_split(users=5, pois=20, days=12, seed=3, **kw):
    spec = SyntheticSpec(user_count=users, poi_count=pois, days=days, seed=seed, **kw)
    return split_chronological(trajectories(generate_synthetic(spec)))


@pytest.fixture(scope="session")
def toy_split():
    return synthetic_split()


@pytest.fixture(scope="session")
def toy_seqs(toy_split):
    return toy_split.sequences()


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion; returns the verdict."""

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
