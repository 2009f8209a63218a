import hashlib
import json
import time

import numpy as np
import pytest

from bcprobe import archive
from bcprobe.geometry import obstacle_preset
from bcprobe.measurement import MeasurementConfig
from bcprobe.solver import simulate_basis


class DataStore:
    """Noiseless basis data keyed by (obstacle, n_space), simulated once and
    kept in the pytest cache directory between sessions."""

    def __init__(self, cache):
        self._cache = cache
        self._mem = {}
        self._seconds = {}

    def seconds(self, obstacle: str, n_space: int) -> float:
        """Wall-clock time of the basis simulation behind a cached set."""
        self.get(obstacle, n_space)
        return self._seconds[(obstacle, n_space)]

    def get(self, obstacle: str, n_space: int):
        key = (obstacle, n_space)
        if key not in self._mem:
            cfg = MeasurementConfig(n_space=n_space)
            ob = obstacle_preset(obstacle)
            tag = hashlib.sha256(f"{ob!r}{cfg!r}v1".encode()).hexdigest()[:12]
            path = self._cache.mkdir("bcprobe-data") / f"{obstacle}_{n_space}_{tag}.ndmap"
            data = None
            if path.exists():
                try:
                    data = archive.load(path)
                except archive.ArchiveFormatError:
                    data = None
            timing = path.with_suffix(".json")
            if data is None or not timing.exists():
                start = time.perf_counter()
                data = simulate_basis(ob, cfg)
                timing.write_text(json.dumps({"seconds": time.perf_counter() - start}))
                archive.save(data, path)
            self._seconds[key] = json.loads(timing.read_text())["seconds"]
            self._mem[key] = data
        return self._mem[key]


@pytest.fixture(scope="session")
def store(request):
    return DataStore(request.config.cache)


@pytest.fixture(scope="session")
def empty100(store):
    return store.get("none", 100)


@pytest.fixture(scope="session")
def disk100(store):
    return store.get("disk", 100)


@pytest.fixture(scope="session")
def empty200(store):
    return store.get("none", 200)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def disk200(store):
    return store.get("disk", 200)


@pytest.fixture(scope="session")
def square200(store):
    return store.get("square", 200)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""

    def record(number: int, title: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
