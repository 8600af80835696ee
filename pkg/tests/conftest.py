"""Shared fixtures and the per-criterion summary for the acceptance suite."""

import os
import time

import pytest

from wsnloc.geometry import CANONICAL_SCENARIOS
from wsnloc.harness import ExperimentConfig, run_batch

# (unknown, anchor) splits giving 160, 215, 270 and 325 nodes
DENSITIES = ((150, 10), (200, 15), (250, 20), (300, 25))
GRID_SHAPES = tuple(s for s in CANONICAL_SCENARIOS if s != "none")

_results: dict[str, tuple[bool, str]] = {}


def record(cid: str, ok: bool, detail: str) -> None:
    """Note a criterion outcome; the terminal summary prints one line each."""
    _results[cid] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_results, key=lambda c: int(c[1:])):
        ok, detail = _results[cid]
        terminalreporter.write_line(f"{cid:>4} {'PASS' if ok else 'FAIL'}  {detail}")


class Grid:
    """Batch reports keyed by (shape, total nodes) with wall time per cell."""

    def __init__(self):
        self.reports = {}
        self.seconds = {}

    def __getitem__(self, key):
        return self.reports[key]

    def time(self, keys=None) -> float:
        return sum(self.seconds[k] for k in (keys or self.seconds))


@pytest.fixture(scope="session")
def grid():
    """Every shape at every density, 50 seeded trials each, run once per session."""
    workers = int(os.environ.get("WSNLOC_WORKERS", os.cpu_count() or 1))
    g = Grid()
    for shape in GRID_SHAPES:
        for u, a in DENSITIES:
            t0 = time.perf_counter()
            g.reports[shape, u + a] = run_batch(ExperimentConfig(shape, u, a, trials=50, base_seed=0), workers=workers)
            g.seconds[shape, u + a] = time.perf_counter() - t0
    return g
