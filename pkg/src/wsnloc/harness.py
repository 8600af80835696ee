"""Seeded trial execution, batch aggregation and report files."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from . import __version__
from .deployment import Network, RangingModel, deploy
from .errors import DegenerateProfile
from .geometry import Scenario, circular_scenario, resolve_scenario
from .localization import LocalizationResult, localize
from .metrics import TrialMetrics, acd_term, mle, spo_count, traversal_ratio
from .partitioning import MIN_SIDE, PartitionMap, partition
from .pathgraph import hop_matrix, occurrence_counts
from .segmentation import SegPair, form_pairs, kmeans_two

log = logging.getLogger(__name__)

REPORT_FORMAT = "wsnloc-report/1"
CSV_COLUMNS = [
    "trial", "seed", "n_nodes", "n_pairs", "z", "spo_before", "spo_after",
    "acd_term", "mle_m", "inaccurate", "flags", "runtime_ms", "in_range_pairs",
]
_NUMERIC = [c for c in CSV_COLUMNS if c not in ("trial", "seed", "flags")]


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    n_unknown: int
    n_anchor: int
    L: float = 15.0
    trials: int = 50
    base_seed: int = 0
    ranging: RangingModel = RangingModel()
    no_partition: bool = False
    out_dir: Path | None = None
    min_side: int = MIN_SIDE

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.n_unknown < 0 or self.n_anchor < 0:
            raise ValueError("node counts must be non-negative")
        if not 0 <= self.base_seed < 2 ** 64:
            raise ValueError("base_seed must fit in 64 bits")

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n_unknown": self.n_unknown,
            "n_anchor": self.n_anchor,
            "L": self.L,
            "trials": self.trials,
            "base_seed": self.base_seed,
            "ranging": str(self.ranging),
            "no_partition": self.no_partition,
            "out_dir": None if self.out_dir is None else str(self.out_dir),
            "min_side": self.min_side,
        }


def trial_seed(base_seed: int, trial_index: int) -> int:
    """64-bit seed for one trial, mixed from (base_seed, trial_index) by SeedSequence."""
    lo, hi = np.random.SeedSequence([base_seed, trial_index]).generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


@dataclass
class TrialArtifacts:
    network: Network
    ts: np.ndarray | None
    pairs: list[SegPair]
    partition: PartitionMap
    result: LocalizationResult
    metrics: TrialMetrics


def simulate_trial(config: ExperimentConfig, trial_index: int, scenario: Scenario | None = None) -> TrialArtifacts:
    """Run the whole pipeline once and keep every intermediate product."""
    t0 = time.perf_counter()
    scenario = scenario or resolve_scenario(config.scenario)
    seed = trial_seed(config.base_seed, trial_index)
    net = deploy(scenario, config.n_unknown, config.n_anchor, config.L, seed, config.ranging)
    flags: list[str] = []
    ts = None
    pairs: list[SegPair] = []
    if config.no_partition:
        pm = PartitionMap(np.ones(net.n, dtype=np.int64))
    else:
        ts = occurrence_counts(hop_matrix(net))
        try:
            pairs = form_pairs(kmeans_two(ts).high_members, net)
        except DegenerateProfile:
            flags.append("degenerate-profile")
        pm = partition(net, pairs, ts, config.min_side)
        for status in ("small-side", "degenerate"):
            if pm.skipped(status):
                flags.append(f"{status}:{pm.skipped(status)}")
        broken = pm.disconnected(net) if pm.w else []
        if broken:
            flags.append(f"disconnected-area:{len(broken)}")
    result = localize(net, pm.label)
    flags.extend(result.flags)
    before = spo_count(net)
    after = spo_count(net, pm)
    err, bad = mle(result, net)
    metrics = TrialMetrics(
        spo_before=before,
        spo_after=after,
        acd_term=acd_term(before, after),
        mle=err,
        inaccurate=bad,
        n_pairs=len(pairs),
        z=pm.z,
        flags=flags,
        trial=trial_index,
        seed=seed,
        n_nodes=net.n,
        in_range_pairs=net.in_range_pairs,
        runtime_ms=(time.perf_counter() - t0) * 1e3,
    )
    return TrialArtifacts(net, ts, pairs, pm, result, metrics)


def run_trial(config: ExperimentConfig, trial_index: int, scenario: Scenario | None = None) -> TrialMetrics:
    return simulate_trial(config, trial_index, scenario).metrics


def _row(m: TrialMetrics) -> dict:
    return {
        "trial": m.trial,
        "seed": m.seed,
        "n_nodes": m.n_nodes,
        "n_pairs": m.n_pairs,
        "z": m.z,
        "spo_before": m.spo_before,
        "spo_after": m.spo_after,
        "acd_term": m.acd_term,
        "mle_m": m.mle,
        "inaccurate": m.inaccurate,
        "flags": ";".join(m.flags),
        "runtime_ms": m.runtime_ms,
        "in_range_pairs": m.in_range_pairs,
    }


def _from_row(r: dict) -> TrialMetrics:
    return TrialMetrics(
        spo_before=int(r["spo_before"]),
        spo_after=int(r["spo_after"]),
        acd_term=float(r["acd_term"]),
        mle=float(r["mle_m"]),
        inaccurate=int(r["inaccurate"]),
        n_pairs=int(r["n_pairs"]),
        z=int(r["z"]),
        flags=[f for f in r["flags"].split(";") if f],
        trial=int(r["trial"]),
        seed=int(r["seed"]),
        n_nodes=int(r["n_nodes"]),
        in_range_pairs=int(r["in_range_pairs"]),
        runtime_ms=float(r["runtime_ms"]),
    )


@dataclass
class BatchReport:
    rows: list[TrialMetrics]
    config: dict = field(default_factory=dict)
    format: str = REPORT_FORMAT
    version: str = __version__

    def column(self, name: str) -> np.ndarray:
        return np.array([_row(m)[name] for m in self.rows], dtype=float)

    @property
    def aggregates(self) -> dict[str, dict[str, float]]:
        out = {}
        for c in _NUMERIC:
            v = self.column(c)
            out[c] = {"mean": float(v.mean()), "std": float(v.std())}
        return out

    @property
    def acd(self) -> float:
        return float(self.column("acd_term").mean())

    def to_json(self) -> dict:
        return {
            "format": self.format,
            "version": self.version,
            "config": self.config,
            "aggregates": self.aggregates,
            "acd": self.acd,
            "rows": [_row(m) for m in self.rows],
        }

    def write(self, out_dir: Union[str, Path]) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        csv_path, json_path = out_dir / "report.csv", out_dir / "report.json"
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            with open(csv_path, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
                w.writeheader()
                for m in self.rows:
                    # repr keeps floats bit-exact through a round trip
                    w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in _row(m).items()})
            with open(json_path, "w") as fh:
                json.dump(self.to_json(), fh, indent=2)
        except OSError as e:
            raise OSError(f"cannot write report to {out_dir}: {e}") from e
        return csv_path, json_path

    @classmethod
    def read_csv(cls, path: Union[str, Path], config: dict | None = None) -> "BatchReport":
        try:
            with open(path, newline="") as fh:
                rows = [_from_row(r) for r in csv.DictReader(fh)]
        except OSError as e:
            raise OSError(f"cannot read report {path}: {e}") from e
        return cls(rows, config or {})


def _trial_job(args) -> TrialMetrics:
    config, idx = args
    return run_trial(config, idx)


def run_batch(config: ExperimentConfig, workers: int = 1) -> BatchReport:
    """Run ``config.trials`` independent trials and write reports if ``out_dir`` is set.

    Trials only depend on their own seed, so the result does not depend on
    ``workers``; rows are always kept in trial order.
    """
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_trial_job, [(config, i) for i in range(config.trials)]))
    else:
        scenario = resolve_scenario(config.scenario)
        rows = [run_trial(config, i, scenario) for i in range(config.trials)]
    report = BatchReport(rows, config.to_dict())
    if config.out_dir is not None:
        report.write(config.out_dir)
    return report


# ---------------------------------------------------------------- traversal statistics

TRAVERSAL_DIAMETERS = (15.0, 30.0, 45.0, 60.0, 75.0, 90.0)
TRAVERSAL_NODES = (160, 215, 270, 325)
TRAVERSAL_COLUMNS = ["diameter_m", "n_nodes", "trials", "mean_traversing_pairs", "mean_in_range_pairs", "traversal_ratio"]


def traversal_cell(diameter: float, n_nodes: int, trials: int, base_seed: int = 0, L: float = 15.0) -> dict:
    """Mean count of in-range pairs cut by a central circle of the given diameter.

    The ratio is pooled: total blocked pairs over total in-range pairs.
    """
    sc = circular_scenario(diameter)
    blocked, in_range = [], []
    for i in range(trials):
        net = deploy(sc, n_nodes, 0, L, trial_seed(base_seed, i))
        blocked.append(len(net.nlos_pairs))
        in_range.append(net.in_range_pairs)
    total = float(np.sum(in_range))
    return {
        "diameter_m": float(diameter),
        "n_nodes": int(n_nodes),
        "trials": int(trials),
        "mean_traversing_pairs": float(np.mean(blocked)),
        "mean_in_range_pairs": float(np.mean(in_range)),
        "traversal_ratio": float(np.sum(blocked) / total) if total else 0.0,
    }


def traversal_table(
    diameters: Iterable[float] = TRAVERSAL_DIAMETERS,
    node_counts: Iterable[int] = TRAVERSAL_NODES,
    trials: int = 50,
    base_seed: int = 0,
    L: float = 15.0,
) -> list[dict]:
    return [traversal_cell(d, n, trials, base_seed, L) for d in diameters for n in node_counts]


def write_traversal(rows: Sequence[dict], path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TRAVERSAL_COLUMNS)
            w.writeheader()
            w.writerows(rows)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    return path
