"""Trial-level evaluation against ground truth: SPO, ACD and MLE."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .deployment import Network
from .localization import LocalizationResult

log = logging.getLogger(__name__)

EPS_POS = 1e-6  # metres; anything worse counts as inaccurate


@dataclass
class TrialMetrics:
    spo_before: int
    spo_after: int
    acd_term: float
    mle: float
    inaccurate: int
    n_pairs: int
    z: int
    flags: list[str] = field(default_factory=list)
    trial: int = 0
    seed: int = 0
    n_nodes: int = 0
    in_range_pairs: int = 0
    runtime_ms: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _labels(partition) -> np.ndarray | None:
    if partition is None:
        return None
    return np.asarray(getattr(partition, "label", partition))


def spo_count(network: Network, partition=None) -> int:
    """Blocked node pairs within radio range; only same-area ones when labelled."""
    pairs = network.nlos_pairs
    labels = _labels(partition)
    if labels is None or len(pairs) == 0:
        return int(len(pairs))
    return int((labels[pairs[:, 0]] == labels[pairs[:, 1]]).sum())


def acd_term(spo_before: int, spo_after: int) -> float:
    """Share of blocked pairs cut apart; 1 when there was nothing to cut."""
    if spo_before == 0:
        return 1.0
    if spo_after > spo_before:
        log.warning("spo_after %d exceeds spo_before %d", spo_after, spo_before)
    return 1.0 - spo_after / spo_before


def acd(trials: Sequence[TrialMetrics]) -> float:
    if not trials:
        raise ValueError("acd needs at least one trial")
    return float(np.mean([t.acd_term for t in trials]))


def traversal_ratio(network: Network) -> float:
    """Fraction of in-range pairs whose straight segment is blocked."""
    if network.in_range_pairs == 0:
        return 0.0
    return len(network.nlos_pairs) / network.in_range_pairs


def position_errors(result: LocalizationResult, network: Network) -> np.ndarray:
    """Per-unknown error; unlocalized nodes are charged their distance to the area centre."""
    u = network.unknowns
    est = result.global_estimate[u].copy()
    missing = np.isnan(est[:, 0])
    est[missing] = (network.scenario.width / 2.0, network.scenario.height / 2.0)
    return np.hypot(*(est - network.positions[u]).T)


def mle(result: LocalizationResult, network: Network) -> tuple[float, int]:
    """Mean error over unknown nodes and the count above ``EPS_POS``."""
    err = position_errors(result, network)
    if len(err) == 0:
        return 0.0, 0
    missing = np.isnan(result.global_estimate[network.unknowns, 0])
    bad = (err > EPS_POS) | missing
    return float(err.mean()), int(bad.sum())
