"""Energy detector for effective delay taps."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .model import SystemConfig
from .probing import RxTrace


@dataclass(frozen=True)
class DetectorConfig:
    mu: float = 0.03
    cap: int = 8

    def __post_init__(self):
        if not 0 < self.mu < 1:
            raise ValueError(f"threshold mu must lie in (0, 1), got {self.mu}")
        if self.cap < 1:
            raise ValueError("tap cap must be >= 1")


@dataclass
class TapStats:
    ts: np.ndarray
    nts: np.ndarray
    l_used: int
    noise_var: float

    def to_csv(self, selected=()) -> str:
        chosen = set(int(d) for d in selected)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tap", "ts", "nts", "selected"])
        for d, (y, yn) in enumerate(zip(self.ts, self.nts)):
            w.writerow([d, repr(float(y)), repr(float(yn)), int(d in chosen)])
        return buf.getvalue()


def tap_statistics(traces: list[RxTrace], cfg: SystemConfig, noise_var: float | None = None) -> TapStats:
    """Average ``|y(l N_c + d)|^2`` over every subframe of every proposed-pattern trace.

    ``noise_var`` defaults to the value recorded on the traces (assumed known exactly).
    """
    if not traces:
        raise ValueError("need at least one trace")
    n_taps = cfg.n_taps
    blocks = []
    for tr in traces:
        if tr.frame is not None and tr.frame.kind != "proposed":
            raise ValueError("tap statistics need proposed-pattern traces")
        if tr.samples.size % n_taps:
            raise ValueError("trace length is not a whole number of subframes")
        blocks.append(tr.samples.reshape(-1, n_taps))
    y = np.concatenate(blocks, axis=0)
    sigma2 = traces[0].noise_var if noise_var is None else noise_var
    ts = np.mean(np.abs(y) ** 2, axis=0)
    excess = ts - sigma2
    peak = max(float(np.max(excess)), 0.0)
    nts = excess / peak if peak > 0 else np.zeros_like(ts)
    return TapStats(ts=ts, nts=nts, l_used=y.shape[0], noise_var=float(sigma2))


def _top(values: np.ndarray, count: int) -> np.ndarray:
    # descending by value, ties to the smaller tap index
    order = np.lexsort((np.arange(values.size), -values))
    return np.sort(order[:count])


def select_taps(stats: TapStats, det: DetectorConfig = DetectorConfig()) -> np.ndarray:
    """Thresholded tap set with the cap/fallback tuning; always 1..cap taps."""
    first = np.flatnonzero((stats.nts >= det.mu) & (stats.ts > stats.noise_var))
    cap = min(det.cap, stats.ts.size)
    if 0 < first.size <= det.cap:
        return first
    if first.size > det.cap:
        return _top(stats.nts, cap)
    return _top(stats.ts, cap)


def power_ratio(tap_energies: np.ndarray, selected) -> float:
    """Share of the total channel energy carried by the selected taps."""
    total = float(np.sum(tap_energies))
    return float(np.sum(tap_energies[np.asarray(selected, dtype=int)])) / total
