"""Evaluation metrics: weighted scatterer-selection accuracy, box-plot
statistics, empirical CDFs and report writers."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from rekit._io import write_csv

__all__ = [
    "TOP_WEIGHTS",
    "MISS_PENALTY",
    "AccuracyReport",
    "SummaryStats",
    "selection_weight",
    "selection_accuracy",
    "accuracy_report",
    "summary_stats",
    "empirical_cdf",
    "write_accuracy_csv",
    "write_stats_csv",
    "write_cdf_csv",
]

# percentage points: 30 for the strongest reference scatterer, 5 less for
# each of the next four; kept integral so sums are exact
TOP_WEIGHTS = (30, 25, 20, 15, 10)
MISS_PENALTY = -10


def selection_weight(sid: int, s_real: Sequence[int]) -> int:
    """Weight of one selected id, in percentage points."""
    s_real = list(s_real)
    if sid not in s_real:
        return MISS_PENALTY
    rank = s_real.index(sid)
    return TOP_WEIGHTS[rank] if rank < len(TOP_WEIGHTS) else 0


def selection_accuracy(s_select: Sequence[int], s_real: Sequence[int]) -> int:
    """Weighted agreement of selected ids with a power-ranked reference list, in percent.

    ``s_real`` must be ordered by descending path power. Selecting exactly
    its top five scores 100; each selected id absent from it costs 10.
    """
    s_select = list(s_select)
    if len(set(s_select)) != len(s_select):
        raise ValueError(f"duplicate ids in selection {s_select}")
    return sum(selection_weight(i, s_real) for i in s_select)


@dataclass(frozen=True)
class AccuracyReport:
    rx_index: int
    s_select: tuple[int, ...]
    s_real: tuple[int, ...]
    percent: int

    @property
    def accuracy(self) -> float:
        return self.percent / 100.0


def accuracy_report(rx_index: int, s_select: Sequence[int], s_real: Sequence[int]) -> AccuracyReport:
    return AccuracyReport(rx_index, tuple(s_select), tuple(s_real), selection_accuracy(s_select, s_real))


@dataclass(frozen=True)
class SummaryStats:
    """Box-plot statistics: quartiles, whisker bounds, median, outlier count."""

    UQ: float
    LQ: float
    UB: float
    LB: float
    MED: float
    OL: int


def summary_stats(values: Sequence[float]) -> SummaryStats:
    """Quartiles by linear interpolation, whiskers at 1.5 IQR.

    ``UB``/``LB`` are the most extreme data points inside
    ``[LQ - 1.5 IQR, UQ + 1.5 IQR]``; anything outside counts as an outlier.
    """
    v = np.sort(np.asarray(values, dtype=float))
    if v.size < 4:
        raise ValueError(f"need at least 4 values, got {v.size}")
    lq, med, uq = np.percentile(v, [25, 50, 75])
    iqr = uq - lq
    lo_fence, hi_fence = lq - 1.5 * iqr, uq + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    return SummaryStats(
        UQ=float(uq),
        LQ=float(lq),
        UB=float(inside.max()),
        LB=float(inside.min()),
        MED=float(med),
        OL=int(v.size - inside.size),
    )


def empirical_cdf(values: Sequence[float]) -> list[tuple[float, float]]:
    """Step points ``(value, fraction <= value)``, one per distinct value."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empirical_cdf of an empty sample")
    uniq, counts = np.unique(v, return_counts=True)
    frac = np.cumsum(counts) / v.size
    frac[-1] = 1.0
    return [(float(a), float(b)) for a, b in zip(uniq, frac)]


def write_accuracy_csv(path: str | Path, reports: Sequence[AccuracyReport]) -> None:
    write_csv(
        path,
        ("rx_index", "proposed", "reference", "accuracy_percent"),
        (
            (r.rx_index, " ".join(map(str, r.s_select)), " ".join(map(str, r.s_real)), r.percent)
            for r in reports
        ),
    )


def write_stats_csv(path: str | Path, stats: dict[str, SummaryStats]) -> None:
    write_csv(
        path,
        ("series", "UQ", "LQ", "UB", "LB", "MED", "OL"),
        ((name, s.UQ, s.LQ, s.UB, s.LB, s.MED, s.OL) for name, s in stats.items()),
    )


def write_cdf_csv(path: str | Path, values: Sequence[float]) -> None:
    write_csv(path, ("value", "fraction"), empirical_cdf(values))
