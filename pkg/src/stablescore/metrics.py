"""Evaluation metrics: distribution alignment against a target and calibration error."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from stablescore.types import ValidationError

DECILE_EDGES = np.linspace(0.0, 1.0, 11)


class EmptyScores(ValidationError):
    code = "EmptyScores"


class LengthMismatch(ValidationError):
    code = "LengthMismatch"


def wilson_interval(k, n, z: float = 1.96):
    """Wilson score interval for a binomial proportion ``k / n``. Vectorized."""
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    p = k / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z / denom * np.sqrt(p * (1 - p) / n + z2 / (4 * n * n))
    lo, hi = np.clip(center - half, 0, 1), np.clip(center + half, 0, 1)
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


@dataclass
class BinnedComparison:
    """Per-bin comparison of observed scores with a target distribution.

    ``relative_error`` is ``observed_fraction / expected_mass - 1`` (-1 when a
    bin with positive expected mass is empty). ``wilson_low``/``wilson_high``
    bound the relative error using the Wilson interval of the observed fraction.
    """

    bin_edges: np.ndarray
    observed_counts: np.ndarray
    expected_mass: np.ndarray
    observed_fraction: np.ndarray
    relative_error: np.ndarray
    wilson_low: np.ndarray
    wilson_high: np.ndarray
    n: int
    z: float

    @property
    def expected_counts(self) -> np.ndarray:
        return self.n * self.expected_mass

    @property
    def low_count_bins(self) -> np.ndarray:
        """Bins whose expected count is below 5; flagged, not dropped."""
        return self.expected_counts < 5

    def consistent_with_target(self, min_expected: float = 5.0) -> np.ndarray:
        """Per bin: zero relative error lies inside the Wilson band (True for sparse bins)."""
        inside = (self.wilson_low <= 0.0) & (self.wilson_high >= 0.0)
        return inside | (self.expected_counts < min_expected)

    def labels(self) -> list[str]:
        e = self.bin_edges
        last = len(e) - 2
        return [
            f"[{e[i]:.1f}, {e[i + 1]:.1f}{']' if i == last else '['}" for i in range(len(e) - 1)
        ]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "z": self.z,
            "bins": [
                {
                    "bin": label,
                    "low": float(self.bin_edges[i]),
                    "high": float(self.bin_edges[i + 1]),
                    "observed_count": int(self.observed_counts[i]),
                    "observed_fraction": float(self.observed_fraction[i]),
                    "expected_mass": float(self.expected_mass[i]),
                    "relative_error": float(self.relative_error[i]),
                    "wilson_low": float(self.wilson_low[i]),
                    "wilson_high": float(self.wilson_high[i]),
                    "low_expected_count": bool(self.low_count_bins[i]),
                }
                for i, label in enumerate(self.labels())
            ],
        }

    def to_rows(self) -> list[dict]:
        return self.to_dict()["bins"]


def binned_relative_error(scores, target_mass, z: float = 1.96, bin_edges=None) -> BinnedComparison:
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.size == 0:
        raise EmptyScores("no scores to bin")
    edges = DECILE_EDGES if bin_edges is None else np.asarray(bin_edges, dtype=float)
    target = np.asarray(target_mass, dtype=float)
    if target.size != edges.size - 1:
        raise ValidationError(f"{target.size} target masses for {edges.size - 1} bins")
    if abs(target.sum() - 1.0) > 1e-6:
        raise ValidationError(f"target masses sum to {target.sum()!r}, not 1")

    # np.histogram uses half-open bins except the last, which is closed.
    counts, _ = np.histogram(scores, bins=edges)
    n = scores.size
    frac = counts / n
    lo, hi = wilson_interval(counts, n, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(target > 0, frac / target - 1.0, np.where(counts > 0, np.inf, 0.0))
        wl = np.where(target > 0, lo / target - 1.0, np.where(counts > 0, np.inf, 0.0))
        wh = np.where(target > 0, hi / target - 1.0, np.inf)
    return BinnedComparison(edges, counts, target, frac, rel, wl, wh, n, z)


def brier_score(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.size} predictions for {y.size} labels")
    if p.size == 0:
        raise EmptyScores("no predictions")
    return float(np.mean((p - y) ** 2))


def _equal_mass_stats(p_sorted, y_sorted, b: int):
    n = p_sorted.size
    cuts = (np.arange(b + 1) * n) // b
    cp = np.concatenate([[0.0], np.cumsum(p_sorted)])
    cy = np.concatenate([[0.0], np.cumsum(y_sorted)])
    counts = np.diff(cuts)
    mean_p = np.diff(cp[cuts]) / counts
    rate = np.diff(cy[cuts]) / counts
    return counts, mean_p, rate


def _monotone(mean_p, rate) -> bool:
    # Equal bin means must have equal rates; otherwise rates must not decrease.
    dp = np.diff(mean_p)
    dr = np.diff(rate)
    tol = 1e-12
    same_p = np.abs(dp) <= tol * np.maximum(1.0, np.abs(mean_p[1:]))
    return bool(np.all(np.where(same_p, np.abs(dr) <= tol, dr >= -tol)))


def ece_em_sweep(predictions, labels) -> tuple[float, int]:
    """Equal-mass ECE with the bin count chosen by a monotonicity sweep.

    Candidates are ``b = 2 .. floor(sqrt(n))``; the largest ``b`` whose per-bin
    positive rates are non-decreasing in the bin mean prediction is used.
    When no candidate qualifies a single bin is used.
    """
    p = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.size} predictions for {y.size} labels")
    n = p.size
    if n < 2:
        raise ValidationError("need at least two predictions")
    order = np.lexsort((y, p))
    ps, ys = p[order], y[order]

    chosen = 1
    for b in range(int(math.isqrt(n)), 1, -1):
        _, mean_p, rate = _equal_mass_stats(ps, ys, b)
        if _monotone(mean_p, rate):
            chosen = b
            break
    counts, mean_p, rate = _equal_mass_stats(ps, ys, chosen)
    ece = float(np.sum(counts / n * np.abs(mean_p - rate)))
    return ece, chosen


@dataclass
class CalibrationReport:
    ece: float
    ece_bins_used: int
    brier: float
    n: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def calibration_report(predictions, labels) -> CalibrationReport:
    ece, bins = ece_em_sweep(predictions, labels)
    return CalibrationReport(ece, bins, brier_score(predictions, labels), int(np.size(predictions)))


def relative_change(before: float, after: float) -> float:
    return (after - before) / before if before else float("nan")


def format_calibration_table(rows) -> str:
    """Render rows of ``(dataset, predictor, beta, without_pc, with_pc)`` reports.

    Layout: Dataset | Predictor | PC beta | Error | Without PC | With PC | Change.
    """
    header = ("Dataset", "Predictor", "PC beta", "Error", "Without PC", "With PC", "Change")
    lines = []
    for dataset, predictor, beta, without, with_ in rows:
        beta_text = "-" if beta is None else f"~{beta:.0%}"
        for metric in ("ece", "brier"):
            before, after = getattr(without, metric), getattr(with_, metric)
            lines.append(
                (
                    dataset,
                    predictor,
                    beta_text,
                    "ECE" if metric == "ece" else "Brier",
                    f"{before:.2e}",
                    f"{after:.2e}",
                    f"{relative_change(before, after):+.1%}",
                )
            )
    widths = [max(len(str(r[i])) for r in [header, *lines]) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*header), "  ".join("-" * w for w in widths)]
    out.extend(fmt.format(*r) for r in lines)
    return "\n".join(out) + "\n"


def reliability_curve(predictions, labels, bins: int | None = None):
    """Per-bin ``(mean_prediction, positive_rate)`` on equal-mass bins (sweep choice by default)."""
    p = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if bins is None:
        _, bins = ece_em_sweep(p, y)
    order = np.lexsort((y, p))
    _, mean_p, rate = _equal_mass_stats(p[order], y[order], bins)
    return mean_p, rate
