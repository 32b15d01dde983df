"""Offline fitting of quantile tables and the sample-size bound behind them."""

from __future__ import annotations

import csv
import io
import json
import math
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from stablescore.transforms import QuantileTable, ValidationError, _now_iso, default_levels

DEFAULT_RELATIVE_ERROR = 0.2
DEFAULT_Z = 1.96


class EmptySampleSet(ValidationError):
    code = "EmptySampleSet"


class LevelsNotSorted(ValidationError):
    code = "LevelsNotSorted"


class InsufficientSamplesWarning(UserWarning):
    """Raised through :mod:`warnings` when a table is fitted on too few scores."""

    def __init__(self, n: int, required: int, alert_rate: float) -> None:
        super().__init__(
            f"{n} samples is below the {required} needed to resolve alert rate {alert_rate:g}"
        )
        self.n = n
        self.required = required
        self.alert_rate = alert_rate


@dataclass(frozen=True)
class SampleSet:
    scores: np.ndarray
    tenant_id: str = ""
    predictor_id: str = ""
    window: tuple[str, str] = ("", "")

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=float).ravel()
        if scores.size == 0:
            raise EmptySampleSet("no scores to fit on")
        if not np.all((scores >= 0.0) & (scores <= 1.0)):
            raise ValidationError("sample scores must lie in [0, 1]")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return int(self.scores.size)


@dataclass(frozen=True)
class SampleSizeQuery:
    alert_rate: float
    relative_error: float = DEFAULT_RELATIVE_ERROR
    z_score: float = DEFAULT_Z

    def __post_init__(self) -> None:
        if not 0.0 < self.alert_rate < 1.0:
            raise ValidationError(f"alert rate must be in (0, 1), got {self.alert_rate!r}")
        if not self.relative_error > 0.0:
            raise ValidationError("relative error must be positive")
        if not self.z_score > 0.0:
            raise ValidationError("z-score must be positive")


def required_samples(q: SampleSizeQuery) -> int:
    """Smallest n with ``z * sqrt(a(1-a)/n) <= delta * a``."""
    a, d, z = q.alert_rate, q.relative_error, q.z_score
    n = z * z * (1.0 - a) / (d * d * a)
    # Guard against a few ulps of rounding (38032.000000000004) before the ceiling.
    return int(math.ceil(n * (1.0 - 8 * sys.float_info.epsilon)))


def _check_levels(levels: Sequence[float]) -> np.ndarray:
    lv = np.asarray(levels, dtype=float)
    if lv.ndim != 1 or lv.size < 2:
        raise LevelsNotSorted("need at least two probability levels")
    if np.any(np.diff(lv) <= 0):
        raise LevelsNotSorted("probability levels must be strictly increasing")
    if lv[0] < 0 or lv[-1] > 1:
        raise LevelsNotSorted("probability levels must lie in [0, 1]")
    return lv


def smallest_alert_rate(levels: Sequence[float]) -> float:
    """Finest alert rate a table resolves: one minus its largest interior level."""
    lv = np.asarray(levels, dtype=float)
    interior = lv[(lv > 0) & (lv < 1)]
    return float(1.0 - interior.max()) if interior.size else 0.5


def fit_quantile_table(
    samples: SampleSet,
    reference_q: Sequence[float] | None = None,
    levels: Sequence[float] | None = None,
    *,
    version: str = "v1",
    fitted_at: str | None = None,
    relative_error: float = DEFAULT_RELATIVE_ERROR,
    z_score: float = DEFAULT_Z,
) -> QuantileTable:
    """Fit source quantiles of ``samples`` and pair them with ``reference_q``.

    Quantiles use linear interpolation between order statistics. Endpoints are
    pinned to 0 and 1. Below the sample-size bound for the finest alert rate
    the table is still returned, with an :class:`InsufficientSamplesWarning`.
    """
    lv = _check_levels(levels if levels is not None else default_levels())
    ref = lv if reference_q is None else np.asarray(reference_q, dtype=float)
    if ref.shape != lv.shape:
        raise ValidationError(f"{ref.size} reference quantiles for {lv.size} levels")

    scores = samples.scores
    source = np.quantile(scores, lv, method="linear")
    source = np.maximum.accumulate(np.clip(source, 0.0, 1.0))
    source[0], source[-1] = 0.0, 1.0

    a = smallest_alert_rate(lv)
    need = required_samples(SampleSizeQuery(a, relative_error, z_score))
    if len(samples) < need:
        warnings.warn(InsufficientSamplesWarning(len(samples), need, a), stacklevel=2)

    return QuantileTable(
        source_q=tuple(source.tolist()),
        reference_q=tuple(ref.tolist()),
        version=version,
        fitted_at=fitted_at or _now_iso(),
        sample_count=len(samples),
    )


def uniform_reference(levels: Sequence[float] | None = None) -> np.ndarray:
    return np.array(_check_levels(levels if levels is not None else default_levels()))


# Low-alert-rate target: most mass near 0 with a thin tail toward 1.
SKEWED_REFERENCE_MIXTURE = (0.05, 1.0, 4.0, 4.0, 2.0)  # (w, a0, b0, a1, b1)


def skewed_reference(levels: Sequence[float] | None = None) -> np.ndarray:
    from stablescore.coldstart import BetaMixtureFit, mixture_ppf

    lv = _check_levels(levels if levels is not None else default_levels())
    w, a0, b0, a1, b1 = SKEWED_REFERENCE_MIXTURE
    fit = BetaMixtureFit(w=w, alpha0=a0, beta0=b0, alpha1=a1, beta1=b1)
    return mixture_ppf(lv, fit)


def reference_decile_masses(reference_q: Sequence[float], levels: Sequence[float]) -> np.ndarray:
    """Probability mass of each decile bin under a reference given by its quantiles."""
    cdf_at = np.interp(np.linspace(0, 1, 11), np.asarray(reference_q), np.asarray(levels))
    cdf_at[0], cdf_at[-1] = 0.0, 1.0
    return np.diff(cdf_at)


def load_reference(spec: str, levels: Sequence[float] | None = None) -> np.ndarray:
    """``uniform``, ``skewed`` or a path to a JSON list / table document."""
    if spec == "uniform":
        return uniform_reference(levels)
    if spec == "skewed":
        return skewed_reference(levels)
    doc = json.loads(Path(spec).read_text())
    values = doc["reference_q"] if isinstance(doc, dict) else doc
    ref = np.asarray(values, dtype=float)
    if np.any(np.diff(ref) <= 0):
        raise ValidationError("reference quantiles must be strictly increasing")
    return ref


@dataclass
class BoundReport:
    alert_rate: float
    relative_error: float
    z_score: float
    n: int
    k: int
    trials: int
    seed: int
    coverage: float
    threshold_mean: float
    threshold_var: float
    expected_mean: float
    expected_var: float
    asymptotic_var: float
    exceedance_mean: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def validate_sample_size_bound(
    a: float,
    delta: float,
    z: float,
    trials: int = 5000,
    rng_seed: int = 0,
    *,
    batch: int = 500,
) -> BoundReport:
    """Monte Carlo check of the sample-size bound.

    Each trial draws ``n = required_samples`` uniforms, takes the k-th lowest
    as the threshold with ``(n-k)/n ~ a``, and records whether the true
    exceedance probability ``1 - U(k)`` is within ``delta * a`` of ``a``.
    """
    if trials < 1:
        raise ValidationError("need at least one trial")
    if math.isinf(delta):
        n = 1
    else:
        n = max(1, required_samples(SampleSizeQuery(a, delta, z)))
    k = min(max(n - int(round(a * n)), 1), n)

    rng = np.random.default_rng(rng_seed)
    thresholds = np.empty(trials)
    done = 0
    while done < trials:
        m = min(batch, trials - done)
        u = rng.random((m, n))
        thresholds[done : done + m] = np.partition(u, k - 1, axis=1)[:, k - 1]
        done += m

    exceed = 1.0 - thresholds
    coverage = float(np.mean(np.abs(exceed - a) <= delta * a))
    return BoundReport(
        alert_rate=a,
        relative_error=delta,
        z_score=z,
        n=n,
        k=k,
        trials=trials,
        seed=rng_seed,
        coverage=coverage,
        threshold_mean=float(thresholds.mean()),
        threshold_var=float(thresholds.var(ddof=1)) if trials > 1 else 0.0,
        expected_mean=k / (n + 1),
        expected_var=k * (n - k + 1) / ((n + 1) ** 2 * (n + 2)),
        asymptotic_var=a * (1 - a) / n,
        exceedance_mean=float(exceed.mean()),
    )


def normal_coverage(z: float) -> float:
    """Two-sided confidence level implied by a z-score."""
    return float(special.erf(z / math.sqrt(2.0)))


# --- ingestion ---------------------------------------------------------------


def read_scores_csv(source: str | Path | io.TextIOBase) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a CSV with a ``score`` column and an optional ``label`` column."""
    fh = open(source, newline="") if isinstance(source, (str, Path)) else source
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "score" not in reader.fieldnames:
            raise ValidationError("CSV must have a 'score' header")
        has_label = "label" in reader.fieldnames
        scores, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                scores.append(float(row["score"]))
                if has_label:
                    labels.append(_parse_label(row["label"]))
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"line {lineno}: {exc}") from exc
    finally:
        if fh is not source:
            fh.close()
    return np.asarray(scores, dtype=float), (np.asarray(labels, dtype=bool) if has_label else None)


def _parse_label(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "1.0"):
        return True
    if t in ("0", "false", "no", "0.0"):
        return False
    raise ValueError(f"unrecognized label {text!r}")


def read_shadow_records(
    source: str | Path | Iterable[str],
    *,
    predictor_id: str | None = None,
    tenant_id: str | None = None,
    start: str | None = None,
    end: str | None = None,
) -> np.ndarray:
    """Scores from a shadow-sink JSONL file, filtered by predictor, tenant and time window.

    Window bounds compare ISO-8601 timestamps lexically: ``start <= ts < end``.
    """
    lines = Path(source).read_text().splitlines() if isinstance(source, (str, Path)) else source
    out = []
    for line in lines:
        if not line.strip():
            continue
        rec = json.loads(line)
        if predictor_id is not None and rec.get("predictor_id") != predictor_id:
            continue
        if tenant_id is not None and rec.get("tenant_id") != tenant_id:
            continue
        ts = rec.get("timestamp", "")
        if start is not None and ts < start:
            continue
        if end is not None and ts >= end:
            continue
        out.append(float(rec["score"]))
    return np.asarray(out, dtype=float)
