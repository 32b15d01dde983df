"""Score transformations and the predictor pipeline built from them.

A predictor output is ``quantile_map(aggregate([posterior_correct(m_k(x), beta_k)]))``
for ensembles and ``quantile_map(m(x))`` for single-model predictors.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from typing import Any, Mapping, Protocol, Sequence

import numpy as np

from stablescore.types import Event, PredictorSpec, Score, ScoreResponse, ValidationError

DEFAULT_LEVEL_COUNT = 1001


class LengthMismatch(ValidationError):
    code = "LengthMismatch"


class InvalidQuantileTable(ValidationError):
    code = "InvalidQuantileTable"


class BackendUnavailable(RuntimeError):
    code = "BackendUnavailable"

    def __init__(self, model_id: str, reason: str = "") -> None:
        super().__init__(f"backend for {model_id!r} unavailable" + (f": {reason}" if reason else ""))
        self.model_id = model_id


class TableMissing(RuntimeError):
    code = "TableMissing"


class ExpertBackendLike(Protocol):
    def score(self, event: Event) -> float: ...


def default_levels(n: int = DEFAULT_LEVEL_COUNT) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def posterior_correct(y_raw, beta: float):
    """Undo the score inflation caused by keeping only ``beta`` of the negatives.

    Works elementwise on arrays. Scalars come back as plain floats.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must be in (0, 1], got {beta!r}")
    if np.ndim(y_raw) == 0:
        y = float(y_raw)
        out = beta * y / (1.0 - (1.0 - beta) * y)
        return min(max(out, 0.0), 1.0)
    y = np.asarray(y_raw, dtype=float)
    return np.clip(beta * y / (1.0 - (1.0 - beta) * y), 0.0, 1.0)


def undersampling_bias(p, beta: float):
    """Posterior a model trained with negatives kept at rate ``beta`` reports for true ``p``."""
    p = np.asarray(p, dtype=float) if np.ndim(p) else float(p)
    return p / (p + beta * (1.0 - p))


@dataclass(frozen=True)
class AggregationSpec:
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        weights = tuple(float(w) for w in self.weights)
        if not weights or any(w < 0 or not math.isfinite(w) for w in weights):
            raise ValidationError("aggregation weights must be non-negative and non-empty")
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ValidationError(f"aggregation weights sum to {math.fsum(weights)!r}, not 1")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def normalized(cls, weights: Sequence[float]) -> "AggregationSpec":
        total = math.fsum(weights)
        if total <= 0:
            raise ValidationError("aggregation weights sum to zero")
        return cls(tuple(w / total for w in weights))


def aggregate(corrected: Sequence[float], spec: AggregationSpec) -> float:
    if len(corrected) != len(spec.weights):
        raise LengthMismatch(f"{len(corrected)} scores for {len(spec.weights)} weights")
    if len(corrected) == 1:
        return float(corrected[0])
    total = math.fsum(w * s for w, s in zip(spec.weights, corrected))
    # Keep the convexity bound exact despite rounding.
    return min(max(total, min(corrected)), max(corrected))


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class QuantileTable:
    """Paired source/reference knots of a monotone piecewise-linear map.

    Runs of equal source quantiles (probability atoms) are collapsed into one
    knot carrying the reference value of the run's last index, so every
    stored segment has positive source width.
    """

    source_q: tuple[float, ...]
    reference_q: tuple[float, ...]
    version: str = "v0"
    fitted_at: str = field(default_factory=_now_iso)
    sample_count: int = 0

    def __post_init__(self) -> None:
        src = [float(v) for v in self.source_q]
        ref = [float(v) for v in self.reference_q]
        if len(src) != len(ref):
            raise InvalidQuantileTable(f"{len(src)} source vs {len(ref)} reference quantiles")
        if len(src) < 2:
            raise InvalidQuantileTable("a table needs at least two knots")
        for name, values in (("source_q", src), ("reference_q", ref)):
            if any(not (0.0 <= v <= 1.0) for v in values):
                raise InvalidQuantileTable(f"{name} values must lie in [0, 1]")
        if src[0] != 0.0 or src[-1] != 1.0:
            raise InvalidQuantileTable("source_q must start at 0 and end at 1")
        if any(b < a for a, b in zip(src, src[1:])):
            raise InvalidQuantileTable("source_q must be non-decreasing")
        if any(b <= a for a, b in zip(ref, ref[1:])):
            raise InvalidQuantileTable("reference_q must be strictly increasing")
        if int(self.sample_count) < 0:
            raise InvalidQuantileTable("sample_count must be >= 0")

        keep_src, keep_ref = [], []
        for s, r in zip(src, ref):
            if keep_src and s == keep_src[-1]:
                keep_ref[-1] = r
            else:
                keep_src.append(s)
                keep_ref.append(r)
        object.__setattr__(self, "source_q", tuple(keep_src))
        object.__setattr__(self, "reference_q", tuple(keep_ref))
        object.__setattr__(self, "sample_count", int(self.sample_count))

    @classmethod
    def identity(cls, n: int = DEFAULT_LEVEL_COUNT, version: str = "identity") -> "QuantileTable":
        levels = tuple(default_levels(n).tolist())
        return cls(levels, levels, version=version, fitted_at="1970-01-01T00:00:00+00:00")

    def __len__(self) -> int:
        return len(self.source_q)

    @cached_property
    def _arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.source_q), np.asarray(self.reference_q)

    def map_array(self, y) -> np.ndarray:
        """Vectorized :func:`quantile_map`."""
        src, ref = self._arrays
        y = np.asarray(y, dtype=float)
        i = np.clip(np.searchsorted(src, y, side="right") - 1, 0, len(src) - 2)
        # Fraction along the segment stays in [0, 1] even for subnormal widths.
        frac = np.clip((y - src[i]) / (src[i + 1] - src[i]), 0.0, 1.0)
        out = ref[i] + frac * (ref[i + 1] - ref[i])
        out = np.minimum(out, ref[i + 1])
        return np.where(y >= src[-1], ref[-1], out)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "fitted_at": self.fitted_at,
            "sample_count": self.sample_count,
            "source_q": list(self.source_q),
            "reference_q": list(self.reference_q),
        }

    def to_json(self) -> str:
        # repr-based float formatting round-trips exactly.
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "QuantileTable":
        try:
            return cls(
                source_q=tuple(doc["source_q"]),
                reference_q=tuple(doc["reference_q"]),
                version=str(doc.get("version", "v0")),
                fitted_at=str(doc.get("fitted_at", "")),
                sample_count=int(doc.get("sample_count", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise InvalidQuantileTable(f"malformed quantile table document: {exc!r}") from exc

    @classmethod
    def from_json(cls, text: str) -> "QuantileTable":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidQuantileTable(f"not valid JSON: {exc}") from exc
        if not isinstance(doc, Mapping):
            raise InvalidQuantileTable("quantile table document must be a JSON object")
        return cls.from_dict(doc)


def quantile_map(y: float, table: QuantileTable) -> float:
    src, ref = table.source_q, table.reference_q
    y = float(y)
    if y >= src[-1]:
        return ref[-1]
    i = bisect_right(src, y) - 1
    if i < 0:
        i = 0
    lo_s, hi_s = src[i], src[i + 1]
    lo_r, hi_r = ref[i], ref[i + 1]
    frac = min(max((y - lo_s) / (hi_s - lo_s), 0.0), 1.0)
    return min(lo_r + frac * (hi_r - lo_r), hi_r)


def predict(
    event: Event,
    spec: PredictorSpec,
    backends: Mapping[str, ExpertBackendLike],
    tables: Mapping[str, QuantileTable],
    *,
    shadow: bool = False,
) -> ScoreResponse:
    """Run one predictor DAG for ``event``.

    Raises :class:`BackendUnavailable` when an expert cannot be resolved or fails.
    """
    table = tables.get(spec.quantile_table_ref)
    if table is None:
        raise TableMissing(f"quantile table {spec.quantile_table_ref!r} is not loaded")

    raw = []
    for expert in spec.experts:
        backend = backends.get(expert.backend_ref)
        if backend is None:
            raise BackendUnavailable(expert.model_id, "not registered")
        try:
            value = float(backend.score(event))
        except BackendUnavailable:
            raise
        except Exception as exc:
            raise BackendUnavailable(expert.model_id, repr(exc)) from exc
        if not 0.0 <= value <= 1.0:
            raise BackendUnavailable(expert.model_id, f"score {value!r} outside [0, 1]")
        raw.append(value)

    if spec.is_ensemble:
        if spec.apply_posterior_correction:
            corrected = [
                posterior_correct(s, e.undersampling_ratio) for s, e in zip(raw, spec.experts)
            ]
        else:
            corrected = raw
        combined = math.fsum(w * s for w, s in zip(spec.aggregation_weights, corrected))
        combined = min(max(combined, min(corrected)), max(corrected))
    else:
        combined = raw[0]

    return ScoreResponse(
        event_id=event.event_id,
        predictor_id=spec.predictor_id,
        score=Score(quantile_map(combined, table)),
        shadow=shadow,
    )


def pre_mapping_score(
    event: Event, spec: PredictorSpec, backends: Mapping[str, ExpertBackendLike]
) -> float:
    """The aggregated score before quantile mapping (what a table is fitted on)."""
    identity = {spec.quantile_table_ref: QuantileTable((0.0, 1.0), (0.0, 1.0), fitted_at="")}
    return float(predict(event, spec, backends, identity).score)
