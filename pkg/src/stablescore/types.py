"""Domain vocabulary shared by every module.

All objects here are immutable once built and safe to share between threads.
"""

from __future__ import annotations

import math
import uuid
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping


class ValidationError(ValueError):
    """Base class for rejected inputs. ``code`` is a stable machine-readable tag."""

    code = "ValidationError"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class MissingTenant(ValidationError):
    code = "MissingTenant"


class NonFiniteFeature(ValidationError):
    code = "NonFiniteFeature"


class EmptyFeatureVector(ValidationError):
    code = "EmptyFeatureVector"


class InvalidPayload(ValidationError):
    code = "InvalidPayload"


class InvalidSpec(ValidationError):
    code = "InvalidSpec"


class Score(float):
    """A float constrained to the closed interval [0, 1]."""

    __slots__ = ()

    def __new__(cls, value: float) -> "Score":
        v = float(value)
        if not 0.0 <= v <= 1.0:  # also rejects NaN
            raise ValueError(f"score must lie in [0, 1], got {value!r}")
        return super().__new__(cls, v)

    @property
    def value(self) -> float:
        return float(self)


@dataclass(frozen=True)
class Event:
    tenant_id: str
    features: Mapping[str, float]
    geography: str = ""
    schema_id: str = ""
    event_id: str = ""
    # Extra intent dimensions; carried along but never matched by routing.
    tags: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.tenant_id:
            raise MissingTenant("tenant_id must be a non-empty string")
        if not self.features:
            raise EmptyFeatureVector("feature vector is empty")
        for name, value in self.features.items():
            if not math.isfinite(value):
                raise NonFiniteFeature(f"feature {name!r} is not finite: {value!r}")
        object.__setattr__(self, "features", MappingProxyType(dict(self.features)))
        object.__setattr__(self, "tags", MappingProxyType(dict(self.tags)))


@dataclass(frozen=True)
class ExpertSpec:
    model_id: str
    backend_ref: str
    undersampling_ratio: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.undersampling_ratio <= 1.0:
            raise InvalidSpec(
                f"undersampling ratio of {self.model_id!r} must be in (0, 1], "
                f"got {self.undersampling_ratio!r}"
            )


@dataclass(frozen=True)
class PredictorSpec:
    """An ensemble (or single model) plus the quantile table it maps through.

    Aggregation weights are normalized to sum to one on construction, so the
    request path only multiplies and adds.
    """

    predictor_id: str
    experts: tuple[ExpertSpec, ...]
    aggregation_weights: tuple[float, ...]
    quantile_table_ref: str
    apply_posterior_correction: bool = True

    def __post_init__(self) -> None:
        experts = tuple(self.experts)
        weights = tuple(float(w) for w in self.aggregation_weights)
        if not experts:
            raise InvalidSpec(f"predictor {self.predictor_id!r} has no experts")
        if len(experts) != len(weights):
            raise InvalidSpec(
                f"predictor {self.predictor_id!r}: {len(experts)} experts but "
                f"{len(weights)} weights"
            )
        if any(not math.isfinite(w) or w < 0 for w in weights):
            raise InvalidSpec(f"predictor {self.predictor_id!r}: weights must be non-negative")
        total = math.fsum(weights)
        if total <= 0:
            raise InvalidSpec(f"predictor {self.predictor_id!r}: weights sum to zero")
        object.__setattr__(self, "experts", experts)
        object.__setattr__(self, "aggregation_weights", tuple(w / total for w in weights))

    @property
    def is_ensemble(self) -> bool:
        return len(self.experts) > 1

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "PredictorSpec":
        try:
            experts = tuple(
                ExpertSpec(
                    model_id=str(e["model_id"]),
                    backend_ref=str(e.get("backend_ref", e["model_id"])),
                    undersampling_ratio=float(e.get("undersampling_ratio", 1.0)),
                )
                for e in doc["experts"]
            )
            weights = doc.get("aggregation_weights")
            if weights is None:
                weights = [1.0] * len(experts)
            return cls(
                predictor_id=str(doc["predictor_id"]),
                experts=experts,
                aggregation_weights=tuple(weights),
                quantile_table_ref=str(doc["quantile_table_ref"]),
                apply_posterior_correction=bool(doc.get("apply_posterior_correction", True)),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidSpec(f"malformed predictor document: {exc!r}") from exc


@dataclass(frozen=True)
class ScoreResponse:
    event_id: str
    predictor_id: str
    score: Score
    latency_micros: int = 0
    shadow: bool = False

    def to_wire(self) -> dict:
        return {
            "event_id": self.event_id,
            "predictor": self.predictor_id,
            "score": float(self.score),
            "latency_micros": self.latency_micros,
        }


def _as_str(payload: Mapping[str, Any], *keys: str) -> str:
    for key in keys:
        if key in payload and payload[key] is not None:
            value = payload[key]
            if not isinstance(value, str):
                raise InvalidPayload(f"field {key!r} must be a string")
            return value
    return ""


def validate_event(raw: Any) -> Event:
    """Turn a decoded request payload into an :class:`Event`.

    Accepts the wire names (``tenant``, ``geography``, ``schema``) and the
    field names (``tenant_id``, ``schema_id``). A missing ``event_id`` is
    replaced by a random UUID.
    """
    if not isinstance(raw, Mapping):
        raise InvalidPayload("request payload must be a JSON object")
    tenant = _as_str(raw, "tenant", "tenant_id")
    if not tenant:
        raise MissingTenant("tenant is missing or empty")
    features = raw.get("features")
    if features is None or (isinstance(features, Mapping) and not features):
        raise EmptyFeatureVector("feature vector is empty")
    if not isinstance(features, Mapping):
        raise InvalidPayload("features must be an object of name -> number")
    parsed: dict[str, float] = {}
    for name, value in features.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidPayload(f"feature {name!r} is not a number")
        value = float(value)
        if not math.isfinite(value):
            raise NonFiniteFeature(f"feature {name!r} is not finite")
        parsed[str(name)] = value
    tags = raw.get("tags") or {}
    if not isinstance(tags, Mapping):
        raise InvalidPayload("tags must be an object")
    return Event(
        tenant_id=tenant,
        features=parsed,
        geography=_as_str(raw, "geography"),
        schema_id=_as_str(raw, "schema", "schema_id"),
        event_id=_as_str(raw, "event_id") or uuid.uuid4().hex,
        tags={str(k): str(v) for k, v in tags.items()},
    )

