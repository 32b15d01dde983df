"""Deterministic mock expert backends standing in for remote model servers."""

from __future__ import annotations

import math
import time
import zlib
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping

from stablescore.types import Event, InvalidSpec

KINDS = ("table-lookup", "linear-logistic", "scripted-sequence")


def _stable_unit(key: str) -> float:
    """Deterministic pseudo-uniform in [0, 1) derived from a string."""
    return zlib.crc32(key.encode()) / 2**32


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@dataclass(frozen=True)
class ExpertBackend:
    """A mock model.

    ``table-lookup`` returns ``lookup[event_id]`` (``default_score`` when absent).
    ``linear-logistic`` returns ``sigmoid(bias + sum(weights[f] * x[f]))``.
    ``scripted-sequence`` returns ``sequence[i]`` with ``i`` taken from the
    ``sequence_index`` feature, or from a hash of the event id.

    ``default_features`` stubs a feature store: they are merged under the
    request's features, so values sent by the client win.
    """

    model_id: str
    kind: str
    lookup: Mapping[str, float] = field(default_factory=dict)
    default_score: float = 0.0
    weights: Mapping[str, float] = field(default_factory=dict)
    bias: float = 0.0
    sequence: tuple[float, ...] = ()
    default_features: Mapping[str, float] = field(default_factory=dict)
    latency_s: float = 0.0
    latency_jitter_s: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown backend kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "scripted-sequence" and not self.sequence:
            raise InvalidSpec(f"scripted backend {self.model_id!r} has an empty sequence")
        for value in list(self.lookup.values()) + list(self.sequence) + [self.default_score]:
            if not 0.0 <= value <= 1.0:
                raise InvalidSpec(f"backend {self.model_id!r} holds score {value!r} outside [0, 1]")
        object.__setattr__(self, "lookup", MappingProxyType(dict(self.lookup)))
        object.__setattr__(self, "weights", MappingProxyType(dict(self.weights)))
        object.__setattr__(self, "sequence", tuple(float(v) for v in self.sequence))
        object.__setattr__(self, "default_features", MappingProxyType(dict(self.default_features)))

    @property
    def feature_names(self) -> tuple[str, ...]:
        if self.kind == "linear-logistic":
            return tuple(self.weights)
        if self.kind == "scripted-sequence":
            return ("sequence_index",)
        return ()

    def _features(self, event: Event) -> Mapping[str, float]:
        if not self.default_features:
            return event.features
        merged = dict(self.default_features)
        merged.update(event.features)
        return merged

    def score(self, event: Event) -> float:
        if self.latency_s or self.latency_jitter_s:
            delay = self.latency_s + self.latency_jitter_s * _stable_unit(event.event_id + self.model_id)
            time.sleep(delay)
        if self.kind == "linear-logistic":
            x = self._features(event)
            z = self.bias
            for name, w in self.weights.items():
                z += w * x.get(name, 0.0)
            return sigmoid(z)
        if self.kind == "table-lookup":
            return self.lookup.get(event.event_id, self.default_score)
        x = self._features(event)
        if "sequence_index" in x:
            i = int(x["sequence_index"])
        else:
            i = zlib.crc32(event.event_id.encode())
        return self.sequence[i % len(self.sequence)]

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ExpertBackend":
        try:
            return cls(
                model_id=str(doc["model_id"]),
                kind=str(doc["kind"]),
                lookup={str(k): float(v) for k, v in (doc.get("lookup") or {}).items()},
                default_score=float(doc.get("default_score", 0.0)),
                weights={str(k): float(v) for k, v in (doc.get("weights") or {}).items()},
                bias=float(doc.get("bias", 0.0)),
                sequence=tuple(float(v) for v in doc.get("sequence") or ()),
                default_features={
                    str(k): float(v) for k, v in (doc.get("default_features") or {}).items()
                },
                latency_s=float(doc.get("latency_ms", 0.0)) / 1000.0,
                latency_jitter_s=float(doc.get("latency_jitter_ms", 0.0)) / 1000.0,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(f"malformed backend document: {exc!r}") from exc
