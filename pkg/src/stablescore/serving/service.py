"""Request handling: validate, route, score, mirror to shadows.

Everything a request reads lives in one immutable :class:`ServingSnapshot`.
Admin reloads build a new snapshot and rebind a single attribute, so each
request runs entirely under the snapshot it picked up first.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
import zlib
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np
import yaml

from stablescore.routing import (
    DuplicatePredictorId,
    NoMatchingRule,
    ParseError,
    RoutingConfig,
    RoutingDecision,
    load_config,
    resolve,
)
from stablescore.serving.backends import ExpertBackend
from stablescore.transforms import (
    BackendUnavailable,
    QuantileTable,
    TableMissing,
    predict,
)
from stablescore.types import (
    PredictorSpec,
    ScoreResponse,
    ValidationError,
    validate_event,
)

log = logging.getLogger(__name__)


class NotReady(RuntimeError):
    code = "NotReady"


class WarmupTimeout(RuntimeError):
    code = "WarmupTimeout"


@dataclass(frozen=True)
class ShadowRecord:
    event_id: str
    tenant_id: str
    predictor_id: str
    score: float
    config_version: str
    timestamp: str

    def to_json(self) -> str:
        return json.dumps(self.__dict__, separators=(",", ":"))


@dataclass(frozen=True)
class ServingSnapshot:
    routing: RoutingConfig
    predictors: Mapping[str, PredictorSpec]
    tables: Mapping[str, QuantileTable]
    backends: Mapping[str, Any]

    def __post_init__(self) -> None:
        for name in ("predictors", "tables", "backends"):
            object.__setattr__(self, name, MappingProxyType(dict(getattr(self, name))))
        for spec in self.predictors.values():
            for expert in spec.experts:
                if expert.backend_ref not in self.backends:
                    raise ValidationError(
                        f"predictor {spec.predictor_id!r} references unknown backend "
                        f"{expert.backend_ref!r}"
                    )
            if spec.quantile_table_ref not in self.tables:
                raise ValidationError(
                    f"predictor {spec.predictor_id!r} references unknown table "
                    f"{spec.quantile_table_ref!r}"
                )
        missing = sorted(self.routing.predictor_names - set(self.predictors))
        if missing:
            raise ValidationError(f"routing targets unknown predictor(s): {missing}")

    @property
    def table_versions(self) -> dict[str, str]:
        return {k: t.version for k, t in sorted(self.tables.items())}


@dataclass
class ServiceStats:
    requests: int = 0
    live_errors: int = 0
    shadow_enqueued: int = 0
    shadow_dropped: int = 0
    shadow_failures: int = 0
    shadow_records: int = 0
    warmup_calls: int = 0


@dataclass
class ServiceSettings:
    sink_path: str | None = None
    shadow_queue_depth: int = 10_000
    warmup_count: int = 0
    warmup_timeout_s: float | None = None
    seed: int = 0
    host: str = "127.0.0.1"
    port: int = 8080


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


class ScoringService:
    def __init__(
        self,
        snapshot: ServingSnapshot,
        settings: ServiceSettings | None = None,
    ) -> None:
        self.settings = settings or ServiceSettings()
        self._snapshot = snapshot
        self._admin_lock = threading.Lock()
        self._stats_lock = threading.Lock()
        self.stats = ServiceStats()
        self._ready = threading.Event()
        self._shadow_q: queue.Queue = queue.Queue(maxsize=max(1, self.settings.shadow_queue_depth))
        self._sink = None
        if self.settings.sink_path:
            Path(self.settings.sink_path).parent.mkdir(parents=True, exist_ok=True)
            self._sink = open(self.settings.sink_path, "a", encoding="utf-8")
        self._worker = threading.Thread(target=self._shadow_loop, name="shadow-sink", daemon=True)
        self._worker.start()

    # -- state ---------------------------------------------------------------

    @property
    def snapshot(self) -> ServingSnapshot:
        return self._snapshot

    @property
    def ready(self) -> bool:
        return self._ready.is_set()

    def _count(self, name: str, n: int = 1) -> None:
        with self._stats_lock:
            setattr(self.stats, name, getattr(self.stats, name) + n)

    # -- scoring -------------------------------------------------------------

    def score(self, payload: Any) -> ScoreResponse:
        """Score one decoded request; shadows are queued, never awaited."""
        if not self._ready.is_set():
            raise NotReady("service is warming up")
        start = time.perf_counter_ns()
        snap = self._snapshot
        event = validate_event(payload)
        decision = resolve(event, snap.routing)
        self._count("requests")
        try:
            response = predict(event, snap.predictors[decision.live_predictor], snap.backends, snap.tables)
        except (BackendUnavailable, TableMissing):
            self._count("live_errors")
            raise
        for name in decision.shadow_predictors:
            try:
                self._shadow_q.put_nowait((snap, event, name))
                self._count("shadow_enqueued")
            except queue.Full:
                self._count("shadow_dropped")
        elapsed = (time.perf_counter_ns() - start) // 1000
        return replace(response, latency_micros=int(elapsed))

    def decide(self, payload: Any) -> RoutingDecision:
        return resolve(validate_event(payload), self._snapshot.routing)

    def handle_score(self, body: bytes | str | Mapping) -> tuple[int, dict]:
        """HTTP-agnostic handler: returns ``(status, json_body)``."""
        try:
            payload = json.loads(body) if isinstance(body, (bytes, str)) else body
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            return 400, {"error": "InvalidPayload", "message": f"body is not JSON: {exc}"}
        try:
            return 200, self.score(payload).to_wire()
        except ValidationError as exc:
            return 400, exc.to_dict()
        except NoMatchingRule as exc:
            return 404, {"error": exc.code, "message": str(exc)}
        except NotReady as exc:
            return 503, {"error": exc.code, "message": str(exc)}
        except (BackendUnavailable, TableMissing) as exc:
            return 500, {"error": exc.code, "message": str(exc)}

    # -- shadows -------------------------------------------------------------

    def _shadow_loop(self) -> None:
        while True:
            item = self._shadow_q.get()
            if item is None:
                self._shadow_q.task_done()
                return
            snap, event, name = item
            try:
                response = predict(event, snap.predictors[name], snap.backends, snap.tables, shadow=True)
                record = ShadowRecord(
                    event_id=event.event_id,
                    tenant_id=event.tenant_id,
                    predictor_id=name,
                    score=float(response.score),
                    config_version=snap.routing.config_version,
                    timestamp=_utc_now(),
                )
                if self._sink is not None:
                    self._sink.write(record.to_json() + "\n")
                self._count("shadow_records")
            except Exception:  # shadow failures must never surface
                log.debug("shadow scoring failed for %s", name, exc_info=True)
                self._count("shadow_failures")
            finally:
                self._shadow_q.task_done()

    def flush_shadows(self) -> None:
        """Block until every queued shadow request has been written."""
        self._shadow_q.join()
        if self._sink is not None:
            self._sink.flush()

    def close(self) -> None:
        self.flush_shadows()
        self._shadow_q.put(None)
        self._worker.join(timeout=5)
        if self._sink is not None:
            self._sink.close()
            self._sink = None

    # -- warm-up -------------------------------------------------------------

    def synthetic_payloads(self, predictor_id: str, count: int, seed: int) -> list[dict]:
        snap = self._snapshot
        spec = snap.predictors[predictor_id]
        names: list[str] = []
        for expert in spec.experts:
            for f in getattr(snap.backends[expert.backend_ref], "feature_names", ()):
                if f not in names:
                    names.append(f)
        names = names or ["x"]
        rng = np.random.default_rng([seed, zlib.crc32(predictor_id.encode())])
        values = rng.normal(size=(count, len(names)))
        return [
            {
                "event_id": f"warmup-{predictor_id}-{i}",
                "tenant": "__warmup__",
                "features": dict(zip(names, row.tolist())),
            }
            for i, row in enumerate(values)
        ]

    def warmup(self, count: int | None = None, seed: int | None = None, timeout_s: float | None = None) -> int:
        """Drive synthetic requests through every predictor, then mark ready.

        Responses are discarded and nothing reaches the shadow sink. Returns
        the number of internal calls made.
        """
        count = self.settings.warmup_count if count is None else count
        seed = self.settings.seed if seed is None else seed
        timeout_s = self.settings.warmup_timeout_s if timeout_s is None else timeout_s
        deadline = None if timeout_s is None else time.monotonic() + timeout_s
        calls = 0
        snap = self._snapshot
        for predictor_id in sorted(snap.predictors):
            spec = snap.predictors[predictor_id]
            for payload in self.synthetic_payloads(predictor_id, count, seed):
                if deadline is not None and time.monotonic() > deadline:
                    raise WarmupTimeout(f"warm-up exceeded {timeout_s}s after {calls} calls")
                event = validate_event(payload)
                try:
                    predict(event, spec, snap.backends, snap.tables)
                except BackendUnavailable:
                    pass
                calls += 1
        self._count("warmup_calls", calls)
        self._ready.set()
        return calls

    # -- admin ---------------------------------------------------------------

    def reload_config(self, document: str) -> dict:
        with self._admin_lock:
            old = self._snapshot
            config = load_config(document, old.predictors)
            new = replace(old, routing=config)
            self._snapshot = new
        return {"old_version": old.routing.config_version, "new_version": config.config_version}

    def reload_table(self, table_id: str, table: QuantileTable) -> dict:
        with self._admin_lock:
            old = self._snapshot
            if table_id not in old.tables:
                raise ValidationError(f"unknown quantile table id {table_id!r}")
            tables = dict(old.tables)
            previous = tables[table_id].version
            tables[table_id] = table
            self._snapshot = replace(old, tables=tables)
        return {"table_id": table_id, "old_version": previous, "new_version": table.version}

    def handle_admin_config(self, body: bytes | str) -> tuple[int, dict]:
        text = body.decode() if isinstance(body, bytes) else body
        try:
            return 200, self.reload_config(text)
        except ValidationError as exc:
            return 422, exc.to_dict()

    def handle_admin_table(self, body: bytes | str, table_id: str | None = None) -> tuple[int, dict]:
        text = body.decode() if isinstance(body, bytes) else body
        try:
            doc = json.loads(text)
            if not isinstance(doc, dict):
                raise ValidationError("quantile table document must be a JSON object")
            table_id = table_id or doc.get("table_id")
            if not table_id:
                raise ValidationError("table_id missing (query parameter or document field)")
            return 200, self.reload_table(str(table_id), QuantileTable.from_dict(doc))
        except json.JSONDecodeError as exc:
            return 422, {"error": "ParseError", "message": str(exc)}
        except ValidationError as exc:
            return 422, exc.to_dict()

    def version_info(self) -> dict:
        snap = self._snapshot
        return {"config_version": snap.routing.config_version, "tables": snap.table_versions}


# -- deployment documents ------------------------------------------------------


def _load_table(value: Any, base: Path) -> QuantileTable:
    if value == "identity":
        return QuantileTable.identity()
    if isinstance(value, Mapping):
        return QuantileTable.from_dict(value)
    if isinstance(value, str):
        return QuantileTable.from_json((base / value).read_text())
    raise ValidationError(f"cannot interpret quantile table entry {value!r}")


def load_deployment(document: str, base_dir: str | Path = ".") -> tuple[ServingSnapshot, ServiceSettings]:
    """Build a snapshot and settings from a deployment YAML document.

    Top-level keys: ``backends`` (list), ``predictors`` (list), ``tables``
    (id -> ``identity`` | path | inline document), ``routing`` (inline rules)
    or ``routing_file`` (path), and optional ``service`` settings.
    """
    base = Path(base_dir)
    try:
        doc = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid YAML: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise ParseError("deployment document must be a mapping")

    backends: dict[str, ExpertBackend] = {}
    for b in doc.get("backends") or []:
        backend = ExpertBackend.from_dict(b)
        if backend.model_id in backends:
            raise ValidationError(f"backend {backend.model_id!r} defined twice")
        backends[backend.model_id] = backend

    predictors: dict[str, PredictorSpec] = {}
    for p in doc.get("predictors") or []:
        spec = PredictorSpec.from_dict(p)
        if spec.predictor_id in predictors:
            raise DuplicatePredictorId(f"predictor {spec.predictor_id!r} defined twice")
        predictors[spec.predictor_id] = spec

    tables = {str(k): _load_table(v, base) for k, v in (doc.get("tables") or {}).items()}

    if "routing_file" in doc:
        routing_text = (base / doc["routing_file"]).read_text()
    else:
        routing_text = yaml.safe_dump({"routing": doc.get("routing") or {}}, sort_keys=False)
    routing = load_config(routing_text, predictors)

    settings = ServiceSettings(**(doc.get("service") or {}))
    if settings.sink_path and not Path(settings.sink_path).is_absolute():
        settings.sink_path = str(base / settings.sink_path)
    return ServingSnapshot(routing, predictors, tables, backends), settings
