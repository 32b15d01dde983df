"""Scripted cold-start -> shadow -> refit -> promote run over the in-process service.

Stages:

1. ``coldstart``  fit the Beta-mixture prior on training scores, build table v0.
2. ``serve-v0``   serve drifted tenant traffic under v0; a shadow predictor
                  with an identity table records raw ensemble scores.
3. ``fit-v1``     fit table v1 on the shadow-sink scores.
4. ``promote``    swap v1 in through the admin table reload.
5. ``serve-v1``   serve fresh traffic under v1.
6. ``report``     per-bin relative error of raw / v0 / v1 against the reference.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from stablescore.coldstart import default_quantile_table, fit_beta_mixture
from stablescore.metrics import BinnedComparison, binned_relative_error
from stablescore.quantile_fit import (
    SampleSet,
    fit_quantile_table,
    load_reference,
    read_shadow_records,
    reference_decile_masses,
)
from stablescore.routing import load_config
from stablescore.serving.service import ScoringService, ServiceSettings, ServingSnapshot
from stablescore.synthetic import (
    DRIFTED_POPULATION,
    TRAINING_POPULATION,
    ensemble_backends,
    ensemble_predictor,
    ensemble_traffic,
)
from stablescore.transforms import QuantileTable, default_levels, pre_mapping_score
from stablescore.types import validate_event

TENANT = "newbank"
LIVE = "newbank-predictor"
RAW_SHADOW = "newbank-predictor-raw"
GLOBAL = "global-predictor"
FIXED_TIMESTAMP = "2000-01-01T00:00:00+00:00"

ROUTING_TEMPLATE = f"""\
routing:
  version: lifecycle-1
  scoringRules:
    - description: "Tenant-specific DAG for {TENANT}"
      condition:
        tenants: ["{TENANT}"]
      targetPredictorName: "{LIVE}"
    - description: "Default DAG for cold start clients"
      condition: {{}}
      targetPredictorName: "{GLOBAL}"
  shadowRules:
    - description: "Collect raw ensemble scores for {TENANT}"
      condition:
        tenants: ["{TENANT}"]
      targetPredictorNames: ["{RAW_SHADOW}"]
"""


class LifecycleError(RuntimeError):
    code = "LifecycleError"

    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class LifecycleSettings:
    seed: int = 0
    training_events: int = 50_000
    # Large enough that sampling error in the refitted table is small next to
    # the evaluation sample's own Wilson width.
    phase1_events: int = 300_000
    phase2_events: int = 50_000
    reference: str = "skewed"
    # Bonferroni-adjusted 95% family-wise level over ten bins.
    z: float = float(stats.norm.ppf(1 - 0.05 / 20))
    coldstart_trials: int = 8


@dataclass
class LifecycleReport:
    settings: LifecycleSettings
    coldstart_fit: dict
    comparisons: dict[str, BinnedComparison]
    table_versions: dict[str, str]
    v1_sample_count: int
    files: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "settings": self.settings.__dict__,
            "coldstart_fit": self.coldstart_fit,
            "table_versions": self.table_versions,
            "v1_sample_count": self.v1_sample_count,
            "reports": {name: cmp.to_dict() for name, cmp in self.comparisons.items()},
            "checks": self.checks(),
        }

    def checks(self) -> dict:
        v0 = self.comparisons["predictor v0"]
        v1 = self.comparisons["predictor v1"]
        return {
            "v0_max_relative_error": float(np.max(v0.relative_error)),
            "v0_has_bin_above_100pct": bool(np.any(v0.relative_error > 1.0)),
            "v1_all_bins_consistent": bool(np.all(v1.consistent_with_target())),
        }


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # any failure aborts with the stage name
        raise LifecycleError(name, exc) from exc


def _build_service(v0: QuantileTable, sink: Path, seed: int) -> ScoringService:
    backends = ensemble_backends()
    predictors = {
        LIVE: ensemble_predictor(LIVE, "newbank"),
        RAW_SHADOW: ensemble_predictor(RAW_SHADOW, "identity"),
        GLOBAL: ensemble_predictor(GLOBAL, "identity"),
    }
    tables = {"newbank": v0, "identity": QuantileTable.identity()}
    routing = load_config(ROUTING_TEMPLATE, predictors)
    sink.unlink(missing_ok=True)
    settings = ServiceSettings(sink_path=str(sink), shadow_queue_depth=1_000_000, seed=seed)
    return ScoringService(ServingSnapshot(routing, predictors, tables, backends), settings)


def _serve(service: ScoringService, payloads) -> np.ndarray:
    out = np.empty(len(payloads))
    for i, payload in enumerate(payloads):
        status, body = service.handle_score(payload)
        if status != 200:
            raise RuntimeError(f"request {payload['event_id']} failed with {status}: {body}")
        out[i] = body["score"]
    service.flush_shadows()
    return out


def run_lifecycle(output_dir: str | Path, settings: LifecycleSettings | None = None) -> LifecycleReport:
    s = settings or LifecycleSettings()
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(s.seed)
    levels = default_levels()
    reference = _stage("coldstart", load_reference, s.reference, levels)
    target = reference_decile_masses(reference, levels)

    def coldstart():
        payloads, labels = ensemble_traffic(
            s.training_events, rng, TRAINING_POPULATION, tenant="training", prefix="train"
        )
        spec, backends = ensemble_predictor("training", "identity"), ensemble_backends()
        scores = np.array([pre_mapping_score(validate_event(p), spec, backends) for p in payloads])
        fit = fit_beta_mixture(scores, labels, s.coldstart_trials, s.seed)
        return fit, default_quantile_table(fit, reference, levels, version="v0", fitted_at=FIXED_TIMESTAMP)

    fit, v0 = _stage("coldstart", coldstart)

    sink = out / "shadow_sink.jsonl"
    service = _stage("start", _build_service, v0, sink, s.seed)
    try:
        _stage("warmup", service.warmup, 100, s.seed)
        phase1, _ = ensemble_traffic(s.phase1_events, rng, DRIFTED_POPULATION, tenant=TENANT, prefix="p1")
        v0_scores = _stage("serve-v0", _serve, service, phase1)

        def fit_v1():
            raw = read_shadow_records(sink, predictor_id=RAW_SHADOW, tenant_id=TENANT)
            return raw, fit_quantile_table(
                SampleSet(raw, TENANT, LIVE), reference, levels, version="v1", fitted_at=FIXED_TIMESTAMP
            )

        raw_scores, v1 = _stage("fit-v1", fit_v1)

        def promote():
            status, body = service.handle_admin_table(v1.to_json(), "newbank")
            if status != 200:
                raise RuntimeError(f"admin reload rejected: {body}")
            return body

        _stage("promote", promote)
        phase2, _ = ensemble_traffic(s.phase2_events, rng, DRIFTED_POPULATION, tenant=TENANT, prefix="p2")
        v1_scores = _stage("serve-v1", _serve, service, phase2)
        versions = service.version_info()["tables"]
    finally:
        service.close()

    def report():
        comparisons = {
            "predictor raw": binned_relative_error(raw_scores, target, s.z),
            "predictor v0": binned_relative_error(v0_scores, target, s.z),
            "predictor v1": binned_relative_error(v1_scores, target, s.z),
        }
        rep = LifecycleReport(s, fit.to_dict(), comparisons, versions, v1.sample_count)
        rep.files = write_report(rep, out)
        return rep

    return _stage("report", report)


def write_report(report: LifecycleReport, out: Path) -> list[str]:
    from stablescore.plotting import plot_relative_error

    json_path = out / "lifecycle_report.json"
    json_path.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    csv_path = out / "lifecycle_bins.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = None
        for name, cmp in report.comparisons.items():
            for row in cmp.to_rows():
                row = {"predictor": name, **row}
                if writer is None:
                    writer = csv.DictWriter(fh, fieldnames=list(row))
                    writer.writeheader()
                writer.writerow(row)
    fig_path = plot_relative_error(
        report.comparisons, out / "lifecycle_relative_error.png", title="Default (v0) vs refitted (v1) table"
    )
    return [json_path.name, csv_path.name, fig_path.name]
