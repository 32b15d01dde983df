import json

import pytest

from stablescore.lifecycle import LifecycleError, LifecycleSettings, run_lifecycle
from stablescore.quantile_fit import EmptySampleSet

SMALL = dict(training_events=5000, phase1_events=20_000, phase2_events=5000, coldstart_trials=1)


def test_small_run_produces_reports(tmp_path):
    report = run_lifecycle(tmp_path, LifecycleSettings(**SMALL))
    assert report.files == ["lifecycle_report.json", "lifecycle_bins.csv", "lifecycle_relative_error.png"]
    for name in report.files:
        assert (tmp_path / name).stat().st_size > 0
    doc = json.loads((tmp_path / "lifecycle_report.json").read_text())
    assert set(doc["reports"]) == {"predictor raw", "predictor v0", "predictor v1"}
    assert doc["table_versions"]["newbank"] == "v1"
    assert doc["v1_sample_count"] == 20_000
    # drift under v0 shows up even at this size
    assert doc["checks"]["v0_has_bin_above_100pct"]
    rows = (tmp_path / "lifecycle_bins.csv").read_text().splitlines()
    assert len(rows) == 1 + 30


def test_reports_are_byte_identical_for_a_seed(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_lifecycle(a, LifecycleSettings(seed=5, **SMALL))
    run_lifecycle(b, LifecycleSettings(seed=5, **SMALL))
    for name in ("lifecycle_report.json", "lifecycle_bins.csv", "lifecycle_relative_error.png"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_zero_traffic_fails_at_fit_stage(tmp_path):
    with pytest.raises(LifecycleError) as info:
        run_lifecycle(tmp_path, LifecycleSettings(**dict(SMALL, phase1_events=0)))
    assert info.value.stage == "fit-v1"
    assert isinstance(info.value.cause, EmptySampleSet)
