import math

import pytest
from hypothesis import given, strategies as st

from stablescore.types import (
    EmptyFeatureVector,
    Event,
    ExpertSpec,
    InvalidPayload,
    InvalidSpec,
    MissingTenant,
    NonFiniteFeature,
    PredictorSpec,
    Score,
    ScoreResponse,
    validate_event,
)


def test_validate_event_passes_fields_through():
    event = validate_event({"tenant": "bank1", "features": {"amount": 10.0}})
    assert event.tenant_id == "bank1"
    assert dict(event.features) == {"amount": 10.0}
    assert event.event_id  # generated


def test_validate_event_accepts_field_names_and_tags():
    event = validate_event(
        {
            "tenant_id": "t",
            "schema_id": "s",
            "geography": "EMEA",
            "event_id": "x1",
            "features": {"a": 1},
            "tags": {"channel": "web"},
        }
    )
    assert (event.schema_id, event.geography, event.event_id) == ("s", "EMEA", "x1")
    assert dict(event.tags) == {"channel": "web"}


def test_empty_tenant_rejected():
    with pytest.raises(MissingTenant):
        validate_event({"tenant": "", "features": {"amount": 1.0}})


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_feature_rejected(bad):
    with pytest.raises(NonFiniteFeature):
        validate_event({"tenant": "bank1", "features": {"amount": bad}})


@pytest.mark.parametrize(
    "raw, error",
    [
        ({"tenant": "b", "features": {}}, EmptyFeatureVector),
        ({"tenant": "b"}, EmptyFeatureVector),
        ({"tenant": "b", "features": {"a": "x"}}, InvalidPayload),
        ({"tenant": "b", "features": {"a": True}}, InvalidPayload),
        ({"tenant": "b", "features": [1.0]}, InvalidPayload),
        ({"tenant": 3, "features": {"a": 1}}, InvalidPayload),
        ([1, 2], InvalidPayload),
    ],
)
def test_malformed_payloads(raw, error):
    with pytest.raises(error):
        validate_event(raw)


def test_error_to_dict_is_machine_readable():
    with pytest.raises(MissingTenant) as info:
        validate_event({"features": {"a": 1}})
    assert info.value.to_dict()["error"] == "MissingTenant"


def test_event_constructor_enforces_invariants():
    with pytest.raises(MissingTenant):
        Event("", {"a": 1.0})
    with pytest.raises(NonFiniteFeature):
        Event("t", {"a": math.nan})


@given(st.floats(allow_nan=True, allow_infinity=True))
def test_score_is_always_in_unit_interval(x):
    if 0.0 <= x <= 1.0:
        assert Score(x) == x
    else:
        with pytest.raises(ValueError):
            Score(x)


@pytest.mark.parametrize("beta", [0.0, -0.1, 1.5])
def test_expert_ratio_bounds(beta):
    with pytest.raises(InvalidSpec):
        ExpertSpec("m", "m", beta)


@given(st.lists(st.floats(min_value=1e-6, max_value=1e6), min_size=1, max_size=8))
def test_predictor_weights_normalized_at_load(weights):
    experts = tuple(ExpertSpec(f"m{i}", f"m{i}") for i in range(len(weights)))
    spec = PredictorSpec("p", experts, tuple(weights), "t")
    assert abs(math.fsum(spec.aggregation_weights) - 1.0) <= 1e-12


def test_predictor_spec_shape_checks():
    e = (ExpertSpec("a", "a"), ExpertSpec("b", "b"))
    with pytest.raises(InvalidSpec):
        PredictorSpec("p", e, (1.0,), "t")
    with pytest.raises(InvalidSpec):
        PredictorSpec("p", e, (0.0, 0.0), "t")
    with pytest.raises(InvalidSpec):
        PredictorSpec("p", (), (), "t")
    assert not PredictorSpec("p", e[:1], (3.0,), "t").is_ensemble


def test_predictor_from_dict_defaults():
    spec = PredictorSpec.from_dict(
        {"predictor_id": "p", "quantile_table_ref": "t", "experts": [{"model_id": "a"}, {"model_id": "b"}]}
    )
    assert spec.aggregation_weights == (0.5, 0.5)
    assert spec.experts[0].backend_ref == "a"
    with pytest.raises(InvalidSpec):
        PredictorSpec.from_dict({"predictor_id": "p"})


def test_wire_format():
    r = ScoreResponse("e1", "p", Score(0.25), latency_micros=12)
    assert r.to_wire() == {"event_id": "e1", "predictor": "p", "score": 0.25, "latency_micros": 12}
