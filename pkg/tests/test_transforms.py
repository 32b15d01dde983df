
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stablescore.transforms import (
    AggregationSpec,
    BackendUnavailable,
    InvalidQuantileTable,
    LengthMismatch,
    QuantileTable,
    TableMissing,
    aggregate,
    default_levels,
    posterior_correct,
    pre_mapping_score,
    predict,
    quantile_map,
    undersampling_bias,
)
from stablescore.types import Event, ExpertSpec, PredictorSpec

unit = st.floats(min_value=0.0, max_value=1.0)
ratio = st.floats(min_value=1e-3, max_value=1.0)


class Const:
    def __init__(self, value):
        self.value = value

    def score(self, event):
        return self.value


class Boom:
    def score(self, event):
        raise ConnectionError("down")


EVENT = Event("t", {"x": 1.0}, event_id="e")
IDENTITY = {"id": QuantileTable.identity()}


# --- posterior correction ---------------------------------------------------------


@pytest.mark.parametrize(
    "y, beta, expected",
    [(0.5, 1.0, 0.5), (0.0, 0.02, 0.0), (0.5, 0.02, 0.01 / 0.51), (1.0, 0.5, 1.0)],
)
def test_posterior_correct_examples(y, beta, expected):
    assert posterior_correct(y, beta) == pytest.approx(expected, abs=1e-15)


def test_posterior_correct_rejects_bad_beta():
    with pytest.raises(ValueError):
        posterior_correct(0.5, 0.0)
    with pytest.raises(ValueError):
        posterior_correct(0.5, 1.01)


@given(unit, ratio)
def test_bias_inversion(p, beta):
    assert abs(posterior_correct(undersampling_bias(p, beta), beta) - p) <= 1e-12


@given(unit, unit, ratio)
def test_posterior_correct_monotone_and_closed(a, b, beta):
    a, b = min(a, b), max(a, b)
    ya, yb = posterior_correct(a, beta), posterior_correct(b, beta)
    assert 0.0 <= ya <= yb <= 1.0


def test_posterior_correct_array_matches_scalar():
    y = np.linspace(0, 1, 101)
    arr = posterior_correct(y, 0.1)
    assert np.allclose(arr, [posterior_correct(v, 0.1) for v in y], atol=0, rtol=0)


# --- aggregation ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "scores, weights, expected",
    [([0.2, 0.4], [0.5, 0.5], 0.3), ([0.7], [1.0], 0.7), ([0.1, 0.9], [0.25, 0.75], 0.7)],
)
def test_aggregate_examples(scores, weights, expected):
    assert aggregate(scores, AggregationSpec(tuple(weights))) == pytest.approx(expected, abs=1e-15)


def test_aggregation_spec_checks():
    with pytest.raises(Exception):
        AggregationSpec((0.5, 0.6))
    assert AggregationSpec.normalized([1, 3]).weights == (0.25, 0.75)
    with pytest.raises(LengthMismatch):
        aggregate([0.1], AggregationSpec((0.5, 0.5)))


@given(st.lists(st.tuples(unit, st.floats(min_value=1e-3, max_value=10)), min_size=1, max_size=6))
def test_aggregate_stays_within_inputs(pairs):
    scores = [s for s, _ in pairs]
    spec = AggregationSpec.normalized([w for _, w in pairs])
    assert min(scores) <= aggregate(scores, spec) <= max(scores)


# --- quantile tables ------------------------------------------------------------------


def test_default_levels():
    lv = default_levels()
    assert lv.size == 1001 and lv[0] == 0.0 and lv[-1] == 1.0
    assert lv[1] == pytest.approx(0.001)


@pytest.mark.parametrize(
    "src, ref, y, expected",
    [
        ((0, 0.5, 1), (0, 0.5, 1), 0.37, 0.37),
        ((0, 0.2, 1), (0, 0.5, 1), 0.1, 0.25),
        ((0, 0.2, 1), (0, 0.5, 1), 1.0, 1.0),
    ],
)
def test_quantile_map_examples(src, ref, y, expected):
    table = QuantileTable(src, ref, fitted_at="")
    assert quantile_map(y, table) == pytest.approx(expected, abs=1e-15)
    assert table.map_array([y])[0] == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize(
    "src, ref",
    [
        ((0, 1), (0, 0.5, 1)),
        ((0.1, 1), (0, 1)),
        ((0, 0.9), (0, 1)),
        ((0, 0.6, 0.4, 1), (0, 0.3, 0.6, 1)),
        ((0, 0.5, 1), (0, 0.5, 0.5)),
        ((0,), (0,)),
        ((0, 1.2), (0, 1)),
    ],
)
def test_table_invariants_enforced(src, ref):
    with pytest.raises(InvalidQuantileTable):
        QuantileTable(src, ref, fitted_at="")


def test_ties_collapse_to_last_reference_value():
    table = QuantileTable((0, 0.5, 0.5, 0.5, 1), (0, 0.25, 0.5, 0.75, 1), fitted_at="")
    assert table.source_q == (0.0, 0.5, 1.0)
    assert table.reference_q == (0.0, 0.75, 1.0)
    assert quantile_map(0.5, table) == 0.75


def test_table_json_round_trip():
    table = QuantileTable((0, 0.123456789012345, 1), (0, 1 / 3, 1), version="v9", fitted_at="x", sample_count=5)
    assert QuantileTable.from_json(table.to_json()) == table
    with pytest.raises(InvalidQuantileTable):
        QuantileTable.from_json("[1, 2]")
    with pytest.raises(InvalidQuantileTable):
        QuantileTable.from_json("{not json")


def naive_map(y, src, ref):
    """Linear scan over every segment; the last one is closed."""
    n = len(src)
    for i in range(n - 1):
        last = i == n - 2
        if src[i] <= y < src[i + 1] or (last and src[i] <= y <= src[i + 1]):
            return ref[i] + (y - src[i]) * (ref[i + 1] - ref[i]) / (src[i + 1] - src[i])
    raise AssertionError("unreachable")


@st.composite
def tables(draw, max_knots=64):
    n = draw(st.integers(min_value=2, max_value=max_knots))
    inner_s = sorted(draw(st.lists(unit, min_size=n - 2, max_size=n - 2)))
    inner_r = sorted(set(draw(st.lists(st.floats(0.001, 0.999), min_size=n - 2, max_size=n - 2))))
    k = min(len(inner_s), len(inner_r))
    src = [0.0, *inner_s[:k], 1.0]
    ref = [0.0, *inner_r[:k], 1.0]
    return QuantileTable(tuple(src), tuple(ref), fitted_at="")


@settings(max_examples=300)
@given(tables(), unit)
def test_binary_search_matches_linear_scan(table, y):
    expected = naive_map(y, table.source_q, table.reference_q)
    assert abs(quantile_map(y, table) - expected) <= 1e-9
    assert abs(table.map_array(y) - expected) <= 1e-9


@given(tables(), unit, unit)
def test_quantile_map_monotone(table, a, b):
    a, b = min(a, b), max(a, b)
    assert 0.0 <= quantile_map(a, table) <= quantile_map(b, table) <= 1.0


@given(st.lists(st.floats(0.001, 0.999), max_size=30, unique=True), unit)
def test_identity_table_is_fixed_point(inner, y):
    knots = tuple([0.0, *sorted(inner), 1.0])
    assert abs(quantile_map(y, QuantileTable(knots, knots, fitted_at="")) - y) <= 1e-12


@given(tables(), unit, unit, ratio)
def test_composition_preserves_ranking(table, a, b, beta):
    a, b = min(a, b), max(a, b)
    assert quantile_map(posterior_correct(a, beta), table) <= quantile_map(posterior_correct(b, beta), table)


# --- predict ----------------------------------------------------------------------------


def spec(betas, weights, table="id", pc=True):
    experts = tuple(ExpertSpec(f"m{i}", f"m{i}", b) for i, b in enumerate(betas))
    return PredictorSpec("p", experts, tuple(weights), table, pc)


def test_single_expert_identity_table():
    r = predict(EVENT, spec([0.02], [1.0]), {"m0": Const(0.5)}, IDENTITY)
    # single expert skips correction even with beta < 1
    assert r.score == 0.5


def test_two_expert_example():
    r = predict(EVENT, spec([0.02, 1.0], [0.5, 0.5]), {"m0": Const(0.5), "m1": Const(0.5)}, IDENTITY)
    assert r.score == pytest.approx(0.5 * 0.01 / 0.51 + 0.25, abs=1e-12)
    assert r.score == pytest.approx(0.2598039, abs=1e-7)


def test_correction_flag_off_skips_correction():
    r = predict(EVENT, spec([0.02, 1.0], [0.5, 0.5], pc=False), {"m0": Const(0.5), "m1": Const(0.5)}, IDENTITY)
    assert r.score == pytest.approx(0.5)


def oracle_pipeline(raw, betas, weights, src, ref):
    corrected = [b * y / (1 - (1 - b) * y) for y, b in zip(raw, betas)]
    total = sum(weights)
    combined = sum(w / total * c for w, c in zip(weights, corrected))
    return naive_map(combined, src, ref)


@given(
    st.lists(st.tuples(unit, ratio, st.floats(0.1, 5.0)), min_size=2, max_size=4),
    tables(max_knots=20),
)
def test_ensemble_matches_straight_line_oracle(experts, table):
    raw = [r for r, _, _ in experts]
    betas = [b for _, b, _ in experts]
    weights = [w for _, _, w in experts]
    backends = {f"m{i}": Const(r) for i, r in enumerate(raw)}
    got = predict(EVENT, spec(betas, weights, "t"), backends, {"t": table}).score
    expected = oracle_pipeline(raw, betas, weights, table.source_q, table.reference_q)
    assert got == pytest.approx(expected, abs=1e-9)


def test_fitted_table_ensemble_example():
    # Three experts on different ratios feeding one fitted (non-identity) table.
    table = QuantileTable((0, 0.01, 0.05, 0.2, 1), (0, 0.3, 0.6, 0.9, 1), fitted_at="")
    raw, betas, weights = [0.4, 0.7, 0.1], [0.18, 0.18, 0.02], [1, 1, 1]
    backends = {f"m{i}": Const(r) for i, r in enumerate(raw)}
    got = predict(EVENT, spec(betas, weights, "t"), backends, {"t": table}).score
    assert got == pytest.approx(oracle_pipeline(raw, betas, weights, table.source_q, table.reference_q), abs=1e-12)
    assert pre_mapping_score(EVENT, spec(betas, weights, "t"), backends) == pytest.approx(
        oracle_pipeline(raw, betas, weights, (0, 1), (0, 1)), abs=1e-12
    )


def test_backend_failures():
    with pytest.raises(BackendUnavailable):
        predict(EVENT, spec([1.0], [1.0]), {}, IDENTITY)
    with pytest.raises(BackendUnavailable) as info:
        predict(EVENT, spec([1.0], [1.0]), {"m0": Boom()}, IDENTITY)
    assert info.value.model_id == "m0"
    with pytest.raises(BackendUnavailable):
        predict(EVENT, spec([1.0], [1.0]), {"m0": Const(1.5)}, IDENTITY)
    with pytest.raises(TableMissing):
        predict(EVENT, spec([1.0], [1.0], table="nope"), {"m0": Const(0.5)}, IDENTITY)
