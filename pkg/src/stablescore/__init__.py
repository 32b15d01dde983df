"""Multi-tenant score serving with distribution-stable score transformations."""

from stablescore.types import (
    Event,
    ExpertSpec,
    PredictorSpec,
    Score,
    ScoreResponse,
    ValidationError,
    validate_event,
)
from stablescore.transforms import (
    AggregationSpec,
    QuantileTable,
    aggregate,
    posterior_correct,
    predict,
    quantile_map,
)

__version__ = "0.1.0"

__all__ = [
    "AggregationSpec",
    "Event",
    "ExpertSpec",
    "PredictorSpec",
    "QuantileTable",
    "Score",
    "ScoreResponse",
    "ValidationError",
    "aggregate",
    "posterior_correct",
    "predict",
    "quantile_map",
    "validate_event",
]
