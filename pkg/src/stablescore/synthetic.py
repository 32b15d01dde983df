"""Seeded synthetic data: score mixtures, undersampling bias, and ensemble traffic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stablescore.serving.backends import ExpertBackend
from stablescore.transforms import undersampling_bias
from stablescore.types import ExpertSpec, PredictorSpec


def sample_beta_mixture(n: int, w: float, a0: float, b0: float, a1: float, b1: float, rng):
    """``(scores, labels)`` with labels marking draws from the second component."""
    labels = rng.random(n) < w
    scores = np.where(labels, rng.beta(a1, b1, n), rng.beta(a0, b0, n))
    return scores, labels


def logistic_posteriors(n: int, rng, intercept: float = -4.0, slope: float = 1.5):
    """True fraud probabilities ``sigmoid(intercept + slope * x)`` with ``x ~ N(0, 1)``."""
    x = rng.normal(size=n)
    return 1.0 / (1.0 + np.exp(-(intercept + slope * x)))


def undersampled_predictions(n: int, beta: float, rng, intercept: float = -4.0, slope: float = 1.5):
    """Labels drawn from true posteriors and the inflated scores an undersampled model emits.

    Returns ``(p_true, labels, biased)``.
    """
    p = logistic_posteriors(n, rng, intercept, slope)
    labels = rng.random(n) < p
    return p, labels, undersampling_bias(p, beta)


# --- ensemble traffic ----------------------------------------------------------


@dataclass(frozen=True)
class Population:
    """Latent risk model for a tenant: ``p = sigmoid(intercept + slope * x)``."""

    intercept: float
    slope: float


TRAINING_POPULATION = Population(-4.0, 1.5)
DRIFTED_POPULATION = Population(-3.0, 1.9)

DEFAULT_EXPERTS = (("m1", 0.18), ("m2", 0.18), ("m3", 0.02))


def ensemble_backends(experts=DEFAULT_EXPERTS) -> dict[str, ExpertBackend]:
    """One logistic backend per expert, reading its own logit feature ``z_<model>``."""
    return {
        model: ExpertBackend(model, "linear-logistic", weights={f"z_{model}": 1.0})
        for model, _ in experts
    }


def ensemble_predictor(
    predictor_id: str, table_ref: str, experts=DEFAULT_EXPERTS, posterior_correction: bool = True
) -> PredictorSpec:
    return PredictorSpec(
        predictor_id=predictor_id,
        experts=tuple(ExpertSpec(m, m, beta) for m, beta in experts),
        aggregation_weights=tuple(1.0 for _ in experts),
        quantile_table_ref=table_ref,
        apply_posterior_correction=posterior_correction,
    )


def ensemble_traffic(
    n: int,
    rng,
    population: Population,
    *,
    tenant: str,
    prefix: str,
    experts=DEFAULT_EXPERTS,
    noise: float = 0.3,
    geography: str = "EMEA",
    schema: str = "fraud_v1",
):
    """Request payloads plus labels.

    Each expert sees the logit of its undersampling-inflated view of the true
    posterior, perturbed by independent Gaussian noise.
    """
    p = logistic_posteriors(n, rng, population.intercept, population.slope)
    labels = rng.random(n) < p
    feats = {}
    for model, beta in experts:
        q = np.clip(undersampling_bias(p, beta), 1e-12, 1 - 1e-12)
        feats[f"z_{model}"] = np.log(q / (1 - q)) + noise * rng.normal(size=n)
    names = list(feats)
    columns = [feats[k].tolist() for k in names]
    payloads = [
        {
            "event_id": f"{prefix}-{i}",
            "tenant": tenant,
            "geography": geography,
            "schema": schema,
            "features": {name: col[i] for name, col in zip(names, columns)},
        }
        for i in range(n)
    ]
    return payloads, labels
