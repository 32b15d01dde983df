"""Cold-start prior: a two-component Beta mixture fitted to training scores.

Shape parameters are found by moment matching with a population-based
stochastic search; the best of several independent searches is chosen by
Jensen-Shannon divergence against the binned empirical density. The fitted
mixture's inverse CDF then provides source quantiles for a default table.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, special, stats

from stablescore.transforms import QuantileTable, ValidationError, default_levels

MOMENT_ORDERS = (1, 2, 3, 4)


class DegenerateLabels(ValidationError):
    code = "DegenerateLabels"


@dataclass(frozen=True)
class BetaMixtureFit:
    """``(1 - w) * Beta(alpha0, beta0) + w * Beta(alpha1, beta1)``."""

    w: float
    alpha0: float
    beta0: float
    alpha1: float
    beta1: float
    jsd: float = 0.0
    trials_run: int = 0
    seed: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.w <= 1.0:
            raise ValidationError(f"mixture weight must be in [0, 1], got {self.w!r}")
        for name in ("alpha0", "beta0", "alpha1", "beta1"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValidationError(f"{name} must be a positive finite number, got {v!r}")
        if self.jsd < 0:
            raise ValidationError("jsd must be non-negative")

    @property
    def shapes(self) -> tuple[float, float, float, float]:
        return (self.alpha0, self.beta0, self.alpha1, self.beta1)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "BetaMixtureFit":
        return cls(**{k: doc[k] for k in cls.__dataclass_fields__ if k in doc})


@dataclass(frozen=True)
class EmpiricalDensity:
    bin_edges: np.ndarray
    masses: np.ndarray

    def __post_init__(self) -> None:
        edges = np.asarray(self.bin_edges, dtype=float)
        masses = np.asarray(self.masses, dtype=float)
        if edges.size != masses.size + 1:
            raise ValidationError("need one more edge than bins")
        if np.any(np.diff(edges) <= 0):
            raise ValidationError("bin edges must be strictly increasing")
        if np.any(masses < 0) or abs(masses.sum() - 1.0) > 1e-9:
            raise ValidationError("bin masses must be non-negative and sum to 1")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def from_scores(cls, scores, bins: int = 100) -> "EmpiricalDensity":
        scores = np.asarray(scores, dtype=float)
        edges = np.linspace(0.0, 1.0, bins + 1)
        counts, _ = np.histogram(scores, bins=edges)
        return cls(edges, counts / counts.sum())


def mixture_pdf(y, fit: BetaMixtureFit):
    """Mixture density. Can be infinite at 0 or 1 when a shape is below one."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        out = (1.0 - fit.w) * stats.beta.pdf(y, fit.alpha0, fit.beta0) + fit.w * stats.beta.pdf(
            y, fit.alpha1, fit.beta1
        )
    return float(out) if out.ndim == 0 else out


def mixture_cdf(y, fit: BetaMixtureFit):
    y = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
    out = (1.0 - fit.w) * special.betainc(fit.alpha0, fit.beta0, y) + fit.w * special.betainc(
        fit.alpha1, fit.beta1, y
    )
    return float(out) if out.ndim == 0 else out


def mixture_ppf(levels, fit: BetaMixtureFit, *, iterations: int = 64) -> np.ndarray:
    """Inverse CDF by bisection, vectorized over ``levels``. Levels 0 and 1 map to 0 and 1."""
    p = np.asarray(levels, dtype=float)
    lo = np.zeros_like(p)
    hi = np.ones_like(p)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        below = mixture_cdf(mid, fit) < p
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = 0.5 * (lo + hi)
    out = np.where(p <= 0.0, 0.0, np.where(p >= 1.0, 1.0, out))
    return np.maximum.accumulate(out)


def bin_masses(fit: BetaMixtureFit, edges) -> np.ndarray:
    """Mixture probability of each bin, via the regularized incomplete Beta function."""
    return np.diff(mixture_cdf(np.asarray(edges, dtype=float), fit))


def beta_raw_moment(r: int, a, b):
    """``E[X^r]`` for ``X ~ Beta(a, b)``, elementwise over ``a`` and ``b``."""
    out = 1.0
    for j in range(r):
        out = out * (a + j) / (a + b + j)
    return out


def mixture_raw_moment(r: int, fit: BetaMixtureFit) -> float:
    if r not in MOMENT_ORDERS:
        raise ValueError(f"moment order must be 1..4, got {r}")
    return (1.0 - fit.w) * beta_raw_moment(r, fit.alpha0, fit.beta0) + fit.w * beta_raw_moment(
        r, fit.alpha1, fit.beta1
    )


def empirical_moments(scores) -> np.ndarray:
    y = np.asarray(scores, dtype=float)
    return np.array([np.mean(y**r) for r in MOMENT_ORDERS])


def moment_loss(fit: BetaMixtureFit, empirical: Sequence[float]) -> float:
    """Sum over r = 1..4 of ``|mu_r - ybar_r| ** (2 / r)``."""
    return float(
        sum(
            abs(mixture_raw_moment(r, fit) - empirical[r - 1]) ** (2.0 / r) for r in MOMENT_ORDERS
        )
    )


def _moment_loss_batch(shapes: np.ndarray, w: float, empirical: np.ndarray) -> np.ndarray:
    a0, b0, a1, b1 = shapes.T
    loss = np.zeros(shapes.shape[0])
    for r in MOMENT_ORDERS:
        mu = (1.0 - w) * beta_raw_moment(r, a0, b0) + w * beta_raw_moment(r, a1, b1)
        loss += np.abs(mu - empirical[r - 1]) ** (2.0 / r)
    return loss


def jensen_shannon(p, q, *, base: float = 2.0) -> float:
    """Jensen-Shannon divergence between two discrete distributions (base 2 by default)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p = p / p.sum()
    q = q / q.sum()
    total = p + q

    def kl(a):
        # a / m written as 2a / (p + q): the denominator cannot underflow to 0 where a > 0.
        nz = a > 0
        return float(np.sum(a[nz] * np.log(2.0 * a[nz] / total[nz])))

    js = 0.5 * kl(p) + 0.5 * kl(q)
    return max(js / math.log(base), 0.0)


@dataclass(frozen=True)
class SearchSettings:
    population: int = 32
    generations: int = 300
    mutation: float = 0.7
    crossover: float = 0.9
    shape_min: float = 0.05
    shape_max: float = 500.0
    bins: int = 100
    # Solve the moment equations from the search result; kept only if the loss drops.
    polish: bool = True


def differential_evolution(objective, lower, upper, rng, settings: SearchSettings):
    """rand/1/bin differential evolution over a box; ``objective`` scores a whole population."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    dim = lower.size
    n = settings.population
    pop = lower + rng.random((n, dim)) * (upper - lower)
    fitness = objective(pop)
    idx = np.arange(n)
    for _ in range(settings.generations):
        # three distinct partners per member, none equal to the member itself
        keys = rng.random((n, n))
        keys[idx, idx] = np.inf
        r = np.argsort(keys, axis=1)[:, :3]
        mutant = pop[r[:, 0]] + settings.mutation * (pop[r[:, 1]] - pop[r[:, 2]])
        mutant = np.clip(mutant, lower, upper)
        cross = rng.random((n, dim)) < settings.crossover
        cross[idx, rng.integers(0, dim, n)] = True
        trial = np.where(cross, mutant, pop)
        trial_fit = objective(trial)
        better = trial_fit <= fitness
        pop[better] = trial[better]
        fitness[better] = trial_fit[better]
    best = int(np.argmin(fitness))
    return pop[best], float(fitness[best])


def _polish(residuals, objective, x, loss, lo, hi):
    # The r-th roots leave cusp-shaped valleys that a population search cannot
    # follow; a bounded least-squares solve on the relative moment residuals
    # reaches the exact-match point when one exists.
    try:
        sol = optimize.least_squares(
            residuals, x, bounds=(lo, hi), xtol=1e-15, ftol=1e-15, gtol=1e-15
        )
    except (ValueError, FloatingPointError):
        return x, loss
    polished = float(objective(sol.x[None, :])[0])
    if np.isfinite(polished) and polished < loss:
        return sol.x, polished
    return x, loss


def fit_beta_mixture(
    scores,
    labels,
    n_trials: int = 8,
    rng_seed: int = 0,
    settings: SearchSettings = SearchSettings(),
) -> BetaMixtureFit:
    """Fit the cold-start mixture to labelled training scores.

    ``w`` is the positive-label fraction. Each trial is an independent
    stochastic search on the moment loss; the trial whose mixture has the
    lowest JSD to the empirical histogram wins (ties go to the earlier trial).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValidationError("scores and labels differ in length")
    if scores.size < 100:
        raise ValidationError(f"need at least 100 training scores, got {scores.size}")
    if np.any((scores < 0) | (scores > 1)):
        raise ValidationError("training scores must lie in [0, 1]")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise DegenerateLabels("labels must contain both classes")
    if n_trials < 1:
        raise ValidationError("need at least one trial")

    w = n_pos / labels.size
    emp = empirical_moments(scores)
    density = EmpiricalDensity.from_scores(scores, settings.bins)
    log_lo = np.full(4, math.log(settings.shape_min))
    log_hi = np.full(4, math.log(settings.shape_max))

    def objective(log_shapes):
        return _moment_loss_batch(np.exp(log_shapes), w, emp)

    def residuals(log_shapes):
        a0, b0, a1, b1 = np.exp(log_shapes)
        return np.array(
            [
                ((1.0 - w) * beta_raw_moment(r, a0, b0) + w * beta_raw_moment(r, a1, b1))
                / emp[r - 1]
                - 1.0
                for r in MOMENT_ORDERS
            ]
        )

    best: BetaMixtureFit | None = None
    for child in np.random.SeedSequence(rng_seed).spawn(n_trials):
        x, loss = differential_evolution(
            objective, log_lo, log_hi, np.random.default_rng(child), settings
        )
        if settings.polish:
            x, loss = _polish(residuals, objective, x, loss, log_lo, log_hi)
        a0, b0, a1, b1 = np.exp(x).tolist()
        candidate = BetaMixtureFit(w, a0, b0, a1, b1)
        jsd = jensen_shannon(density.masses, bin_masses(candidate, density.bin_edges))
        if best is None or jsd < best.jsd:
            best = BetaMixtureFit(w, a0, b0, a1, b1, jsd=jsd, trials_run=n_trials, seed=rng_seed)
    assert best is not None
    return best


def default_quantile_table(
    fit: BetaMixtureFit,
    reference_q: Sequence[float] | None = None,
    levels: Sequence[float] | None = None,
    *,
    version: str = "v0",
    fitted_at: str = "",
) -> QuantileTable:
    """Cold-start table: source quantiles from the mixture's inverse CDF, ``sample_count = 0``."""
    lv = np.asarray(levels if levels is not None else default_levels(), dtype=float)
    ref = lv if reference_q is None else np.asarray(reference_q, dtype=float)
    source = mixture_ppf(lv, fit)
    source[0], source[-1] = 0.0, 1.0
    return QuantileTable(
        source_q=tuple(source.tolist()),
        reference_q=tuple(ref.tolist()),
        version=version,
        fitted_at=fitted_at,
        sample_count=0,
    )
