"""Approximation-error ensembles, their statistics and the total-error model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .forward.base import ForwardModel, ModelFailure
from .probability import GaussianModel, SampleEnsemble, estimate_moments

__all__ = [
    "BudgetExhaustedError",
    "ErrorEnsemble",
    "ErrorStatistics",
    "build_error_ensemble",
    "error_statistics",
    "total_error_model",
    "normality_diagnostics",
    "prior_source",
    "chain_source",
]

log = logging.getLogger(__name__)

SOURCES = ("prior-based", "posterior-informed")


class BudgetExhaustedError(RuntimeError):
    def __init__(self, attempts, failures, succeeded, needed):
        self.failure_rate = failures / max(attempts, 1)
        super().__init__(
            f"only {succeeded} of {needed} error samples after {attempts} attempts "
            f"(failure rate {self.failure_rate:.1%})"
        )


@dataclass(frozen=True, eq=False)
class ErrorEnsemble:
    """Approximation errors ``f(k) - g(k)`` with the parameters that produced them."""

    errors: SampleEnsemble
    params: np.ndarray
    q_requested: int
    failures: tuple = ()  # (attempt index, reason) pairs

    @property
    def q_succeeded(self):
        return self.errors.count

    @property
    def q_failed(self):
        return len(self.failures)


def prior_source(prior):
    """Parameter provider drawing from ``prior.sample``."""
    def draw(n, rng):
        return prior.sample(rng, n)
    return draw


def chain_source(samples):
    """Parameter provider drawing uniformly without replacement from stored samples."""
    flat = samples.flat() if hasattr(samples, "flat") and callable(samples.flat) else np.asarray(samples, float)

    def draw(n, rng):
        n = min(int(n), flat.shape[0])
        return flat[rng.choice(flat.shape[0], size=n, replace=False)]
    return draw


def _run_pair(fine, coarse, k):
    try:
        return fine.evaluate(k) - coarse.evaluate(k), None
    except ModelFailure as exc:
        return None, exc.reason


def build_error_ensemble(parameter_source, fine: ForwardModel, coarse: ForwardModel, q: int,
                         rng, policy: str = "replace", map_fn=None) -> ErrorEnsemble:
    """Evaluate ``eps = f(k) - g(k)`` over ``q`` parameter draws.

    Under ``policy="replace"`` failed draws are logged and replaced by fresh
    ones, up to ``3 q`` attempts in total; under ``"drop"`` they just shrink
    the ensemble. All parameter draws are taken up front in one call to
    ``parameter_source(n, rng)`` and consumed in order, and results are kept
    in draw order, so the ensemble does not depend on ``map_fn``.
    """
    if fine.output_dim != coarse.output_dim:
        raise ValueError("fine and coarse models must have the same output dimension")
    if policy not in ("replace", "drop"):
        raise ValueError(f"unknown failure policy {policy!r}")
    cap = 3 * q if policy == "replace" else q
    draws = np.asarray(parameter_source(cap, rng), dtype=float)
    if draws.shape[0] < q:
        raise ValueError(f"parameter source yielded {draws.shape[0]} < q={q} draws")

    def run(batch):
        if map_fn is None:
            return [_run_pair(fine, coarse, k) for k in batch]
        return list(map_fn(_PairRunner(fine, coarse), list(batch)))

    errors, params, failures = [], [], []
    next_idx = 0
    need = q
    while need > 0 and next_idx < draws.shape[0]:
        batch = draws[next_idx:next_idx + need]
        for offset, (eps, reason) in enumerate(run(batch)):
            if eps is None:
                failures.append((next_idx + offset, reason))
                log.info("error-ensemble draw %d failed: %s", next_idx + offset, reason)
            else:
                errors.append(eps)
                params.append(batch[offset])
        next_idx += batch.shape[0]
        need = q - len(errors) if policy == "replace" else 0

    if policy == "replace" and len(errors) < q:
        raise BudgetExhaustedError(next_idx, len(failures), len(errors), q)
    if len(errors) < 2:
        raise BudgetExhaustedError(next_idx, len(failures), len(errors), 2)
    return ErrorEnsemble(SampleEnsemble(np.array(errors)), np.array(params), q, tuple(failures))


class _PairRunner:
    # picklable callable for process pools
    def __init__(self, fine, coarse):
        self.fine, self.coarse = fine, coarse

    def __call__(self, k):
        return _run_pair(self.fine, self.coarse, k)


@dataclass(frozen=True, eq=False)
class ErrorStatistics:
    """Ensemble mean and covariance of the approximation error plus provenance."""

    epsilon_mean: np.ndarray
    epsilon_cov: np.ndarray
    q_requested: int
    q_succeeded: int
    q_failed: int = 0
    source: str = "posterior-informed"
    seed: int | None = None
    failures: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}")
        if self.q_succeeded < 2:
            raise ValueError("need at least two successful error samples")

    @property
    def dim(self):
        return self.epsilon_mean.shape[0]

    def to_meta(self) -> dict:
        return {
            "q_requested": int(self.q_requested),
            "q_succeeded": int(self.q_succeeded),
            "q_failed": int(self.q_failed),
            "source": self.source,
            "seed": None if self.seed is None else int(self.seed),
        }


def error_statistics(ensemble, source: str = "posterior-informed", seed=None) -> ErrorStatistics:
    """Mean and ``1/(q-1)`` covariance of an error ensemble."""
    if isinstance(ensemble, ErrorEnsemble):
        samples, q_req, fails = ensemble.errors, ensemble.q_requested, ensemble.failures
    else:
        samples = ensemble if isinstance(ensemble, SampleEnsemble) else SampleEnsemble(ensemble)
        q_req, fails = samples.count, ()
    mean, cov = estimate_moments(samples)
    return ErrorStatistics(mean, cov, q_req, samples.count, len(fails), source, seed, tuple(fails))


def total_error_model(noise: GaussianModel, stats_: ErrorStatistics) -> GaussianModel:
    """``N(e* + eps*, Gamma_e + Gamma_eps)``, refactorized with the jitter ladder."""
    if noise.dim != stats_.dim:
        raise ValueError(f"noise dimension {noise.dim} != error dimension {stats_.dim}")
    return GaussianModel(noise.mean + stats_.epsilon_mean, noise.covariance + stats_.epsilon_cov, noise.policy)


def normality_diagnostics(ensemble, min_count: int = 8) -> dict:
    """Per-component skewness, excess kurtosis and QQ data.

    Degenerate (zero-variance) components are flagged and get ``None`` for the
    moment statistics and QQ values. Purely advisory; nothing is enforced.
    """
    x = ensemble.samples if isinstance(ensemble, SampleEnsemble) else np.asarray(ensemble, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < min_count:
        raise ValueError(f"need at least {min_count} samples for diagnostics, got {n}")
    theo = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    sd = x.std(axis=0, ddof=1)
    scale = np.maximum(np.abs(x).max(axis=0), 1e-300)
    components = []
    for j in range(d):
        degenerate = bool(sd[j] <= 1e-12 * scale[j]) or sd[j] == 0.0
        if degenerate:
            components.append({"index": j, "degenerate": True, "skewness": None,
                               "excess_kurtosis": None, "qq_empirical": None})
            continue
        col = x[:, j]
        z = np.sort((col - col.mean()) / sd[j])
        components.append({
            "index": j,
            "degenerate": False,
            "skewness": float(stats.skew(col)),
            "excess_kurtosis": float(stats.kurtosis(col)),
            "qq_empirical": z,
        })
    return {"qq_theoretical": theo, "components": components}
