"""Priors, naive and BAE-corrected log-posteriors, synthetic data, predictive checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .forward.base import ForwardModel, ModelFailure
from .probability import GaussianModel, gaussian_logpdf
from .sampler import Chain

__all__ = [
    "GaussianPrior",
    "UniformPrior",
    "InverseProblem",
    "LogPosterior",
    "naive_log_posterior",
    "bae_log_posterior",
    "SyntheticData",
    "synthesize_data",
    "PredictiveFailureError",
    "posterior_predictive",
    "feasibility_summary",
    "find_mode",
    "ball_init",
    "DEFAULT_QUANTILES",
]

log = logging.getLogger(__name__)

DEFAULT_QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)


class GaussianPrior:
    kind = "gaussian"

    def __init__(self, mean, cov):
        self.model = GaussianModel(mean, cov)
        self.dim = self.model.dim

    @classmethod
    def isotropic(cls, mean, sd):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls(mean, sd ** 2 * np.eye(mean.size))

    def logpdf(self, k):
        return gaussian_logpdf(k, self.model)

    def sample(self, rng, n):
        return self.model.sample(n, rng).samples

    def contains(self, k):
        return True

    @property
    def sd(self):
        return np.sqrt(np.diag(self.model.covariance))


class UniformPrior:
    """Independent uniform box ``lower <= k < upper``."""

    kind = "uniform"

    def __init__(self, lower, upper):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if self.lower.shape != self.upper.shape:
            raise ValueError("bounds must have equal length")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("uniform prior bounds must be finite")
        if np.any(self.lower >= self.upper):
            raise ValueError("need lower < upper in every coordinate")
        self.dim = self.lower.size
        self._logp = -float(np.sum(np.log(self.upper - self.lower)))

    def contains(self, k):
        k = np.asarray(k)
        return bool(np.all(k >= self.lower) and np.all(k < self.upper))

    def logpdf(self, k):
        return self._logp if self.contains(k) else -np.inf

    def sample(self, rng, n):
        return self.lower + (self.upper - self.lower) * rng.random((int(n), self.dim))

    @property
    def sd(self):
        return (self.upper - self.lower) / np.sqrt(12.0)


@dataclass(frozen=True)
class InverseProblem:
    model: ForwardModel
    prior: object
    noise: GaussianModel
    y_obs: np.ndarray
    total_error: GaussianModel | None = None

    def __post_init__(self):
        y = np.asarray(self.y_obs, dtype=float)
        object.__setattr__(self, "y_obs", y)
        m = self.model.output_dim
        if y.shape != (m,) or self.noise.dim != m:
            raise ValueError(f"observation / noise dimension must equal model output_dim={m}")
        if self.total_error is not None and self.total_error.dim != m:
            raise ValueError("total error dimension must equal model output_dim")
        if self.prior.dim != self.model.input_dim:
            raise ValueError("prior dimension must equal model input_dim")


class LogPosterior:
    """``log p(y_obs - g(k))`` under ``error`` plus the log prior.

    Model failures return ``-inf`` and are counted in ``n_failures``. A 2-D
    input of shape ``(n, d)`` is evaluated as one batch through
    ``model.evaluate_many`` and returns ``n`` values.
    """

    def __init__(self, model, prior, error: GaussianModel, y_obs):
        self.model = model
        self.prior = prior
        self.error = error
        self.y_obs = np.asarray(y_obs, dtype=float)
        self.n_failures = 0

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        if k.ndim == 2:
            return self._batch(k)
        lp = self.prior.logpdf(k)
        if not np.isfinite(lp):
            return -np.inf
        try:
            pred = self.model.evaluate(k)
        except ModelFailure as exc:
            self.n_failures += 1
            log.debug("model failure at k=%s: %s", k, exc)
            return -np.inf
        return gaussian_logpdf(self.y_obs - pred, self.error) + lp

    def _batch(self, K):
        out = np.full(K.shape[0], -np.inf)
        lp = np.array([self.prior.logpdf(k) for k in K], dtype=float)
        inside = np.flatnonzero(np.isfinite(lp))
        if inside.size == 0:
            return out
        Y, reasons = self.model.evaluate_many(K[inside])
        ok = np.array([r is None for r in reasons], dtype=bool)
        self.n_failures += int((~ok).sum())
        if ok.any():
            rows = inside[ok]
            out[rows] = gaussian_logpdf(self.y_obs - Y[ok], self.error) + lp[rows]
        return out


def naive_log_posterior(problem: InverseProblem) -> LogPosterior:
    """Coarse model with the measurement-noise likelihood only."""
    return LogPosterior(problem.model, problem.prior, problem.noise, problem.y_obs)


def bae_log_posterior(problem: InverseProblem) -> LogPosterior:
    """Coarse model with the total-error (noise + approximation error) likelihood."""
    if problem.total_error is None:
        raise ValueError("problem has no total error model")
    return LogPosterior(problem.model, problem.prior, problem.total_error, problem.y_obs)


@dataclass(frozen=True)
class SyntheticData:
    truth: np.ndarray
    y_clean: np.ndarray
    y_obs: np.ndarray


def synthesize_data(truth, fine: ForwardModel, noise: GaussianModel, rng) -> SyntheticData:
    """``f(truth)`` plus one noise draw. A failure at the truth is fatal."""
    truth = np.asarray(truth, dtype=float)
    clean = fine.evaluate(truth)
    if noise.dim != clean.size:
        raise ValueError("noise dimension does not match model output")
    draw = noise.sample(1, rng).samples[0]
    return SyntheticData(truth, clean, clean + draw)


class PredictiveFailureError(RuntimeError):
    pass


def posterior_predictive(chain, model: ForwardModel, n_draws: int, rng, quantiles=DEFAULT_QUANTILES,
                         noise: GaussianModel | None = None, max_failure_rate: float = 0.2, offset=None):
    """Run ``model`` on ``n_draws`` posterior samples and summarize per observation.

    Returns a dict with ``quantiles`` (the levels), ``table`` of shape
    ``(output_dim, len(quantiles))``, raw ``curves`` and the ``params`` used.
    A fixed ``offset`` (e.g. the mean approximation error) is added to every
    curve; with ``noise`` given, one noise draw is added as well.
    """
    flat = chain.flat() if isinstance(chain, Chain) else np.asarray(chain, dtype=float)
    if n_draws > flat.shape[0]:
        raise ValueError(f"n_draws={n_draws} exceeds chain size {flat.shape[0]}")
    idx = rng.choice(flat.shape[0], size=n_draws, replace=False)
    params = flat[idx]
    curves, failures = [], 0
    for k in params:
        try:
            curves.append(model.evaluate(k))
        except ModelFailure:
            failures += 1
    if failures > max_failure_rate * n_draws or not curves:
        raise PredictiveFailureError(f"{failures} of {n_draws} predictive runs failed")
    curves = np.array(curves)
    if offset is not None:
        curves = curves + np.asarray(offset, dtype=float)
    if noise is not None:
        curves = curves + noise.sample(curves.shape[0], rng).samples
    table = np.quantile(curves, quantiles, axis=0).T
    return {"quantiles": tuple(quantiles), "table": table, "curves": curves,
            "params": params, "n_failed": failures}


def feasibility_summary(chain, truth, levels=(0.95, 0.99), names=None):
    """Central credible intervals per parameter and whether they cover ``truth``."""
    flat = chain.flat() if isinstance(chain, Chain) else np.asarray(chain, dtype=float)
    truth = np.asarray(truth, dtype=float)
    names = names or [f"k_{i + 1}" for i in range(flat.shape[1])]
    sd = flat.std(axis=0, ddof=1) if flat.shape[0] > 1 else np.zeros(flat.shape[1])
    out = []
    for j, name in enumerate(names):
        entry = {"name": name, "truth": float(truth[j]), "mean": float(flat[:, j].mean()),
                 "sd": float(sd[j]), "intervals": {}}
        for level in levels:
            lo, hi = np.quantile(flat[:, j], [(1 - level) / 2, (1 + level) / 2])
            entry["intervals"][f"{level:g}"] = {
                "lower": float(lo), "upper": float(hi), "contains_truth": bool(lo <= truth[j] <= hi)}
        out.append(entry)
    return out


def _box(prior):
    if isinstance(prior, UniformPrior):
        width = prior.upper - prior.lower
        return prior.lower + 1e-9 * width, prior.upper - 1e-9 * width
    return None


def find_mode(logpost, prior, rng, n_starts: int = 6, maxfev: int = 5000):
    """Best local maximum of ``logpost`` over ``n_starts`` prior-drawn starts.

    Derivative-free (Powell). For box priors the search runs on the box
    with a quadratic penalty outside it. Returns ``(k, logpost(k))``; raises
    ``RuntimeError`` when no start reaches a finite value.
    """
    box = _box(prior)

    def objective(k):
        kc = k if box is None else np.clip(k, *box)
        val = logpost(kc)
        if not np.isfinite(val):
            return 1e300
        return -val + 1e3 * float(np.sum((k - kc) ** 2))

    best = None
    for start in prior.sample(rng, n_starts):
        res = optimize.minimize(objective, start, method="Powell",
                                options={"maxfev": maxfev, "xtol": 1e-3, "ftol": 1e-6})
        if best is None or res.fun < best.fun:
            best = res
    k = best.x if box is None else np.clip(best.x, *box)
    val = float(logpost(k))
    if not np.isfinite(val):
        raise RuntimeError("mode search found no point with finite log-posterior")
    return k, val


def ball_init(center, radius: float, prior=None):
    """Walker initializer: ``center`` plus isotropic Gaussian jitter, kept inside a box prior."""
    center = np.asarray(center, dtype=float)
    box = None if prior is None else _box(prior)

    def init(rng, n):
        x = center + radius * rng.standard_normal((int(n), center.size))
        return x if box is None else np.clip(x, *box)
    return init
