"""Closed-form posteriors for the linear-Gaussian curve-fitting problem.

With ``f(k) = F k``, ``g(k) = G k``, prior ``N(k*, Gamma_k)`` and noise
``N(e*, Gamma_e)`` the naive, BAE-corrected and true (fine-model) posteriors
are all Gaussian. The BAE error model is the pushforward of the naive
posterior through ``F - G``, added to the measurement noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .forward.polynomial import coarse_projection, poly_design_matrix
from .probability import GaussianModel, make_rng

__all__ = [
    "LinearProblem",
    "AnalyticPosteriors",
    "multilevel_noise_cov",
    "analytic_posteriors",
    "map_estimates",
    "curve_fit_problem",
    "projection_identity_error",
    "DEFAULT_TRUTH",
]

# chosen so that the quadratic term dominates the curve
DEFAULT_TRUTH = (0.2, 2.0)


@dataclass(frozen=True, eq=False)
class LinearProblem:
    F: np.ndarray
    G: np.ndarray
    prior: GaussianModel
    noise: GaussianModel
    y_obs: np.ndarray

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        G = np.asarray(self.G, dtype=float)
        y = np.asarray(self.y_obs, dtype=float)
        if F.shape != G.shape:
            raise ValueError("F and G must have the same shape")
        m, n = F.shape
        if self.prior.dim != n or self.noise.dim != m or y.shape != (m,):
            raise ValueError("inconsistent dimensions in linear problem")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "y_obs", y)


@dataclass(frozen=True, eq=False)
class AnalyticPosteriors:
    naive: GaussianModel
    bae: GaussianModel
    true: GaussianModel
    nu_star: np.ndarray
    Gamma_nu: np.ndarray

    def as_dict(self) -> dict:
        def g(m):
            return {"mean": m.mean.tolist(), "cov": m.covariance.tolist()}
        return {"naive": g(self.naive), "bae": g(self.bae), "true": g(self.true),
                "nu_star": self.nu_star.tolist(), "Gamma_nu": self.Gamma_nu.tolist()}


def multilevel_noise_cov(m: int, block_sizes, delta_e: float, c: float) -> np.ndarray:
    """``delta_e**2 * ((1 - c) D + c I)`` with ``D`` block-diagonal all-ones blocks."""
    block_sizes = [int(b) for b in block_sizes]
    if sum(block_sizes) != m or any(b < 1 for b in block_sizes):
        raise ValueError(f"block sizes {block_sizes} do not partition m={m}")
    if not 0.0 < c <= 1.0:
        raise ValueError("need 0 < c <= 1")
    D = linalg.block_diag(*[np.ones((b, b)) for b in block_sizes])
    return delta_e ** 2 * ((1.0 - c) * D + c * np.eye(m))


def _gaussian_posterior(A, y, prior: GaussianModel, error: GaussianModel) -> GaussianModel:
    """Posterior of ``k`` for ``y = A k + e``, ``e ~ error``, via Cholesky solves."""
    Le = error.factor
    Wa = linalg.solve_triangular(Le, A, lower=True)  # L^{-1} A
    wy = linalg.solve_triangular(Le, y - error.mean, lower=True)
    prior_prec = linalg.cho_solve((prior.factor, True), np.eye(prior.dim))
    precision = Wa.T @ Wa + prior_prec
    rhs = Wa.T @ wy + prior_prec @ prior.mean
    cf = linalg.cho_factor(precision, lower=True)
    mean = linalg.cho_solve(cf, rhs)
    cov = linalg.cho_solve(cf, np.eye(prior.dim))
    return GaussianModel(mean, cov)


def analytic_posteriors(problem: LinearProblem, include_noise: bool = True) -> AnalyticPosteriors:
    """Naive, BAE and true posteriors of a linear-Gaussian problem.

    ``Gamma_nu = Gamma_e + (F - G) Gamma_hat (F - G)^T`` and
    ``nu* = e* + (F - G) k_hat``, where ``(k_hat, Gamma_hat)`` is the naive
    posterior. With ``include_noise=False`` the ``Gamma_e`` term is dropped,
    leaving only the approximation-error covariance in the likelihood.
    """
    F, G, y = problem.F, problem.G, problem.y_obs
    naive = _gaussian_posterior(G, y, problem.prior, problem.noise)
    true = _gaussian_posterior(F, y, problem.prior, problem.noise)
    D = F - G
    eps_cov = D @ naive.covariance @ D.T
    Gamma_nu = eps_cov + problem.noise.covariance if include_noise else eps_cov
    nu_star = D @ naive.mean + (problem.noise.mean if include_noise else 0.0)
    bae = _gaussian_posterior(G, y, problem.prior, GaussianModel(nu_star, Gamma_nu))
    return AnalyticPosteriors(naive, bae, true, nu_star, 0.5 * (Gamma_nu + Gamma_nu.T))


def _whitener(model: GaussianModel):
    # L_w with L_w^T L_w = Sigma^{-1}
    return linalg.solve_triangular(model.factor, np.eye(model.dim), lower=True)


def map_estimates(problem: LinearProblem, variant: str, include_noise: bool = True) -> np.ndarray:
    """Minimizer of the whitened regularized least-squares functional.

    Solved as one stacked least-squares system, independently of the
    normal-equation route in :func:`analytic_posteriors`.
    """
    Lk = _whitener(problem.prior)
    if variant == "true":
        A, err = problem.F, problem.noise
    elif variant == "naive":
        A, err = problem.G, problem.noise
    elif variant == "bae":
        post = analytic_posteriors(problem, include_noise)
        A, err = problem.G, GaussianModel(post.nu_star, post.Gamma_nu)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    Lw = _whitener(err)
    M = np.vstack([Lw @ A, Lk])
    b = np.concatenate([Lw @ (problem.y_obs - err.mean), Lk @ problem.prior.mean])
    sol, *_ = np.linalg.lstsq(M, b, rcond=None)
    return sol


def curve_fit_problem(m=30, n=2, p=1, prior_mean=(1.0, 1.0), delta_k=1.0, delta_e=1.2, c=0.001,
                     block_sizes=(10, 10, 10), truth=DEFAULT_TRUTH, seed=0, noise_fraction=None,
                     coarse=None):
    """Curve-fitting benchmark: order-``n`` polynomial truth, order-``p`` coarse model.

    Returns ``(problem, truth, t)``. ``noise_fraction`` (e.g. 0.3) derives
    ``delta_e`` from the maximum noiseless measurement instead of using the
    literal value. ``coarse="fine"`` makes the coarse model identical to the
    fine one.
    """
    t = np.linspace(0.0, 1.0, m)
    F = poly_design_matrix(t, n)
    G = F.copy() if coarse == "fine" else coarse_projection(F, p)
    truth = np.asarray(truth, dtype=float)
    if noise_fraction is not None:
        delta_e = noise_fraction * float(np.max(F @ truth))
    noise = GaussianModel(np.zeros(m), multilevel_noise_cov(m, block_sizes, delta_e, c))
    prior = GaussianModel(np.asarray(prior_mean, float), delta_k ** 2 * np.eye(n))
    y = F @ truth + noise.sample(1, make_rng(seed, "curve-fit-noise")).samples[0]
    return LinearProblem(F, G, prior, noise, y), truth, t


def projection_identity_error(post: AnalyticPosteriors, p: int) -> float:
    """Max abs difference between BAE and true posterior moments on the first ``p`` coordinates."""
    idx = np.arange(p)
    dm = np.abs(post.bae.mean[idx] - post.true.mean[idx]).max()
    dc = np.abs(post.bae.covariance[np.ix_(idx, idx)] - post.true.covariance[np.ix_(idx, idx)]).max()
    return float(max(dm, dc))
