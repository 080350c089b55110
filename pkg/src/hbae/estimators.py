"""scikit-learn style wrappers around the functional API.

The inversion does not map onto a supervised ``fit(X, y)`` cleanly: the
"training data" is one observation vector and the fitted state is a set of
posterior samples. These classes follow the estimator conventions that do
apply (constructor-only hyperparameters, trailing-underscore fitted
attributes, ``get_params``/``set_params``, ``check_is_fitted``) so they can be
cloned and parameter-swept.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .bae import build_error_ensemble, chain_source, error_statistics, prior_source, total_error_model
from .posterior import InverseProblem, ball_init, bae_log_posterior, find_mode, naive_log_posterior
from .probability import GaussianModel, derive_seed, make_rng
from .sampler import SamplerConfig, run_ensemble

__all__ = ["ApproximationErrorModel", "BAEInversion"]


def _seed(random_state):
    if random_state is None:
        return int(np.random.SeedSequence().entropy % 2 ** 63)
    return int(random_state)


class ApproximationErrorModel(TransformerMixin, BaseEstimator):
    """Gaussian model of ``eps = f(k) - g(k)`` estimated from parameter samples.

    Parameters
    ----------
    fine, coarse : ForwardModel
    q : int, optional
        Number of error samples; defaults to every row passed to ``fit``.
    policy : {"replace", "drop"}
        What to do with failed model runs.
    source : {"posterior-informed", "prior-based"}
        Provenance label for the samples passed to ``fit``.
    random_state : int, optional

    Attributes
    ----------
    epsilon_mean_ : ndarray of shape (m,)
    epsilon_cov_ : ndarray of shape (m, m)
    statistics_ : ErrorStatistics
    n_failed_ : int
    """

    def __init__(self, fine, coarse, q=None, policy="replace", source="posterior-informed", random_state=None):
        self.fine = fine
        self.coarse = coarse
        self.q = q
        self.policy = policy
        self.source = source
        self.random_state = random_state

    def fit(self, X, y=None):
        """Estimate the error statistics over parameter samples ``X`` (n, d)."""
        X = check_array(X, dtype=float)
        q = X.shape[0] if self.q is None else int(self.q)
        if self.policy == "replace":
            # replacements need spare rows; all rows are drawn without replacement
            q = min(q, X.shape[0])
        seed = _seed(self.random_state)
        ens = build_error_ensemble(chain_source(X), self.fine, self.coarse, q, make_rng(seed), self.policy)
        self.statistics_ = error_statistics(ens, self.source, seed)
        self.epsilon_mean_ = self.statistics_.epsilon_mean
        self.epsilon_cov_ = self.statistics_.epsilon_cov
        self.n_failed_ = ens.q_failed
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, Y):
        """Shift coarse-model outputs ``Y`` (n, m) by the mean error."""
        check_is_fitted(self, "epsilon_mean_")
        Y = check_array(Y, dtype=float)
        if Y.shape[1] != self.epsilon_mean_.size:
            raise ValueError(f"expected {self.epsilon_mean_.size} columns, got {Y.shape[1]}")
        return Y + self.epsilon_mean_

    def predict(self, X):
        """Bias-corrected coarse predictions ``g(k) + eps*`` for parameter rows ``X``."""
        check_is_fitted(self, "epsilon_mean_")
        X = check_array(X, dtype=float)
        return self.transform(np.array([self.coarse.evaluate(k) for k in X]))

    def total_error(self, noise: GaussianModel) -> GaussianModel:
        """``N(e* + eps*, Gamma_e + Gamma_eps)`` for measurement noise ``noise``."""
        check_is_fitted(self, "statistics_")
        return total_error_model(noise, self.statistics_)


class BAEInversion(BaseEstimator):
    """Naive inversion, error estimation and corrected inversion in one ``fit``.

    Parameters
    ----------
    fine, coarse : ForwardModel
    prior : GaussianPrior or UniformPrior
    noise : GaussianModel
        Measurement-noise model.
    n_walkers, n_steps, burn_in, thin : int
        Sampler settings, shared by both chains.
    q : int
        Error-ensemble size.
    source : {"posterior-informed", "prior-based"}
    init : {"prior", "mode"}
        Walker initialization; ``"mode"`` starts a tight ball around an
        optimizer-found mode of each posterior.
    random_state : int, optional

    Attributes
    ----------
    naive_chain_, chain_ : Chain
        Naive and corrected posterior samples.
    error_model_ : ApproximationErrorModel
    posterior_mean_, posterior_sd_ : ndarray of shape (d,)
        Moments of the corrected posterior.
    """

    def __init__(self, fine, coarse, prior, noise, n_walkers=24, n_steps=3000, burn_in=1000, thin=1, q=200,
                 source="posterior-informed", init="prior", random_state=None):
        self.fine = fine
        self.coarse = coarse
        self.prior = prior
        self.noise = noise
        self.n_walkers = n_walkers
        self.n_steps = n_steps
        self.burn_in = burn_in
        self.thin = thin
        self.q = q
        self.source = source
        self.init = init
        self.random_state = random_state

    def _sample(self, logpost, seed, label):
        if self.init == "mode":
            center, _ = find_mode(logpost, self.prior, make_rng(derive_seed(seed, label, "mode")))
            start = ball_init(center, 1e-3, self.prior)
        else:
            start = self.prior.sample
        cfg = SamplerConfig(self.n_walkers, self.n_steps, self.burn_in, seed=derive_seed(seed, label), thin=self.thin)
        return run_ensemble(logpost, cfg, start, vectorize=self.coarse.batched)

    def fit(self, y_obs, y=None):
        """Invert the observation vector ``y_obs`` (m,)."""
        y_obs = check_array(np.atleast_2d(y_obs), dtype=float).ravel()
        seed = _seed(self.random_state)
        problem = InverseProblem(self.coarse, self.prior, self.noise, y_obs)
        self.naive_chain_ = self._sample(naive_log_posterior(problem), seed, "naive")
        if self.source == "posterior-informed":
            params = self.naive_chain_.flat()
        elif self.source == "prior-based":
            params = prior_source(self.prior)(3 * self.q, make_rng(derive_seed(seed, "prior-draws")))
        else:
            raise ValueError(f"unknown source {self.source!r}")
        self.error_model_ = ApproximationErrorModel(self.fine, self.coarse, q=self.q, source=self.source,
                                                    random_state=derive_seed(seed, "errors")).fit(params)
        corrected = InverseProblem(self.coarse, self.prior, self.noise, y_obs, self.error_model_.total_error(self.noise))
        self.chain_ = self._sample(bae_log_posterior(corrected), seed, "bae")
        flat = self.chain_.flat()
        self.posterior_mean_ = flat.mean(axis=0)
        self.posterior_sd_ = flat.std(axis=0, ddof=1)
        self.n_features_in_ = y_obs.size
        return self

    def predict(self, X=None):
        """Bias-corrected coarse predictions at parameter rows ``X`` (default: the posterior mean)."""
        check_is_fitted(self, "chain_")
        X = self.posterior_mean_[None, :] if X is None else X
        return self.error_model_.predict(X)
