import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hbae.estimators import ApproximationErrorModel, BAEInversion
from hbae.oracle import analytic_posteriors
from hbae.posterior import GaussianPrior
from hbae.probability import make_rng


def test_error_model_linear(poly_models, curve_fit):
    fine, coarse = poly_models
    problem = curve_fit[0]
    X = make_rng(0).standard_normal((100, 2))
    est = ApproximationErrorModel(fine, coarse, random_state=1).fit(X)
    D = problem.F - problem.G
    np.testing.assert_allclose(est.epsilon_mean_, D @ X.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(est.epsilon_cov_, D @ np.cov(X, rowvar=False) @ D.T, atol=1e-10)
    # bias-corrected coarse predictions at the sample mean equal the fine model there
    np.testing.assert_allclose(est.predict(X.mean(axis=0, keepdims=True))[0], fine.evaluate(X.mean(axis=0)),
                               atol=1e-12)
    assert est.n_failed_ == 0


def test_error_model_total_and_transform(poly_models, curve_fit):
    fine, coarse = poly_models
    problem = curve_fit[0]
    est = ApproximationErrorModel(fine, coarse, q=50, random_state=2).fit(make_rng(1).standard_normal((80, 2)))
    assert est.statistics_.q_succeeded == 50
    total = est.total_error(problem.noise)
    np.testing.assert_allclose(total.covariance, problem.noise.covariance + est.epsilon_cov_)
    with pytest.raises(ValueError):
        est.transform(np.zeros((2, 3)))


def test_not_fitted(poly_models):
    with pytest.raises(NotFittedError):
        ApproximationErrorModel(*poly_models).transform(np.zeros((1, 30)))


def test_clone_and_params(poly_models, curve_fit):
    problem = curve_fit[0]
    est = BAEInversion(*poly_models, GaussianPrior(problem.prior.mean, problem.prior.covariance), problem.noise,
                       n_steps=100, burn_in=10)
    twin = clone(est).set_params(n_walkers=8)
    assert twin.get_params()["n_walkers"] == 8 and est.n_walkers == 24


@pytest.mark.parametrize("source", ["posterior-informed", "prior-based"])
def test_bae_inversion_linear(poly_models, curve_fit, source):
    problem = curve_fit[0]
    prior = GaussianPrior(problem.prior.mean, problem.prior.covariance)
    est = BAEInversion(*poly_models, prior, problem.noise, n_walkers=16, n_steps=2500, burn_in=500, q=500,
                       source=source, random_state=4).fit(problem.y_obs)
    target = analytic_posteriors(problem)
    sd = np.sqrt(np.diag(target.bae.covariance))
    assert est.chain_.values.shape == (2000, 16, 2)
    if source == "posterior-informed":
        assert np.all(np.abs(est.posterior_mean_ - target.bae.mean) < 0.15 * sd)
    assert est.predict().shape == (1, 30)


def test_bae_inversion_bad_source(poly_models, curve_fit):
    problem = curve_fit[0]
    prior = GaussianPrior(problem.prior.mean, problem.prior.covariance)
    est = BAEInversion(*poly_models, prior, problem.noise, n_walkers=8, n_steps=50, burn_in=10, source="guess")
    with pytest.raises(ValueError):
        est.fit(problem.y_obs)
