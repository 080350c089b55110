"""Dense Gaussian machinery: factorization, log-densities, sampling, moments.

Everything here works in log space and goes through a cached lower-triangular
Cholesky factor; no explicit matrix inverse is formed anywhere.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

__all__ = [
    "DegenerateCovarianceError",
    "InsufficientSamplesError",
    "JitterPolicy",
    "GaussianModel",
    "SampleEnsemble",
    "factorize",
    "gaussian_logpdf",
    "estimate_moments",
    "sample_gaussian",
    "make_rng",
    "derive_seed",
]

LOG_2PI = float(np.log(2.0 * np.pi))


class DegenerateCovarianceError(np.linalg.LinAlgError):
    """Covariance could not be factorized even after the jitter ladder."""


class InsufficientSamplesError(ValueError):
    """Too few ensemble members to estimate a covariance."""


@dataclass(frozen=True)
class JitterPolicy:
    """Diagonal regularization ladder used when Cholesky fails.

    Jitter values are relative to the mean diagonal ``trace(cov) / d``:
    first 0, then ``start``, multiplied by ``factor`` until ``stop``.
    """

    enabled: bool = True
    start: float = 1e-12
    stop: float = 1e-4
    factor: float = 10.0

    def ladder(self, cov):
        yield 0.0
        if not self.enabled:
            return
        d = cov.shape[0]
        scale = float(np.trace(cov)) / d if d else 0.0
        if not np.isfinite(scale) or scale <= 0.0:
            # zero or negative trace: fall back to an absolute ladder
            scale = 1.0
        rel = self.start
        while rel <= self.stop * (1.0 + 1e-9):
            yield rel * scale
            rel *= self.factor


DEFAULT_JITTER = JitterPolicy()
NO_JITTER = JitterPolicy(enabled=False)


def _symmetrize(cov):
    cov = np.array(cov, dtype=float, copy=True)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got shape {cov.shape}")
    return 0.5 * (cov + cov.T)


def factorize(covariance, policy: JitterPolicy = DEFAULT_JITTER):
    """Cholesky-factorize ``covariance + jitter * I`` with the smallest ladder jitter.

    Returns
    -------
    factor : ndarray
        Lower-triangular ``L`` with ``L @ L.T == covariance + jitter * I``.
    jitter : float
        The diagonal shift actually used (0 when none was needed).
    """
    cov = _symmetrize(covariance)
    d = cov.shape[0]
    if not np.all(np.isfinite(cov)):
        raise DegenerateCovarianceError("covariance has non-finite entries")
    eye = np.eye(d)
    for jitter in policy.ladder(cov):
        try:
            factor = np.linalg.cholesky(cov + jitter * eye if jitter else cov)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(factor)):
            return factor, float(jitter)
    raise DegenerateCovarianceError(
        f"covariance of dimension {d} not factorizable with jitter up to "
        f"{policy.stop:g} x mean diagonal"
    )


@dataclass(frozen=True, eq=False)
class GaussianModel:
    """Multivariate normal ``N(mean, covariance)`` with a lazily cached factor.

    The covariance is symmetrized on construction. Instances are immutable and
    safe to share between threads.
    """

    mean: np.ndarray
    covariance: np.ndarray
    policy: JitterPolicy = field(default=DEFAULT_JITTER, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = _symmetrize(np.atleast_2d(self.covariance))
        if mean.ndim != 1 or cov.shape[0] != mean.shape[0]:
            raise ValueError(
                f"mean of length {mean.shape} incompatible with covariance {cov.shape}"
            )
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def isotropic(cls, mean, sd, **kwargs):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls(mean, float(sd) ** 2 * np.eye(mean.size), **kwargs)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def _factorization(self):
        factor, jitter = factorize(self.covariance, self.policy)
        factor.setflags(write=False)
        return factor, jitter

    @property
    def factor(self) -> np.ndarray:
        return self._factorization[0]

    @property
    def jitter_used(self) -> float:
        return self._factorization[1]

    @cached_property
    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.factor))))

    def whiten(self, x):
        """Return ``L^{-1} (x - mean)`` for ``x`` of shape ``(d,)`` or ``(n, d)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected trailing dimension {self.dim}, got {x.shape}")
        r = (x - self.mean).T
        return linalg.solve_triangular(self.factor, r, lower=True, check_finite=False).T

    def logpdf(self, x):
        return gaussian_logpdf(x, self)

    def sample(self, n, rng):
        return sample_gaussian(self, n, rng)

    def marginal(self, idx):
        idx = np.atleast_1d(idx)
        return GaussianModel(self.mean[idx], self.covariance[np.ix_(idx, idx)], self.policy)

    def __repr__(self):
        return f"GaussianModel(dim={self.dim})"


def gaussian_logpdf(x, model: GaussianModel):
    """Log density of ``model`` at ``x``; vectorized over leading axes of ``x``."""
    z = model.whiten(x)
    maha = np.sum(z * z, axis=-1)
    out = -0.5 * maha - 0.5 * (model.dim * LOG_2PI + model.log_det)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class SampleEnsemble:
    """A set of ``count`` equal-length real vectors stored as rows."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError(f"ensemble needs shape (count, d) with count >= 1, got {arr.shape}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self):
        return self.count

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.samples, dtype=dtype)


def estimate_moments(ensemble):
    """Sample mean and unbiased (``1/(q-1)``) covariance of an ensemble.

    Rows are accumulated in index order so the result is bitwise reproducible.
    """
    x = ensemble.samples if isinstance(ensemble, SampleEnsemble) else np.asarray(ensemble, float)
    if x.ndim == 1:
        x = x[:, None]
    q = x.shape[0]
    if q < 2:
        raise InsufficientSamplesError(f"need at least 2 samples, got {q}")
    # shift by the first row: identical samples give exactly zero covariance
    shifted = x - x[0]
    offset = shifted.sum(axis=0) / q
    mean = x[0] + offset
    r = shifted - offset
    cov = (r.T @ r) / (q - 1)
    return mean, 0.5 * (cov + cov.T)


def sample_gaussian(model: GaussianModel, n: int, rng: np.random.Generator) -> SampleEnsemble:
    """Draw ``n`` samples ``mean + L z`` with ``z`` standard normal.

    An all-zero covariance is a point mass: every sample is the mean and no
    factorization (or jitter) is involved.
    """
    z = rng.standard_normal((int(n), model.dim))
    if not np.any(model.covariance):
        return SampleEnsemble(np.tile(model.mean, (int(n), 1)))
    return SampleEnsemble(model.mean + z @ model.factor.T)


def derive_seed(root: int, *labels) -> int:
    """Deterministic 64-bit child seed from a root seed and a label path.

    ``derive_seed(s, "naive", 0)`` hashes ``"<s>/naive/0"`` with SHA-256 and
    keeps the first 8 bytes.
    """
    path = "/".join([str(int(root))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.sha256(path.encode("utf-8")).digest()[:8], "little")


def make_rng(seed: int, *labels) -> np.random.Generator:
    """Philox-backed generator for ``seed``, optionally split by ``labels``."""
    if labels:
        seed = derive_seed(seed, *labels)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
