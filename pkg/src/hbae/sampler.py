"""Affine-invariant ensemble MCMC with the stretch move.

The ensemble is split into two halves; each half is updated in turn with
partners drawn from the other (already updated) half, so all log-posterior
evaluations inside a half-sweep are independent and may run concurrently.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .probability import SampleEnsemble, make_rng

__all__ = [
    "InitializationError",
    "ChainTooShortError",
    "SamplerConfig",
    "Chain",
    "stretch_factor",
    "stretch_move",
    "run_ensemble",
    "combine_ensembles",
    "diagnostics",
    "integrated_time",
    "split_rhat",
    "subsample",
]

log = logging.getLogger(__name__)


class InitializationError(RuntimeError):
    """No finite log-posterior starting point could be found for some walker."""


class ChainTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    n_walkers: int
    n_steps: int
    burn_in: int = 0
    stretch_a: float = 2.0
    seed: int = 0
    thin: int = 1
    max_init_tries: int = 100
    stuck_window: int = 100

    def __post_init__(self):
        if self.stretch_a <= 1.0:
            raise ValueError("stretch_a must exceed 1")
        if self.n_walkers < 4 or self.n_walkers % 2:
            raise ValueError("n_walkers must be even and at least 4")
        if self.n_steps <= self.burn_in:
            raise ValueError("n_steps must exceed burn_in")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass(frozen=True, eq=False)
class Chain:
    """Post-burn-in ensemble samples.

    ``values`` has shape ``(n_steps, n_walkers, d)``; ``logpost`` and
    ``accepted`` have shape ``(n_steps, n_walkers)``. ``accepted[s, w]`` records
    whether walker ``w``'s proposal at stored step ``s`` was accepted.
    """

    values: np.ndarray
    logpost: np.ndarray
    accepted: np.ndarray
    seeds: tuple = ()
    burn_in: int = 0
    thin: int = 1
    n_nonfinite: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ValueError("values must have shape (n_steps, n_walkers, d)")
        lp = np.asarray(self.logpost, dtype=float)
        acc = np.asarray(self.accepted, dtype=bool)
        if lp.shape != v.shape[:2] or acc.shape != v.shape[:2]:
            raise ValueError("logpost/accepted shape mismatch")
        if not np.all(np.isfinite(lp)):
            raise ValueError("stored samples must have finite log-posterior")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "logpost", lp)
        object.__setattr__(self, "accepted", acc)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_walkers(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def count(self) -> int:
        return self.n_steps * self.n_walkers

    @property
    def seed(self):
        return self.seeds[0] if len(self.seeds) == 1 else None

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean())

    def flat(self) -> np.ndarray:
        """Samples as ``(n_steps * n_walkers, d)``, step-major."""
        return self.values.reshape(-1, self.dim)

    def flat_logpost(self) -> np.ndarray:
        return self.logpost.reshape(-1)

    def mean(self):
        return self.flat().mean(axis=0)

    def cov(self):
        return np.cov(self.flat(), rowvar=False).reshape(self.dim, self.dim)


def stretch_factor(u, a: float):
    """Inverse-CDF map from uniform ``u`` to ``z`` with density ``~ 1/sqrt(z)`` on ``[1/a, a]``."""
    return ((a - 1.0) * np.asarray(u, dtype=float) + 1.0) ** 2 / a


def stretch_move(walker, complement, a: float = 2.0, rng=None, u=None):
    """Propose ``Y = X_c + z (X - X_c)`` for one walker.

    Exactly one of ``rng`` and ``u`` supplies the randomness. Returns the
    proposal and the log Hastings factor ``(d - 1) log z``.
    """
    x = np.asarray(walker, dtype=float)
    xc = np.asarray(complement, dtype=float)
    if x.shape != xc.shape:
        raise ValueError("walker and complement must have the same dimension")
    if u is None:
        u = rng.random()
    z = float(stretch_factor(u, a))
    return xc + z * (x - xc), (x.size - 1) * np.log(z)


def _evaluate(logpost, points, vectorize, map_fn):
    if vectorize:
        out = np.asarray(logpost(points), dtype=float)
    elif map_fn is not None:
        out = np.fromiter(map_fn(logpost, list(points)), dtype=float, count=len(points))
    else:
        out = np.array([logpost(p) for p in points], dtype=float)
    # NaN is treated like -inf: the proposal is rejected
    return np.where(np.isnan(out), -np.inf, out)


def _initialize(logpost, init, n_walkers, rng, max_tries, vectorize, map_fn):
    if callable(init):
        pos = np.array(init(rng, n_walkers), dtype=float, copy=True)
    else:
        pos = np.array(init, dtype=float, copy=True)
    if pos.ndim != 2 or pos.shape[0] != n_walkers:
        raise InitializationError(f"initial positions must have shape ({n_walkers}, d), got {pos.shape}")
    lp = _evaluate(logpost, pos, vectorize, map_fn)
    tries = 0
    while not np.all(np.isfinite(lp)):
        bad = np.flatnonzero(~np.isfinite(lp))
        if not callable(init) or tries >= max_tries:
            raise InitializationError(
                f"{bad.size} walker(s) without a finite log-posterior start after {tries} redraws"
            )
        pos[bad] = np.asarray(init(rng, bad.size), dtype=float)
        lp[bad] = _evaluate(logpost, pos[bad], vectorize, map_fn)
        tries += 1
    return pos, lp


def run_ensemble(logpost, cfg: SamplerConfig, init, *, vectorize=False, map_fn=None) -> Chain:
    """Run the stretch-move ensemble sampler.

    Parameters
    ----------
    logpost : callable
        ``k -> float`` (or ``(n, d) -> (n,)`` when ``vectorize``). Non-finite
        values reject the proposal.
    cfg : SamplerConfig
    init : array_like or callable
        Either an ``(n_walkers, d)`` point cloud or ``init(rng, n) -> (n, d)``,
        e.g. a prior sampler. With a callable, non-finite starts are redrawn
        up to ``cfg.max_init_tries`` times.
    map_fn : callable, optional
        ``map``-like function used to evaluate one half-ensemble, e.g.
        ``executor.map``. Results are consumed in order, so the chain does not
        depend on the number of workers.
    """
    rng = make_rng(cfg.seed)
    W, a = cfg.n_walkers, cfg.stretch_a
    pos, lp = _initialize(logpost, init, W, rng, cfg.max_init_tries, vectorize, map_fn)
    d = pos.shape[1]
    if W < 2 * d:
        raise ValueError(f"need at least 2*d = {2 * d} walkers, got {W}")

    n_keep = (cfg.n_steps - cfg.burn_in) // cfg.thin
    values = np.empty((n_keep, W, d))
    logps = np.empty((n_keep, W))
    accepted = np.empty((n_keep, W), dtype=bool)
    halves = (np.arange(W // 2), np.arange(W // 2, W))
    n_nonfinite = 0
    window_acc = 0
    warned = False
    step_acc = np.empty(W, dtype=bool)

    for step in range(cfg.n_steps):
        for h in (0, 1):
            active, other = halves[h], halves[1 - h]
            n = active.size
            partners = other[rng.integers(0, other.size, size=n)]
            z = stretch_factor(rng.random(n), a)
            log_u = np.log(rng.random(n))
            prop = pos[partners] + z[:, None] * (pos[active] - pos[partners])
            lp_prop = _evaluate(logpost, prop, vectorize, map_fn)
            n_nonfinite += int(np.sum(~np.isfinite(lp_prop)))
            log_ratio = (d - 1) * np.log(z) + lp_prop - lp[active]
            acc = np.isfinite(lp_prop) & (log_u < log_ratio)
            pos[active[acc]] = prop[acc]
            lp[active[acc]] = lp_prop[acc]
            step_acc[active] = acc

        window_acc += int(step_acc.sum())
        if (step + 1) % cfg.stuck_window == 0:
            if window_acc < 0.01 * cfg.stuck_window * W and not warned:
                log.warning("acceptance below 1%% over steps %d-%d; walkers may be stuck",
                            step + 2 - cfg.stuck_window, step + 1)
                warned = True
            window_acc = 0

        kept = step - cfg.burn_in
        if kept >= 0 and kept % cfg.thin == 0 and kept // cfg.thin < n_keep:
            s = kept // cfg.thin
            values[s] = pos
            logps[s] = lp
            accepted[s] = step_acc

    return Chain(values, logps, accepted, seeds=(int(cfg.seed),), burn_in=cfg.burn_in,
                 thin=cfg.thin, n_nonfinite=n_nonfinite)


def combine_ensembles(chains) -> Chain:
    """Concatenate independent post-burn-in ensembles along the walker axis."""
    chains = list(chains)
    if not chains:
        raise ValueError("no chains to combine")
    if len(chains) == 1:
        return chains[0]
    d = {c.dim for c in chains}
    if len(d) != 1:
        raise ValueError(f"dimension mismatch between chains: {sorted(d)}")
    steps = {c.n_steps for c in chains}
    if len(steps) != 1:
        raise ValueError(f"chains must have equal stored length, got {sorted(steps)}")
    seeds = tuple(s for c in chains for s in c.seeds)
    return Chain(
        np.concatenate([c.values for c in chains], axis=1),
        np.concatenate([c.logpost for c in chains], axis=1),
        np.concatenate([c.accepted for c in chains], axis=1),
        seeds=seeds,
        burn_in=max(c.burn_in for c in chains),
        thin=chains[0].thin,
        n_nonfinite=sum(c.n_nonfinite for c in chains),
    )


def _autocorr_1d(x):
    n = x.size
    f = np.fft.rfft(x - x.mean(), n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    return acf / acf[0] if acf[0] > 0 else np.zeros(n)


def integrated_time(x, c: float = 5.0):
    """Integrated autocorrelation time per coordinate.

    ``x`` has shape ``(n_steps, n_walkers, d)``. The walker-averaged
    autocorrelation function is summed with Sokal's adaptive window
    (smallest ``M >= c * tau(M)``).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    n, W, d = x.shape
    tau = np.empty(d)
    for j in range(d):
        rho = np.mean([_autocorr_1d(x[:, w, j]) for w in range(W)], axis=0)
        taus = 2.0 * np.cumsum(rho) - 1.0
        m = np.arange(n) < c * taus
        window = int(np.argmin(m)) if not np.all(m) else n - 1
        tau[j] = taus[window]
    return tau


def split_rhat(x):
    """Split potential scale reduction factor per coordinate.

    ``x`` has shape ``(n_steps, n_chains, d)``; each chain is cut in half and
    the halves treated as separate sequences.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    half = x.shape[0] // 2
    seqs = np.concatenate([x[:half], x[half:2 * half]], axis=1)  # (half, 2M, d)
    n = seqs.shape[0]
    means = seqs.mean(axis=0)
    W = seqs.var(axis=0, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / W)
    return np.where(W > 0, r, np.where(B > 0, np.inf, 1.0))


def diagnostics(chains, min_steps: int = 100) -> dict:
    """Acceptance rate, integrated autocorrelation times and split-R-hat."""
    if isinstance(chains, Chain):
        chains = [chains]
    n = min(c.n_steps for c in chains)
    if n < min_steps:
        raise ChainTooShortError(f"need >= {min_steps} post-burn-in steps, got {n}")
    stacked = np.concatenate([c.values[:n] for c in chains], axis=1)
    acc = float(np.mean(np.concatenate([c.accepted[:n].ravel() for c in chains])))
    return {
        "acceptance_rate": acc,
        "autocorr_time": integrated_time(stacked).tolist(),
        "split_rhat": split_rhat(stacked).tolist(),
        "n_samples": int(sum(c.count for c in chains)),
    }


def subsample(chain, q: int, rng) -> SampleEnsemble:
    """``q`` samples drawn uniformly without replacement from the flattened chain."""
    flat = chain.flat() if isinstance(chain, Chain) else np.asarray(chain, dtype=float)
    if q > flat.shape[0] or q < 1:
        raise ValueError(f"cannot draw {q} of {flat.shape[0]} samples without replacement")
    idx = rng.choice(flat.shape[0], size=q, replace=False)
    return SampleEnsemble(flat[idx])
