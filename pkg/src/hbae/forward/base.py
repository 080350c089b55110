from __future__ import annotations

import numpy as np

__all__ = ["ForwardModel", "ModelFailure", "IdentityModel"]


class ModelFailure(RuntimeError):
    """A recoverable forward-model run failure.

    ``reason`` is a short machine-readable tag such as ``"timeout"``,
    ``"simulator-error"``, ``"protocol-violation"``, ``"process-died"`` or
    ``"non-convergence"``.
    """

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


class ForwardModel:
    """Deterministic map from a parameter vector to an observation vector.

    Subclasses set ``input_dim`` / ``output_dim`` and implement ``_evaluate``.
    Failures are raised as :class:`ModelFailure`, never returned.
    """

    input_dim: int
    output_dim: int

    def evaluate(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        if k.shape != (self.input_dim,):
            raise ValueError(f"expected parameter vector of length {self.input_dim}, got {k.shape}")
        if not np.all(np.isfinite(k)):
            raise ModelFailure("invalid-input", "non-finite parameter")
        y = np.asarray(self._evaluate(k), dtype=float)
        if y.shape != (self.output_dim,):
            raise ModelFailure("protocol-violation", f"output shape {y.shape} != ({self.output_dim},)")
        return y

    __call__ = evaluate

    @property
    def batched(self) -> bool:
        """True when the subclass evaluates batches natively rather than row by row."""
        return type(self)._evaluate_many is not ForwardModel._evaluate_many

    def evaluate_many(self, K):
        """Evaluate each row of ``K``.

        Returns ``(Y, reasons)``: failed rows of ``Y`` are NaN and the matching
        entry of ``reasons`` holds the failure tag (``None`` on success).
        """
        K = np.asarray(K, dtype=float)
        if K.ndim != 2 or K.shape[1] != self.input_dim:
            raise ValueError(f"expected (n, {self.input_dim}) parameters, got {K.shape}")
        bad = ~np.all(np.isfinite(K), axis=1)
        Y = np.full((K.shape[0], self.output_dim), np.nan)
        reasons = ["invalid-input" if b else None for b in bad]
        good = np.flatnonzero(~bad)
        if good.size:
            Yg, rg = self._evaluate_many(K[good])
            Yg = np.asarray(Yg, dtype=float)
            if Yg.shape != (good.size, self.output_dim):
                raise ModelFailure("protocol-violation", f"batch output shape {Yg.shape}")
            Y[good] = Yg
            for i, r in zip(good, rg):
                reasons[i] = r
        return Y, reasons

    def _evaluate(self, k):
        raise NotImplementedError

    def _evaluate_many(self, K):
        # fallback: one run per row
        Y = np.full((K.shape[0], self.output_dim), np.nan)
        reasons = [None] * K.shape[0]
        for i, k in enumerate(K):
            try:
                Y[i] = self.evaluate(k)
            except ModelFailure as exc:
                reasons[i] = exc.reason
        return Y, reasons


class IdentityModel(ForwardModel):
    """``y = k``; handy as a trivial stand-in in predictive checks."""

    def __init__(self, dim: int):
        self.input_dim = self.output_dim = int(dim)

    def _evaluate(self, k):
        return k.copy()
