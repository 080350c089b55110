"""Steady single-phase Darcy flow + heat transport on a 2-D vertical slice.

A desk-scale analogue of a geothermal slice model: a rectangular cross
section, six rock-type regions with anisotropic permeability, a hot deep
mass source at the bottom left, basal conductive heat flux elsewhere, closed
sides and a fixed-pressure, fixed-temperature top.

Discretization is cell-centred finite volumes on a uniform rectangular grid
with harmonic face permeabilities and first-order upwind advection. Both
solves are linear (constant fluid properties), so each is a single sparse
direct solve followed by a residual check.

Grid indexing: ``nz`` layers (depth, top to bottom) by ``nx`` columns (left to
right); cell ``(i, j)`` has flat index ``i * nx + j``. Depth is measured
downward from the top surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .base import ForwardModel, ModelFailure

__all__ = [
    "RockLayout",
    "SliceConfig",
    "SliceSolution",
    "SliceModel",
    "default_layout",
    "default_wells",
    "parameter_names",
    "rock_map",
    "map_parameters",
    "slice_simulate",
    "well_observe",
    "energy_balance",
]

RHO = 1000.0  # kg/m^3
CP = 4186.0  # J/(kg K)
NU = 3e-7  # m^2/s
GRAVITY = 9.81  # m/s^2


@dataclass(frozen=True)
class RockLayout:
    """Grid-independent rock regions as prioritized axis-aligned boxes.

    ``boxes`` holds ``(rock_index, x0, x1, d0, d1)``; a point takes the rock of
    the first box containing it (half-open intervals), otherwise ``fallback``.
    """

    names: tuple
    boxes: tuple
    fallback: int

    @property
    def n_rocks(self) -> int:
        return len(self.names)

    def classify(self, x, d):
        x = np.asarray(x, dtype=float)
        d = np.asarray(d, dtype=float)
        out = np.full(np.broadcast(x, d).shape, -1, dtype=int)
        for rock, x0, x1, d0, d1 in self.boxes:
            hit = (out < 0) & (x >= x0) & (x < x1) & (d >= d0) & (d < d1)
            out[hit] = rock
        out[out < 0] = self.fallback
        return out


def default_layout() -> RockLayout:
    """Six-region layout: surface, cap rock, upflow, outflow, medium, basement.

    A reconstruction of a typical geothermal slice, not a surveyed geometry.
    Region boundaries sit on multiples of 200 m so both the desk-scale and
    the ``paper`` profile grids resolve them exactly; the remaining fine/coarse
    discrepancy comes from discretizing the transport equations.
    """
    names = ("SURF", "CAPRO", "UPFLO", "OUTFL", "MEDM", "BASE")
    boxes = (
        (0, 0.0, 2000.0, 0.0, 200.0),  # surface layer
        (2, 0.0, 400.0, 200.0, 1600.0),  # upflow column above the source
        (1, 400.0, 2000.0, 200.0, 400.0),  # cap rock
        (3, 400.0, 2000.0, 400.0, 800.0),  # outflow beneath the cap
        (4, 400.0, 2000.0, 800.0, 1200.0),  # medium
    )
    return RockLayout(names=names, boxes=boxes, fallback=5)


def default_wells():
    xs = np.linspace(230.0, 1770.0, 7)
    depths = tuple(float(d) for d in np.linspace(100.0, 1500.0, 15))
    return tuple((float(x), depths) for x in xs)


@dataclass(frozen=True)
class SliceConfig:
    """Geometry, boundary conditions and grid of the slice model.

    Units: metres, degC, W/m^2, kg/(s m^2), J/kg, W/(m K). ``top_relief`` is the
    water-table height difference (m) between the left and right edges of the
    top boundary; it sets a laterally varying top pressure so that flow rates,
    not only flow patterns, depend on absolute permeability.
    """

    nz: int = 8
    nx: int = 10
    width: float = 2000.0
    depth: float = 1600.0
    layout: RockLayout = field(default_factory=default_layout)
    top_temperature: float = 15.0
    basal_heat_flux: float = 0.080
    source_interval: tuple = (0.0, 500.0)
    source_mass_flux: float = 7.5e-5
    source_enthalpy: float = 1200e3
    thermal_conductivity: float = 2.5
    porosity: float = 0.10
    top_relief: float = 40.0
    wells: tuple = field(default_factory=default_wells)

    def __post_init__(self):
        if self.nz < 4 or self.nx < 4:
            raise ValueError("need nz, nx >= 4")
        for x, depths in self.wells:
            if not 0.0 <= x <= self.width or any(not 0.0 <= d <= self.depth for d in depths):
                raise ValueError(f"well at x={x} lies outside the domain")

    @property
    def n_params(self) -> int:
        return 2 * self.layout.n_rocks

    @property
    def n_obs(self) -> int:
        return sum(len(d) for _, d in self.wells)

    @property
    def dx(self) -> float:
        return self.width / self.nx

    @property
    def dz(self) -> float:
        return self.depth / self.nz

    def cell_centers(self):
        xc = (np.arange(self.nx) + 0.5) * self.dx
        dc = (np.arange(self.nz) + 0.5) * self.dz
        return xc, dc

    def with_grid(self, nz, nx):
        return replace(self, nz=int(nz), nx=int(nx))


def parameter_names(layout: RockLayout | None = None):
    layout = layout or default_layout()
    return [f"k{axis}_{name}" for name in layout.names for axis in ("x", "y")]


def rock_map(cfg: SliceConfig) -> np.ndarray:
    """Rock index of every cell, shape ``(nz, nx)``, from cell-centre positions."""
    xc, dc = cfg.cell_centers()
    return cfg.layout.classify(xc[None, :], dc[:, None])


def map_parameters(k, rocks: np.ndarray, n_rocks: int | None = None):
    """Cell-wise ``(Kx, Kz)`` permeability fields from per-rock log10 values.

    ``k`` is ordered ``[kx_0, ky_0, kx_1, ky_1, ...]``; the fine and coarse
    grids share this vector, each cell taking the values of its rock type.
    """
    k = np.asarray(k, dtype=float)
    n_rocks = k.size // 2 if n_rocks is None else n_rocks
    if k.size != 2 * n_rocks:
        raise ValueError(f"expected {2 * n_rocks} parameters, got {k.size}")
    rocks = np.asarray(rocks)
    if rocks.min() < 0 or rocks.max() >= n_rocks:
        raise ValueError(f"rock index outside [0, {n_rocks})")
    pairs = 10.0 ** k.reshape(n_rocks, 2)
    return pairs[rocks, 0], pairs[rocks, 1]


@dataclass(frozen=True)
class SliceSolution:
    temperature: np.ndarray  # (nz, nx), degC
    pressure: np.ndarray  # (nz, nx), Pa overpressure above hydrostatic
    energy_in: float  # W per metre of slice thickness
    energy_out: float
    mass_in: float  # kg/s per metre
    mass_out: float
    residual_pressure: float
    residual_temperature: float

    @property
    def energy_imbalance(self) -> float:
        return abs(self.energy_in - self.energy_out) / max(abs(self.energy_in), abs(self.energy_out), 1e-300)


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


# grids up to this many cells are solved densely and in batches
DENSE_LIMIT = 200
RESIDUAL_TOL = 1e-8


class _Grid:
    """Geometry and connectivity of one configuration, computed once."""

    def __init__(self, cfg: SliceConfig):
        nz, nx = cfg.nz, cfg.nx
        self.cfg = cfg
        self.n = n = nz * nx
        self.rocks = rock_map(cfg)
        idx = np.arange(n).reshape(nz, nx)
        self.top = idx[0]
        self.bottom = idx[-1]
        self.a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
        self.b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
        self.n_h = nz * (nx - 1)
        xc, _ = cfg.cell_centers()
        self.p_top = RHO * GRAVITY * cfg.top_relief * (1.0 - xc / cfg.width)
        if cfg.source_mass_flux == 0.0 or cfg.source_interval is None:
            overlap = np.zeros(nx)
        else:
            s0, s1 = cfg.source_interval
            left = np.arange(nx) * cfg.dx
            overlap = np.clip(np.minimum(left + cfg.dx, s1) - np.maximum(left, s0), 0.0, None)
        self.q_src = cfg.source_mass_flux * overlap  # kg/s per metre into the bottom row
        self.basal = cfg.basal_heat_flux * (cfg.dx - overlap)  # W per metre
        lam = cfg.thermal_conductivity
        self.cond = np.concatenate([np.full(self.n_h, lam * cfg.dz / cfg.dx),
                                    np.full(self.a.size - self.n_h, lam * cfg.dx / cfg.dz)])
        self.ctop = lam * cfg.dx / (0.5 * cfg.dz)
        self.rows = np.concatenate([self.a, self.b, np.arange(n)])
        self.cols = np.concatenate([self.b, self.a, np.arange(n)])
        self.wells = _well_stencil(cfg)

    # -- assembly (leading batch axis B) ----------------------------------
    def pressure_system(self, kx, kz):
        cfg = self.cfg
        B = kx.shape[0]
        kx = kx.reshape(B, cfg.nz, cfg.nx)
        kz = kz.reshape(B, cfg.nz, cfg.nx)
        tx = _harmonic(kx[:, :, :-1], kx[:, :, 1:]) / NU * cfg.dz / cfg.dx
        tz = _harmonic(kz[:, :-1, :], kz[:, 1:, :]) / NU * cfg.dx / cfg.dz
        trans = np.concatenate([tx.reshape(B, -1), tz.reshape(B, -1)], axis=1)
        ttop = kz[:, 0, :] / NU * cfg.dx / (0.5 * cfg.dz)
        diag = np.zeros((B, self.n))
        diag[:, self.top] += ttop
        np.add.at(diag, (slice(None), self.a), trans)
        np.add.at(diag, (slice(None), self.b), trans)
        rhs = np.zeros((B, self.n))
        rhs[:, self.top] += ttop * self.p_top
        rhs[:, self.bottom] += self.q_src
        vals = np.concatenate([-trans, -trans, diag], axis=1)
        return vals, rhs, trans, ttop

    def temperature_system(self, flow, top_out):
        B = flow.shape[0]
        fpos = np.maximum(flow, 0.0) * CP  # carried with T_a
        fneg = np.maximum(-flow, 0.0) * CP  # carried with T_b
        out_top = np.maximum(top_out, 0.0) * CP
        in_top = np.maximum(-top_out, 0.0) * CP
        diag = np.zeros((B, self.n))
        np.add.at(diag, (slice(None), self.a), self.cond + fpos)
        np.add.at(diag, (slice(None), self.b), self.cond + fneg)
        diag[:, self.top] += self.ctop + out_top
        vals = np.concatenate([-(self.cond + fneg), -(self.cond + fpos), diag], axis=1)
        T_top = self.cfg.top_temperature
        rhs = np.zeros((B, self.n))
        rhs[:, self.top] += (self.ctop + in_top) * T_top
        rhs[:, self.bottom] += self.basal + self.q_src * self.cfg.source_enthalpy
        return vals, rhs, out_top, in_top

    # -- solves ---------------------------------------------------------
    def solve(self, vals, rhs):
        """Solve every system in the batch; returns solutions and relative residuals."""
        B, n = rhs.shape
        # rescale each system to unit max diagonal; does not change the relative residual
        scale = 1.0 / np.abs(vals[:, -n:]).max(axis=1)
        vals = vals * scale[:, None]
        rhs = rhs * scale[:, None]
        x = np.full((B, n), np.nan)
        if n <= DENSE_LIMIT:
            A = np.zeros((B, n, n))
            A[:, self.rows, self.cols] = vals
            with np.errstate(all="ignore"):
                try:
                    x = np.linalg.solve(A, rhs[..., None])[..., 0]
                except np.linalg.LinAlgError:
                    for i in range(B):
                        try:
                            x[i] = np.linalg.solve(A[i], rhs[i])
                        except np.linalg.LinAlgError:
                            pass
                r = np.einsum("bij,bj->bi", A, x) - rhs
        else:
            r = np.full((B, n), np.nan)
            for i in range(B):
                A = sp.csc_matrix((vals[i], (self.rows, self.cols)), shape=(n, n))
                try:
                    lu = splu(A)
                    xi = lu.solve(rhs[i])
                    xi = xi + lu.solve(rhs[i] - A @ xi)
                except (RuntimeError, ValueError):
                    continue
                x[i] = xi
                r[i] = A @ xi - rhs[i]
        norm_b = np.linalg.norm(rhs, axis=1)
        norm_b[norm_b == 0.0] = 1.0
        with np.errstate(invalid="ignore"):
            res = np.linalg.norm(r, axis=1) / norm_b
        res[~np.all(np.isfinite(x), axis=1)] = np.inf
        return x, res

    def simulate(self, K):
        """Batched solve for parameter rows ``K``; returns arrays plus a success mask."""
        K = np.atleast_2d(np.asarray(K, dtype=float))
        B = K.shape[0]
        nr = self.cfg.layout.n_rocks
        kxs = np.empty((B, self.n))
        kzs = np.empty((B, self.n))
        for i in range(B):
            kxs[i], kzs[i] = (f.ravel() for f in map_parameters(K[i], self.rocks, nr))
        vals, rhs, trans, ttop = self.pressure_system(kxs, kzs)
        p, res_p = self.solve(vals, rhs)
        flow = trans * (p[:, self.a] - p[:, self.b])
        top_out = ttop * (p[:, self.top] - self.p_top)
        vals, rhs, out_top, in_top = self.temperature_system(flow, top_out)
        T, res_t = self.solve(vals, rhs)
        ok = (res_p < RESIDUAL_TOL) & (res_t < RESIDUAL_TOL)
        return p, T, res_p, res_t, top_out, out_top, in_top, ok


@lru_cache(maxsize=16)
def _grid(cfg: SliceConfig) -> _Grid:
    return _Grid(cfg)


def slice_simulate(k, cfg: SliceConfig) -> SliceSolution:
    """Solve the steady pressure and temperature fields for log10 permeabilities ``k``.

    Raises
    ------
    ModelFailure
        When either linear solve produces a non-finite solution or a relative
        residual of ``1e-8`` or more.
    """
    g = _grid(cfg)
    p, T, res_p, res_t, top_out, out_top, in_top = (a[0] for a in g.simulate(k)[:7])
    for label, res in (("pressure", res_p), ("temperature", res_t)):
        if not res < RESIDUAL_TOL:
            raise ModelFailure("non-convergence", f"{label} relative residual {res:.3g}")
    T_top = cfg.top_temperature
    top_cond = g.ctop * (T[g.top] - T_top)  # positive = heat leaving by conduction
    e_in = float(g.basal.sum() + np.sum(g.q_src * cfg.source_enthalpy) + np.sum(in_top * T_top)
                 - np.sum(np.minimum(top_cond, 0.0)))
    e_out = float(np.sum(np.maximum(top_cond, 0.0)) + np.sum(out_top * T[g.top]))
    return SliceSolution(
        temperature=T.reshape(cfg.nz, cfg.nx),
        pressure=p.reshape(cfg.nz, cfg.nx),
        energy_in=e_in,
        energy_out=e_out,
        mass_in=float(g.q_src.sum() + np.sum(np.maximum(-top_out, 0.0))),
        mass_out=float(np.sum(np.maximum(top_out, 0.0))),
        residual_pressure=float(res_p),
        residual_temperature=float(res_t),
    )


def energy_balance(sol: SliceSolution) -> float:
    """Relative mismatch between boundary energy inflow and outflow."""
    return sol.energy_imbalance


def _interp_weights(centers, pos):
    """Index and fractional offset for linear interpolation, extrapolating at edges."""
    h = centers[1] - centers[0]
    j = np.clip(np.floor((pos - centers[0]) / h).astype(int), 0, centers.size - 2)
    t = (pos - centers[j]) / h
    return j, t


def _well_stencil(cfg: SliceConfig):
    xc, dc = cfg.cell_centers()
    xs, ds = [], []
    for x, depths in sorted(cfg.wells, key=lambda w: w[0]):
        if not 0.0 <= x <= cfg.width:
            raise ValueError(f"well at x={x} outside the domain")
        for d in sorted(depths):
            if not 0.0 <= d <= cfg.depth:
                raise ValueError(f"observation depth {d} outside the domain")
            xs.append(x)
            ds.append(d)
    j, tx = _interp_weights(xc, np.asarray(xs))
    i, tz = _interp_weights(dc, np.asarray(ds))
    return i, j, tx, tz


def well_observe(field, cfg: SliceConfig) -> np.ndarray:
    """Bilinear interpolation of a cell field at the well points.

    Ordering is wells left to right, depths shallow to deep. Points within
    half a cell of the domain edge are linearly extrapolated, so linear
    fields are reproduced exactly everywhere in the domain. A leading batch
    axis is allowed.
    """
    field = np.asarray(field, dtype=float)
    batch = field.shape[:-2] if field.shape[-2:] == (cfg.nz, cfg.nx) else field.shape[:-1]
    field = field.reshape(batch + (cfg.nz, cfg.nx))
    i, j, tx, tz = _grid(cfg).wells
    f00 = field[..., i, j]
    f01 = field[..., i, j + 1]
    f10 = field[..., i + 1, j]
    f11 = field[..., i + 1, j + 1]
    # difference form: exact for constant fields
    upper = f00 + tx * (f01 - f00)
    lower = f10 + tx * (f11 - f10)
    return upper + tz * (lower - upper)


class SliceModel(ForwardModel):
    """Well temperatures of the slice as a function of log10 permeabilities."""

    def __init__(self, cfg: SliceConfig | None = None):
        self.cfg = cfg or SliceConfig()
        self.input_dim = self.cfg.n_params
        self.output_dim = self.cfg.n_obs

    def simulate(self, k) -> SliceSolution:
        return slice_simulate(k, self.cfg)

    def _evaluate(self, k):
        return well_observe(slice_simulate(k, self.cfg).temperature, self.cfg)

    def _evaluate_many(self, K):
        g = _grid(self.cfg)
        out = np.full((K.shape[0], self.output_dim), np.nan)
        reasons = [None] * K.shape[0]
        for start in range(0, K.shape[0], 64):
            sl = slice(start, start + 64)
            _, T, _, _, _, _, _, ok = g.simulate(K[sl])
            out[sl][ok] = well_observe(T[ok], self.cfg)
            for off in np.flatnonzero(~ok):
                reasons[start + off] = "non-convergence"
        return out, reasons

    def __repr__(self):
        return f"SliceModel(nz={self.cfg.nz}, nx={self.cfg.nx})"
