from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from hbae.forward.base import IdentityModel, ModelFailure
from hbae.forward.polynomial import (LinearModel, coarse_projection, poly_design_matrix, polynomial_pair,
                                     projection_matrix)
from hbae.forward.slice import (SliceConfig, SliceModel, default_layout, map_parameters, parameter_names, rock_map,
                                slice_simulate, well_observe)

DEPTHS = np.tile(np.linspace(100.0, 1500.0, 15), 7)
finite = st.floats(-1e3, 1e3)


class TestPolynomial:
    def test_design_small(self):
        np.testing.assert_array_equal(poly_design_matrix([0.0, 1.0], 2), [[0, 0], [1, 1]])
        np.testing.assert_array_equal(poly_design_matrix([2.0], 3), [[2, 4, 8]])

    def test_design_shape(self):
        assert poly_design_matrix(np.linspace(0, 1, 30), 2).shape == (30, 2)

    def test_projection_zeroes_columns(self):
        F = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(coarse_projection(F, 1), [[1, 0], [3, 0]])
        F3 = np.arange(12.0).reshape(4, 3) + 1
        G = coarse_projection(F3, 2)
        np.testing.assert_array_equal(G[:, :2], F3[:, :2])
        assert np.all(G[:, 2] == 0)

    def test_hand_evaluation(self):
        fine, coarse = polynomial_pair([0.5], 2, 1)
        np.testing.assert_allclose(coarse.evaluate(np.ones(2)), [0.5])
        np.testing.assert_allclose(fine.evaluate(np.ones(2)), [0.75])

    @pytest.mark.parametrize("p", [0, 2, 3])
    def test_invalid_coarsening(self, p):
        with pytest.raises(ValueError):
            coarse_projection(np.ones((3, 2)), p)

    @given(hnp.arrays(float, 3, elements=finite), st.integers(1, 2))
    def test_projection_commutes(self, k, p):
        t = np.linspace(0, 1, 9)
        fine, coarse = polynomial_pair(t, 3, p)
        P = projection_matrix(3, p)
        np.testing.assert_allclose(coarse.evaluate(k), fine.evaluate(P @ k), atol=1e-12, rtol=0)

    def test_batch_matches_single(self, rng):
        model = LinearModel(rng.standard_normal((5, 3)))
        K = rng.standard_normal((7, 3))
        Y, reasons = model.evaluate_many(K)
        np.testing.assert_allclose(Y, np.array([model.evaluate(k) for k in K]), rtol=1e-14)
        assert reasons == [None] * 7


class TestBase:
    def test_identity(self):
        np.testing.assert_array_equal(IdentityModel(3).evaluate([1.0, 2.0, 3.0]), [1, 2, 3])

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            IdentityModel(3).evaluate([1.0])

    def test_non_finite_is_failure(self):
        with pytest.raises(ModelFailure) as exc:
            IdentityModel(2).evaluate([np.nan, 0.0])
        assert exc.value.reason == "invalid-input"

    def test_evaluate_many_marks_invalid_rows(self):
        Y, reasons = IdentityModel(2).evaluate_many(np.array([[1.0, 2.0], [np.inf, 0.0]]))
        np.testing.assert_array_equal(Y[0], [1, 2])
        assert np.all(np.isnan(Y[1]))
        assert reasons == [None, "invalid-input"]


class TestRockMap:
    def test_single_rock(self):
        Kx, Kz = map_parameters([-14.0, -15.0], np.zeros((3, 4), dtype=int))
        assert np.all(Kx == 1e-14) and np.all(Kz == 1e-15)

    def test_checkerboard(self):
        rocks = np.indices((4, 4)).sum(axis=0) % 2
        Kx, _ = map_parameters([-13.0, -13.0, -16.0, -16.0], rocks)
        assert set(np.unique(Kx)) == {1e-13, 1e-16}
        np.testing.assert_array_equal(Kx == 1e-16, rocks == 1)

    def test_unknown_rock(self):
        with pytest.raises(ValueError):
            map_parameters([-14.0, -14.0], np.array([[0, 1]]))

    def test_resolution_independent_regions(self, rng):
        k = rng.uniform(-17, -12, 12)
        per_region = []
        for nz, nx in ((17, 20), (81, 100)):
            rocks = rock_map(SliceConfig(nz=nz, nx=nx))
            Kx, Kz = map_parameters(k, rocks, 6)
            values = [(np.unique(Kx[rocks == r]), np.unique(Kz[rocks == r])) for r in range(6)]
            assert all(a.size == 1 and b.size == 1 for a, b in values)
            per_region.append([(a[0], b[0]) for a, b in values])
        np.testing.assert_array_equal(per_region[0], per_region[1])

    def test_regions_partition_default_grids(self):
        for nz, nx in ((8, 10), (40, 50)):
            rocks = rock_map(SliceConfig(nz=nz, nx=nx))
            assert set(np.unique(rocks)) == set(range(6))

    def test_parameter_names(self):
        names = parameter_names()
        assert len(names) == 12 and names[0].startswith("kx_") and names[1].startswith("ky_")
        assert len(default_layout().names) == 6


class TestWellObserve:
    def test_length_and_ordering(self):
        cfg = SliceConfig()
        assert cfg.n_obs == 105
        field = np.broadcast_to(np.arange(cfg.nx, dtype=float), (cfg.nz, cfg.nx))
        y = well_observe(field, cfg).reshape(7, 15)
        assert np.all(np.diff(y[:, 0]) > 0)  # wells left to right

    def test_linear_field_exact(self):
        cfg = SliceConfig(nz=12, nx=9)
        xc, dc = cfg.cell_centers()
        field = 3.0 + 0.02 * dc[:, None] - 0.004 * xc[None, :]
        y = well_observe(field, cfg)
        xs = np.repeat([w[0] for w in cfg.wells], 15)
        np.testing.assert_allclose(y, 3.0 + 0.02 * DEPTHS - 0.004 * xs, atol=1e-12, rtol=0)

    def test_cell_centre_value(self, rng):
        cfg = SliceConfig(nz=8, nx=10)
        xc, dc = cfg.cell_centers()
        cfg = replace(cfg, wells=((float(xc[3]), (float(dc[5]),)),))
        field = rng.standard_normal((8, 10))
        assert well_observe(field, cfg)[0] == pytest.approx(field[5, 3], abs=1e-12)

    def test_constant_field_grid_independent(self):
        a = well_observe(np.full((8, 10), 42.0), SliceConfig(nz=8, nx=10))
        b = well_observe(np.full((40, 50), 42.0), SliceConfig(nz=40, nx=50))
        np.testing.assert_array_equal(a, b)

    def test_well_outside_domain(self):
        with pytest.raises(ValueError):
            SliceConfig(wells=((2500.0, (100.0,)),))

    def test_small_grid_rejected(self):
        with pytest.raises(ValueError):
            SliceConfig(nz=3, nx=10)


class TestSliceSimulate:
    def test_conduction_limit(self):
        cfg = replace(SliceConfig(nz=16, nx=20), source_mass_flux=0.0)
        sol = slice_simulate(np.full(12, -30.0), cfg)
        y = well_observe(sol.temperature, cfg)
        np.testing.assert_allclose(y, 15.0 + 0.080 / 2.5 * DEPTHS, atol=1e-6)
        bottom = 15.0 + 0.032 * 1600.0
        assert bottom == pytest.approx(66.2)

    def test_conduction_fine_coarse_agree(self):
        base = replace(SliceConfig(), source_mass_flux=0.0)
        k = np.full(12, -30.0)
        a = SliceModel(base.with_grid(8, 10)).evaluate(k)
        b = SliceModel(base.with_grid(40, 50)).evaluate(k)
        assert np.abs(a - b).max() < 0.5

    @given(hnp.arrays(float, 12, elements=st.floats(-17, -12)))
    def test_energy_balance(self, k):
        for nz, nx in ((8, 10), (16, 20)):
            sol = slice_simulate(k, SliceConfig(nz=nz, nx=nx))
            assert sol.energy_imbalance < 1e-6
            assert sol.residual_pressure < 1e-8 and sol.residual_temperature < 1e-8

    def test_refinement_converges(self):
        cfg = replace(SliceConfig(), source_mass_flux=1e-5)
        k = np.full(12, -15.0)
        ys = [SliceModel(cfg.with_grid(nz, nx)).evaluate(k) for nz, nx in ((8, 10), (16, 20), (32, 40), (64, 80))]
        steps = [np.abs(b - a).max() for a, b in zip(ys, ys[1:])]
        assert steps[0] > steps[1] > steps[2]

    def test_source_heats_column_above(self):
        cfg = SliceConfig(nz=16, nx=20)
        k = np.full(12, -14.0)
        lo = slice_simulate(k, cfg).temperature
        hi = slice_simulate(k, replace(cfg, source_mass_flux=1.5e-4)).temperature
        xc, _ = cfg.cell_centers()
        above = (hi - lo)[: cfg.nz // 2, xc < 500.0]
        assert np.all(above[:3] > 0)
        assert above[0].min() > 1.0

    def test_deterministic(self, rng):
        k = rng.uniform(-17, -12, 12)
        m = SliceModel()
        assert m.evaluate(k).tobytes() == m.evaluate(k).tobytes()

    def test_batch_matches_single(self, rng):
        m = SliceModel()
        K = rng.uniform(-17, -12, (5, 12))
        Y, reasons = m.evaluate_many(K)
        assert reasons == [None] * 5
        for k, y in zip(K, Y):
            np.testing.assert_allclose(y, m.evaluate(k), rtol=0, atol=1e-9)

    def test_non_finite_parameter(self):
        with pytest.raises(ModelFailure):
            SliceModel().evaluate(np.full(12, np.nan))
