import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kwlattice.convolution import (Convolver, b_m_tau, convolve, decay_envelope, decay_suite,
                                   mean_zero_decay_check, nonzero_mean_decay_check, random_mean_zero)
from kwlattice.greens import eval_phi0
from kwlattice.lattice import GridFunction, TruncatedDomain, laplacian_grid


def point_mass(dom, pairs):
    vals = np.where(dom.closure, 0.0, np.nan)
    for p, w in pairs:
        vals[dom.index(p)] += w
    return GridFunction(dom, vals)


@pytest.fixture(scope="module")
def dom64():
    return TruncatedDomain(64)


@pytest.fixture(scope="module")
def conv64(table131, dom64):
    return Convolver(table131, dom64)


class TestConvolve:
    def test_dipole_at_origin(self, conv64, dom64):
        g = conv64(point_mass(dom64, [((1, 0), 1.0), ((0, 0), -1.0)]))
        assert g((0, 0)) == pytest.approx(-0.25, abs=1e-13)

    def test_dipole_far_away(self, table131, conv64, dom64):
        g = conv64(point_mass(dom64, [((1, 0), 1.0), ((0, 0), -1.0)]))
        val = g((50, 0))
        assert val == pytest.approx(eval_phi0(table131, (49, 0)) - eval_phi0(table131, (50, 0)), abs=1e-14)
        assert val == pytest.approx(math.log(50 / 49) / (2 * math.pi), abs=1e-5)
        assert val == pytest.approx(0.00321, abs=1e-5)

    def test_delta_reproduces_kernel(self, table131, conv64, dom64):
        g = conv64(GridFunction.delta(dom64))
        r = np.arange(-dom64.half_width, dom64.half_width + 1)
        ref = eval_phi0(table131, r[:, None], r[None, :])
        assert np.nanmax(np.abs(g.values - ref)) == 0.0

    def test_translation_covariance(self, table131, conv64, dom64):
        g = conv64(point_mass(dom64, [((3, -2), 1.0)]))
        for p in [(0, 0), (10, 4), (-7, 30)]:
            assert g(p) == pytest.approx(eval_phi0(table131, (3 - p[0], -2 - p[1])), abs=1e-14)

    def test_fft_matches_direct(self, conv64, dom64):
        rng = np.random.default_rng(0)
        vals = np.where(dom64.interior, rng.normal(size=dom64.shape) * (1 + dom64.radii) ** -3, np.nan)
        f = GridFunction(dom64, np.where(dom64.closure, np.nan_to_num(vals), np.nan))
        a = conv64(f, "direct").values
        b = conv64(f, "fft").values
        assert np.nanmax(np.abs(a - b)) < 1e-11

    def test_fundamental_solution(self, conv64, dom64):
        rng = np.random.default_rng(1)
        src = np.where(dom64.radii <= 20, rng.normal(size=dom64.shape), 0.0)
        f = GridFunction(dom64, np.where(dom64.closure, np.where(dom64.interior, src, 0.0), np.nan))
        g = conv64(f)
        res = -laplacian_grid(g.values, dom64.interior) - np.where(dom64.interior, src, np.nan)
        assert np.nanmax(np.abs(res)) < 1e-8

    def test_brute_force_sum(self, table131, conv64, dom64):
        f = point_mass(dom64, [((1, 2), 0.5), ((-4, 0), -1.5), ((10, -10), 2.0)])
        g = conv64(f)
        for x in [(0, 0), (17, -3), (-40, 25)]:
            ref = math.fsum(w * eval_phi0(table131, (y[0] - x[0], y[1] - x[1]))
                            for y, w in [((1, 2), 0.5), ((-4, 0), -1.5), ((10, -10), 2.0)])
            assert g(x) == pytest.approx(ref, abs=1e-13)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
    @settings(max_examples=15, deadline=None)
    def test_linearity(self, table64, a, b, seed):
        dom = TruncatedDomain(20)
        rng = np.random.default_rng(seed)
        f = np.where(dom.closure, rng.normal(size=dom.shape), np.nan)
        h = np.where(dom.closure, rng.normal(size=dom.shape), np.nan)
        conv = Convolver(table64, dom)
        lhs = conv(GridFunction(dom, a * f + b * h)).values
        rhs = a * conv(GridFunction(dom, f)).values + b * conv(GridFunction(dom, h)).values
        assert np.nanmax(np.abs(lhs - rhs)) < 1e-9

    def test_short_table_warns(self, table64):
        with pytest.warns(RuntimeWarning):
            assert not Convolver(table64, TruncatedDomain(40)).exact

    def test_wrong_domain(self, conv64):
        with pytest.raises(ValueError):
            conv64(GridFunction.delta(TruncatedDomain(5)))

    def test_convolve_function(self, table131, dom64):
        g = convolve(table131, GridFunction.delta(dom64))
        assert g((1, 0)) == pytest.approx(-0.25, abs=1e-13)


class TestDecayChecks:
    def test_dipole_ratio_at_origin(self, table131, dom64):
        f = point_mass(dom64, [((1, 0), 1.0), ((0, 0), -1.0)])
        rep = mean_zero_decay_check(table131, f, 4)
        assert 0.25 / decay_envelope(0.0, 4) == pytest.approx(0.25 / math.exp(-0.4), rel=1e-14)
        assert 0.25 / decay_envelope(0.0, 4) == pytest.approx(0.373, abs=5e-4)
        assert rep.observed_ratio_sup >= 0.25 / decay_envelope(0.0, 4) - 1e-14
        assert rep.norm_m == pytest.approx(2.0 ** 4)

    def test_zero_input(self, table131, dom64):
        rep = mean_zero_decay_check(table131, GridFunction(dom64, np.where(dom64.closure, 0.0, np.nan)), 4)
        assert rep.observed_ratio_sup == 0.0 and rep.bound_constant == 0.0

    def test_random_mean_zero_stays_bounded(self, table131, dom64):
        rng = np.random.default_rng(5)
        vals = np.where(dom64.closure, 0.0, np.nan)
        box = (np.abs(dom64.coords[0]) <= 5) & (np.abs(dom64.coords[1]) <= 5)
        vals[box] = rng.uniform(-1, 1, box.sum()) * (1 + dom64.radii[box]) ** -4
        vals[dom64.index((0, 0))] -= math.fsum(vals[box])
        rep = mean_zero_decay_check(table131, GridFunction(dom64, vals), 4, window=(10.0, 60.0))
        assert np.isfinite(rep.observed_ratio_sup)
        assert rep.trend_slope < 0

    def test_mean_zero_precondition(self, table131, dom64):
        with pytest.raises(ValueError):
            mean_zero_decay_check(table131, GridFunction.delta(dom64), 4)
        with pytest.raises(ValueError):
            mean_zero_decay_check(table131, point_mass(dom64, [((1, 0), 1.0), ((0, 0), -1.0)]), 2)

    def test_nonzero_mean_green_residual(self, table131, dom64):
        f = point_mass(dom64, [((0, 0), 2 * math.pi)])
        rep = nonzero_mean_decay_check(table131, f, 4, window=(10.0, 60.0))
        r = dom64.radii
        resid = convolve(table131, f).values + np.log1p(r) + 2 * math.pi * table131.fitted_constant
        far = dom64.closure & (r >= 30)
        assert np.max(np.abs(resid[far]) * r[far]) < 1.5
        assert rep.trend_slope < 0

    def test_nonzero_mean_recombination(self, table131, dom64):
        mono = nonzero_mean_decay_check(table131, point_mass(dom64, [((0, 0), 1.0)]), 4)
        both = nonzero_mean_decay_check(table131, point_mass(dom64, [((1, 0), 1.0)]), 4)
        dip = convolve(table131, point_mass(dom64, [((1, 0), 1.0), ((0, 0), -1.0)])).values
        g0 = convolve(table131, point_mass(dom64, [((0, 0), 1.0)])).values
        g1 = convolve(table131, point_mass(dom64, [((1, 0), 1.0)])).values
        assert np.nanmax(np.abs(g1 - (g0 + dip))) < 1e-14
        assert np.isfinite(mono.observed_ratio_sup) and np.isfinite(both.observed_ratio_sup)

    def test_nonzero_mean_precondition(self, table131, dom64):
        with pytest.raises(ValueError):
            nonzero_mean_decay_check(table131, point_mass(dom64, [((0, 0), -1.0)]), 4)

    def test_report_json(self, table131, dom64):
        rep = mean_zero_decay_check(table131, point_mass(dom64, [((1, 0), 1.0), ((0, 0), -1.0)]), 4)
        data = json.loads(rep.dumps())
        assert set(data) == {"m", "observed_ratio_sup", "bound_constant", "witness"}

    def test_random_inputs_are_admissible(self, dom64):
        f = random_mean_zero(dom64, 4, np.random.default_rng(2))
        assert abs(math.fsum(f.values[dom64.interior])) < 1e-12
        away = dom64.interior & (dom64.radii > 0)
        assert np.all(np.abs(f.values[away]) <= (1 + dom64.radii[away]) ** -4)

    def test_small_suite(self, table131):
        out = decay_suite(table131, ms=(3.0, 5.0), n_samples=3, radius=64, window=(10.0, 60.0))
        assert out["passed"] and out["max_trend_slope"] <= 0
        assert len(out["samples"]) == 6


class TestBMTau:
    def test_value(self):
        assert b_m_tau(2.0, 4.0, 0.0) == pytest.approx(16 / 16 * 2 ** -0.2)

    def test_range(self):
        with pytest.raises(ValueError):
            b_m_tau(2.0, 4.0, 0.4)
        with pytest.raises(ValueError):
            b_m_tau(2.0, 2.0, 0.0)
