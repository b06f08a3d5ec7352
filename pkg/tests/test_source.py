import json
import math

import numpy as np
import pytest

from kwlattice.fixedpoint import IterationOptions, NonConvergenceError
from kwlattice.greens import eval_phi0
from kwlattice.lattice import GridFunction, TailModel, TruncatedDomain
from kwlattice.source import (SourceProblem, normalization_constant, required_table_radius, solve_source,
                              source_weight, t0_map, threshold_h0)

KAPPA = 0.5
ALPHA = 16 * math.pi  # sigma = 4


def zero_v(dom):
    return GridFunction(dom, np.where(dom.closure, 0.0, np.nan), TailModel(0.0, 0.0))


@pytest.fixture(scope="module")
def K64(table131):
    return source_weight(table131, ALPHA, KAPPA, 64)


@pytest.fixture(scope="module")
def solved(table131):
    return solve_source(SourceProblem(KAPPA, ALPHA, 0.0, 64), table131)


class TestProblem:
    def test_sigma(self):
        p = SourceProblem.from_sigma(0.5, 4.0, 0.0, 64)
        assert p.alpha == pytest.approx(ALPHA) and p.sigma == pytest.approx(4.0)

    @pytest.mark.parametrize("args", [(0.0, ALPHA, 0.0), (0.5, 4 * math.pi, 0.0), (0.5, ALPHA, ALPHA),
                                      (0.5, ALPHA, -1.0)])
    def test_rejects_inadmissible(self, args):
        with pytest.raises(ValueError):
            SourceProblem(*args)

    def test_table_radius(self):
        assert required_table_radius(64) == 131


class TestWeight:
    def test_values(self, K64):
        assert K64((0, 0)) == 1.0
        assert K64((1, 0)) == pytest.approx(math.exp(-ALPHA * KAPPA / 4), rel=1e-12)

    def test_tail_is_power_law(self, K64, table131):
        assert K64.tail.kind == "power" and K64.tail.slope_a == pytest.approx(4.0)
        r = 1000.0
        assert K64.tail(r) == pytest.approx(math.exp(ALPHA * KAPPA * eval_phi0(table131, (1000, 0))), rel=1e-12)

    def test_rejects_small_sigma(self, table131):
        with pytest.raises(ValueError):
            source_weight(table131, 4 * math.pi, 0.5, 16)

    @pytest.mark.slow
    def test_total_mass_against_brute_force(self, K64, table131):
        total = math.exp(-normalization_constant(K64, 1.0, zero_v(K64.domain), KAPPA))
        L = 10_000
        a = np.arange(-L, L + 1)
        brute = 0.0
        for x1 in range(0, L + 1):
            row = a[x1 * x1 + a * a <= L * L]
            s = float(np.exp(ALPHA * KAPPA * eval_phi0(table131, np.full(row.size, x1), row)).sum())
            brute += s if x1 == 0 else 2 * s
        assert total == pytest.approx(brute, rel=1e-2)
        assert total == pytest.approx(brute, rel=1e-8)


class TestNormalization:
    def test_zero_v(self, K64):
        v = zero_v(K64.domain)
        c = normalization_constant(K64, 3.0, v, KAPPA)
        total = math.exp(-normalization_constant(K64, 1.0, v, KAPPA))
        assert c == pytest.approx(math.log(3.0 / total), abs=1e-14)

    @pytest.mark.parametrize("t", [-2.0, 0.3, 5.0])
    def test_constant_shift(self, K64, t):
        dom = K64.domain
        c0 = normalization_constant(K64, 2.0, zero_v(dom), KAPPA)
        vt = GridFunction(dom, np.where(dom.closure, t, np.nan), TailModel(0.0, t))
        assert normalization_constant(K64, 2.0, vt, KAPPA) == pytest.approx(c0 - KAPPA * t, abs=1e-12)

    def test_bracket_at_fixed_point(self, K64, table131):
        dom = K64.domain
        v0 = zero_v(dom)
        c_tilde = normalization_constant(K64, ALPHA, v0, KAPPA)
        v = v0
        for _ in range(30):
            v = t0_map(table131, KAPPA, ALPHA, 0.0, v)
        c_v = normalization_constant(K64, ALPHA, v, KAPPA)
        sup = float(np.nanmax(np.abs(v.values)))
        assert abs(c_v - c_tilde) <= KAPPA * sup

    def test_errors(self, K64):
        with pytest.raises(ValueError):
            normalization_constant(K64, 0.0, zero_v(K64.domain), KAPPA)
        with pytest.raises(ValueError):
            normalization_constant(K64, 1.0, zero_v(TruncatedDomain(5)), KAPPA)

    def test_heavy_tail_warns(self, table131):
        K = source_weight(table131, 2.05 * 2 * math.pi / KAPPA, KAPPA, 8)
        with pytest.warns(RuntimeWarning):
            normalization_constant(K, 1.0, zero_v(K.domain), KAPPA)


class TestMap:
    @pytest.mark.parametrize("t", [-1.0, 0.25, 3.0])
    def test_gauge_invariance(self, table131, t):
        dom = TruncatedDomain(64)
        rng = np.random.default_rng(0)
        v = GridFunction(dom, np.where(dom.closure, rng.normal(size=dom.shape) * 0.1, np.nan),
                         TailModel(0.0, 0.05, "log", 0.2, 2.0))
        vt = GridFunction(dom, v.values + t, TailModel(0.0, 0.05 + t, "log", 0.2, 2.0))
        a = t0_map(table131, KAPPA, ALPHA, 0.0, v)
        b = t0_map(table131, KAPPA, ALPHA, 0.0, vt)
        assert np.nanmax(np.abs(a.values - b.values)) < 1e-10


class TestSolve:
    def test_energy_identity(self, solved):
        assert solved.total_energy == pytest.approx(ALPHA, rel=1e-10)
        assert solved.relative_identity_residual < 1e-10

    def test_equation_residual(self, solved):
        assert solved.equation_residual < 10 * IterationOptions().tol

    def test_slope(self, solved):
        assert solved.fitted_slope == pytest.approx(-ALPHA / (2 * math.pi), rel=0.02)

    def test_positive_mass_half_beta(self, table131):
        rep = solve_source(SourceProblem(KAPPA, ALPHA, ALPHA / 2, 64), table131)
        assert rep.total_energy == pytest.approx(8 * math.pi, rel=0.01)
        assert rep.total_energy == pytest.approx(25.13, abs=0.01)

    def test_energy_linear_in_beta(self, table131):
        betas = [0.0, 0.25 * ALPHA, 0.5 * ALPHA, 0.75 * ALPHA]
        energies = [solve_source(SourceProblem(KAPPA, ALPHA, b, 64), table131).total_energy for b in betas]
        assert np.all(np.diff(energies) < 0)
        assert np.allclose(energies, [ALPHA - b for b in betas], rtol=1e-9)

    def test_solution_tail_continues_disc(self, solved):
        u = solved.solution
        assert u.tail.slope_a == pytest.approx(ALPHA / (2 * math.pi))
        ring = u.domain.points("boundary")[:5]
        for p in ring:
            assert u.tail(p.norm) == pytest.approx(u(p), abs=0.05)

    def test_solution_equation_pointwise(self, solved):
        u = solved.solution
        dom = u.domain
        for p in [(0, 0), (3, 4), (20, -7)]:
            lap = sum(u(q) for q in [(p[0] + 1, p[1]), (p[0] - 1, p[1]), (p[0], p[1] + 1), (p[0], p[1] - 1)])
            lap -= 4 * u(p)
            assert -lap == pytest.approx(math.exp(KAPPA * u(p)), abs=1e-9)
        assert dom.radius == 64

    def test_rerun_is_bitwise_identical(self, solved, table131):
        again = solve_source(SourceProblem(KAPPA, ALPHA, 0.0, 64), table131)
        assert again.iterations == solved.iterations
        assert np.array_equal(again.solution.values, solved.solution.values, equal_nan=True)

    def test_report_json(self, solved):
        data = json.loads(json.dumps(solved.to_json()))
        for key in ("total_energy", "fitted_slope", "fitted_constant_d", "identity_residual", "sigma"):
            assert key in data

    def test_nonconvergence_is_reported(self, table131):
        opts = IterationOptions(max_iter=2, tol=1e-14)
        with pytest.raises(NonConvergenceError) as err:
            solve_source(SourceProblem(KAPPA, ALPHA, 0.0, 64), table131, opts)
        assert len(err.value.history) >= 1


class TestThreshold:
    def test_arithmetic_example(self):
        h = threshold_h0(4.0, {"c0": 1.0, "c1": 1.0, "C2": 1.0})
        exponent = 8 * math.pi + 96 * math.pi * 2 ** -4.2
        assert h == pytest.approx(2 * math.exp(exponent), rel=1e-12)
        assert exponent == pytest.approx(41.54, abs=0.01)

    def test_precondition(self):
        with pytest.raises(ValueError):
            threshold_h0(2.0, {"c0": 1.0, "c1": 1.0, "C2": 1.0})

    def test_overflow_is_infinite(self):
        assert threshold_h0(2.0001, {"c0": 1.0, "c1": 1.0, "C2": 1.0}) == math.inf
