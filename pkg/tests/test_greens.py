import math

import numpy as np
import pytest

from kwlattice.greens import (CLASSICAL_CONSTANT, HALF_GAMMA0, GreensConstructionError, GreensTable,
                              asymptotic_fit, build_greens_table, estimate_c1, eval_phi0, fourier_oracle,
                              kernel_block, load_or_build, recurrence_values)
from kwlattice.lattice import laplacian_grid

# frozen reference values: closed forms of the first few lattice points
EXACT = {
    (1, 0): -0.25,
    (1, 1): -1.0 / math.pi,
    (2, 0): -1.0 + 2.0 / math.pi,
    (2, 2): -(1.0 + 1.0 / 3.0) / math.pi,
}


def full_block(table, half):
    r = np.arange(-half, half + 1)
    return eval_phi0(table, r[:, None], r[None, :])


class TestValues:
    @pytest.mark.parametrize("point", sorted(EXACT))
    def test_closed_forms(self, table64, point):
        assert eval_phi0(table64, point) == pytest.approx(EXACT[point], abs=1e-13)

    def test_origin(self, table64):
        assert eval_phi0(table64, (0, 0)) == 0.0

    @pytest.mark.parametrize("point", [(1, 0), (1, 1), (2, 0), (3, 2), (5, 0)])
    def test_independent_two_dimensional_quadrature(self, table64, point):
        assert eval_phi0(table64, point) == pytest.approx(fourier_oracle(*point), abs=1e-10)

    def test_recurrence_agrees_with_table(self, table64):
        exact = recurrence_values(8)
        worst = max(abs(table64.values[m, n] - v) for (m, n), v in exact.items())
        assert worst < 1e-12

    def test_recurrence_closed_forms(self):
        exact = recurrence_values(3)
        for p, v in EXACT.items():
            assert exact[p] == pytest.approx(v, abs=1e-15)

    def test_symmetry_is_exact(self, table64):
        block = full_block(table64, 20)
        assert np.array_equal(block, block.T)
        assert np.array_equal(block, block[::-1, :])
        assert np.array_equal(block, block[:, ::-1])

    def test_negative_away_from_origin(self, table64):
        v = table64.values.copy()
        v[0, 0] = -1.0
        assert np.all(v < 0)

    def test_monotone_along_axis(self, table64):
        axis = table64.values[1:, 0]
        assert np.all(np.diff(axis) < 0)


class TestDefiningEquation:
    def test_minus_laplacian_is_delta(self, table64):
        # stored quarter mirrored to the full box; the stencil never leaves the table
        q = table64.values
        half = table64.exact_radius
        block = np.block([[q[::-1, ::-1], q[::-1, 1:]], [q[1:, ::-1], q[1:, 1:]]])
        res = -laplacian_grid(block)
        res[half, half] -= 1.0
        assert np.nanmax(np.abs(res)) < 1e-10

    def test_stored_residual_diagnostics(self, table64):
        assert np.isfinite(table64.max_residual_times_r)
        assert table64.crossover_radius == table64.exact_radius - 1


class TestAsymptotics:
    def test_constant_is_classical(self, table128):
        const, _ = asymptotic_fit(table128)
        assert const == pytest.approx(CLASSICAL_CONSTANT, abs=2e-6)
        assert abs(const - HALF_GAMMA0) > 0.1

    def test_residual_bounded_by_fit(self, table128):
        const, rr = asymptotic_fit(table128)
        n = table128.values.shape[0]
        m, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        r = np.hypot(m, k)
        sel = (r >= 64) & (r <= 128)
        err = np.abs(table128.values[sel] + np.log(r[sel]) / (2 * math.pi) + const)
        assert np.all(err <= rr / r[sel] + 1e-15)
        assert rr < 0.05

    def test_seam_continuity_on_large_table(self, table128):
        assert table128.seam_error < 1e-6

    def test_far_field_branch(self, table64):
        val = eval_phi0(table64, (10 ** 6, 0))
        assert val == pytest.approx(-math.log(1e6) / (2 * math.pi) - table64.fitted_constant, abs=1e-14)
        assert -math.log(1e6) / (2 * math.pi) == pytest.approx(-2.19873, abs=1e-4)

    def test_fit_needs_large_table(self):
        small = build_greens_table(16, 256)
        with pytest.raises(ValueError):
            asymptotic_fit(small)


class TestC1:
    def test_examples(self, table64):
        c1 = estimate_c1(table64)
        assert c1 >= 1.0
        assert abs(-0.25 + math.log(2) / (2 * math.pi)) <= c1
        # upper log bound at (1,1): -1/pi <= -ln(1+sqrt2)/c1
        assert c1 >= math.pi * math.log(1 + math.sqrt(2)) > math.pi * math.log(2)

    def test_bounds_hold_everywhere(self, table64):
        c1 = estimate_c1(table64)
        n = table64.values.shape[0]
        m, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        sel = (m > 0) | (k > 0)
        phi = table64.values[sel]
        lg = np.log1p(np.hypot(m[sel], k[sel]))
        assert np.all(np.abs(phi + lg / (2 * math.pi)) <= c1 + 1e-15)
        assert np.all(-c1 * lg <= phi + 1e-15)
        assert np.all(phi <= -lg / c1 + 1e-15)

    def test_monotone_in_table_size(self, table64, table128):
        assert estimate_c1(table128) >= estimate_c1(table64)


class TestBuildAndPersistence:
    def test_preconditions(self):
        with pytest.raises(ValueError):
            build_greens_table(4)
        with pytest.raises(ValueError):
            build_greens_table(64, 80)

    def test_disagreement_with_recurrence_is_caught(self, monkeypatch):
        import kwlattice.greens as g

        exact = g.recurrence_values(8)
        exact[(3, 1)] += 1e-7
        monkeypatch.setattr(g, "recurrence_values", lambda radius=8: exact)
        with pytest.raises(GreensConstructionError):
            build_greens_table(16, 256)

    def test_save_load(self, table64, tmp_path):
        table64.save(tmp_path / "g")
        again = GreensTable.load(tmp_path / "g")
        assert np.array_equal(again.values, table64.values)
        assert again.fingerprint == table64.fingerprint
        assert again.metadata() == table64.metadata()

    def test_csv_dump(self, tmp_path):
        table = build_greens_table(8, 256)
        table.save_csv(tmp_path / "g.csv")
        rows = (tmp_path / "g.csv").read_text().splitlines()
        assert rows[0] == "x1,x2,phi0"
        assert len(rows) == 1 + 9 * 10 // 2
        x1, x2, v = rows[2].split(",")
        assert (x1, x2) == ("1", "0") and float(v) == pytest.approx(-0.25, abs=1e-13)

    def test_cache_reuses_file(self, tmp_path):
        a = load_or_build(16, 256, directory=tmp_path)
        b = load_or_build(16, 256, directory=tmp_path)
        assert a.fingerprint == b.fingerprint
        assert len(list(tmp_path.glob("*.npy"))) == 1

    def test_kernel_block_warns_past_crossover(self, table64):
        with pytest.warns(RuntimeWarning):
            kernel_block(table64, 70)
        assert kernel_block(table64, 3).shape == (7, 7)
