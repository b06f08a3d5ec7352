"""Lattice Green's function of -Delta on Z^2, normalised by Phi0(0) = 0.

Values come from the Fourier representation

    Phi0(x) = -(1/4 pi^2) \\int_{[-pi,pi]^2} (1 - cos(x.t)) / (4 - 2 cos t1 - 2 cos t2) dt.

Integrating out ``t1`` in closed form leaves a smooth one-dimensional integral

    Phi0(m, n) = -(1/2 pi) \\int_0^pi (1 - e^{-|m| s} cos(n t)) / sinh(s) dt,
    cosh(s) = 2 - cos(t),

which Gauss-Legendre handles to ~1e-14. Small-radius values are cross-checked
against the exact recurrence seeded by the diagonal values
``Phi0(n, n) = -(1/pi) sum_{k<=n} 1/(2k-1)``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import mpmath
import numpy as np
from filelock import FileLock
from scipy import integrate

from .lattice import LatticePoint

log = logging.getLogger(__name__)

__all__ = [
    "GreensTable",
    "GreensConstructionError",
    "build_greens_table",
    "load_or_build",
    "eval_phi0",
    "asymptotic_fit",
    "estimate_c1",
    "recurrence_values",
    "kernel_block",
    "HALF_GAMMA0",
    "CLASSICAL_CONSTANT",
    "fourier_oracle",
]

EULER_GAMMA = float(mpmath.euler)
#: gamma_0 / 2 with gamma_0 = (gamma_E + ln2 / 2) / pi
HALF_GAMMA0 = (EULER_GAMMA + 0.5 * math.log(2.0)) / (2.0 * math.pi)
#: additive constant of the simple-random-walk potential kernel, scaled by 1/4
CLASSICAL_CONSTANT = (2.0 * EULER_GAMMA + 3.0 * math.log(2.0)) / (4.0 * math.pi)

SEAM_TOLERANCE = 1e-6


class GreensConstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class GreensTable:
    """Exact values of Phi0 on the quarter ``0 <= m, n <= exact_radius``.

    ``values[m, n] == values[n, m]`` exactly; other quadrants follow from
    sign-flip symmetry.
    """

    exact_radius: int
    values: np.ndarray = field(repr=False)
    gamma0: float
    fitted_constant: float
    crossover_radius: int
    quadrature_points: int
    max_residual_times_r: float = float("nan")
    seam_error: float = float("nan")

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.values).tobytes())
        h.update(repr((self.exact_radius, self.quadrature_points)).encode())
        return h.hexdigest()[:16]

    def metadata(self) -> dict:
        return {
            "exact_radius": self.exact_radius,
            "crossover_radius": self.crossover_radius,
            "fitted_constant": self.fitted_constant,
            "gamma0": self.gamma0,
            "quadrature_points": self.quadrature_points,
            "max_residual_times_r": self.max_residual_times_r,
            "seam_error": self.seam_error,
            "fingerprint": self.fingerprint,
        }

    def save(self, path: str | Path) -> None:
        """Binary dump (``.npy``) plus JSON metadata alongside."""
        path = Path(path)
        np.save(path.with_suffix(".npy"), self.values)
        path.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2), encoding="utf-8")

    def save_csv(self, path: str | Path) -> None:
        """``x1,x2,phi0`` rows for the first octant ``0 <= x2 <= x1``."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x1,x2,phi0\n")
            for m in range(self.exact_radius + 1):
                for n in range(m + 1):
                    fh.write(f"{m},{n},{float(self.values[m, n])!r}\n")

    @classmethod
    def load(cls, path: str | Path) -> "GreensTable":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        values = np.load(path.with_suffix(".npy"))
        values.flags.writeable = False
        return cls(
            exact_radius=int(meta["exact_radius"]),
            values=values,
            gamma0=float(meta["gamma0"]),
            fitted_constant=float(meta["fitted_constant"]),
            crossover_radius=int(meta["crossover_radius"]),
            quadrature_points=int(meta["quadrature_points"]),
            max_residual_times_r=float(meta.get("max_residual_times_r", float("nan"))),
            seam_error=float(meta.get("seam_error", float("nan"))),
        )


def _quarter_by_quadrature(radius: int, n_points: int) -> np.ndarray:
    t, w = np.polynomial.legendre.leggauss(n_points)
    theta = 0.5 * np.pi * (t + 1.0)
    w = 0.5 * np.pi * w
    half = np.sin(0.5 * theta)
    s = 2.0 * np.arcsinh(half)
    weight = w / (2.0 * half * np.sqrt(1.0 + half * half))  # w / sinh(s)

    idx = np.arange(radius + 1, dtype=float)[:, None]
    ms = idx * s[None, :]
    # split 1 - e^{-ms} cos(nt) = (1 - e^{-ms}) + e^{-ms} (1 - cos(nt)): both parts non-negative
    first = (-np.expm1(-ms)) @ weight
    osc = 2.0 * np.sin(0.5 * idx * theta[None, :]) ** 2
    second = (np.exp(-ms) * weight) @ osc.T
    raw = -(first[:, None] + second) / (2.0 * np.pi)
    # keep the m >= n orientation (stronger exponential damping) and mirror it
    lower = np.tril(raw)
    quarter = lower + np.tril(raw, -1).T
    quarter[0, 0] = 0.0
    return quarter


def recurrence_values(radius: int = 8, dps: int = 60) -> dict[tuple[int, int], float]:
    """Phi0 on ``0 <= n <= m <= radius`` from the defining equation, exactly.

    Each value is carried as ``p + q/pi`` with rational ``p, q``; the unstable
    forward recurrence is then harmless. Evaluation uses ``dps`` digits.
    """
    table: dict[tuple[int, int], tuple[Fraction, Fraction]] = {}

    def get(m, n):
        m, n = abs(m), abs(n)
        if n > m:
            m, n = n, m
        return table[(m, n)]

    top = 2 * radius + 2
    acc = Fraction(0)
    table[(0, 0)] = (Fraction(0), Fraction(0))
    for n in range(1, top + 1):
        acc += Fraction(1, 2 * n - 1)
        table[(n, n)] = (Fraction(0), -acc)
    table[(1, 0)] = (Fraction(-1, 4), Fraction(0))
    for n in range(1, top):
        a, b = get(n, n), get(n, n - 1)
        table[(n + 1, n)] = (2 * a[0] - b[0], 2 * a[1] - b[1])
    for k in range(1, top):
        for n in range(0, top - k):
            m = n + k
            if (m + 1, n) in table:
                continue
            parts = [get(m, n), get(m - 1, n), get(m, n + 1), get(m, n - 1)]
            delta = 1 if (m, n) == (0, 0) else 0
            p = 4 * parts[0][0] - parts[1][0] - parts[2][0] - parts[3][0] - delta
            q = 4 * parts[0][1] - parts[1][1] - parts[2][1] - parts[3][1]
            table[(m + 1, n)] = (p, q)
    with mpmath.workdps(dps):
        pi = mpmath.pi
        return {
            (m, n): float(mpmath.mpf(p.numerator) / p.denominator
                          + mpmath.mpf(q.numerator) / q.denominator / pi)
            for (m, n), (p, q) in table.items()
            if m <= radius
        }


def _annulus_points(values: np.ndarray, r_in: float, r_out: float):
    n = values.shape[0]
    m, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    r = np.hypot(m, k)
    sel = (r >= r_in) & (r <= r_out) & (k <= m)
    return r[sel], values[sel]


def _fit_constant(values: np.ndarray, radius: int) -> tuple[float, float]:
    r, phi = _annulus_points(values, radius / 2.0, float(radius))
    resid = -phi - np.log(r) / (2.0 * np.pi)
    const = math.fsum(resid) / resid.size
    return const, float(np.max(np.abs(phi + np.log(r) / (2.0 * np.pi) + const) * r))


def _seam_error(values: np.ndarray, r: int, const: float) -> float:
    """Max |exact - asymptotic| over stored points with ||x| - r| <= 1."""
    n = values.shape[0]
    m, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    rr = np.hypot(m, k)
    band = np.abs(rr - r) <= 1.0
    err = np.abs(values[band] + np.log(rr[band]) / (2 * np.pi) + const)
    return float(err.max())


def build_greens_table(exact_radius: int, quadrature_points: int = 2048,
                       check_radius: int = 8) -> GreensTable:
    """Compute Phi0 on ``|x|_inf <= exact_radius``; raises if the cross-check fails."""
    if exact_radius < 8:
        raise ValueError(f"exact_radius must be >= 8, got {exact_radius}")
    if quadrature_points < exact_radius + 64:
        raise ValueError(
            f"quadrature_points={quadrature_points} too small to resolve cos(n t) for n <= {exact_radius}")
    quarter = _quarter_by_quadrature(exact_radius, quadrature_points)

    exact = recurrence_values(check_radius)
    worst = max(abs(quarter[m, n] - v) for (m, n), v in exact.items())
    if worst > 1e-8:
        raise GreensConstructionError(
            f"quadrature and recurrence disagree by {worst:.3e} inside radius {check_radius}")
    # the recurrence values are correctly rounded, so they replace the quadrature near the origin
    for (m, n), v in exact.items():
        quarter[m, n] = quarter[n, m] = v

    const, max_rr = _fit_constant(quarter, exact_radius)
    # the asymptotic error shrinks like |x|^-2, so the seam goes as far out as the table allows
    crossover = exact_radius - 1
    seam = _seam_error(quarter, crossover, const)
    if seam > SEAM_TOLERANCE:
        log.warning("seam error %.2e at radius %d exceeds %g; build a larger table for "
                    "accurate far-field values", seam, crossover, SEAM_TOLERANCE)
    quarter.flags.writeable = False
    log.info("built Green's table R=%d N=%d const=%.12f crossover=%d",
             exact_radius, quadrature_points, const, crossover)
    return GreensTable(exact_radius, quarter, 2.0 * HALF_GAMMA0, const,
                       crossover, quadrature_points, max_rr, seam)


def cache_dir() -> Path:
    root = os.environ.get("KWLATTICE_CACHE")
    return Path(root) if root else Path.home() / ".cache" / "kwlattice"


#: bumped whenever the build changes stored values, so stale cache files are never reused
TABLE_FORMAT = 2


def load_or_build(exact_radius: int, quadrature_points: int = 2048,
                  directory: str | Path | None = None) -> GreensTable:
    """Disk-cached :func:`build_greens_table`, keyed by ``(exact_radius, quadrature_points)``."""
    d = Path(directory) if directory is not None else cache_dir()
    d.mkdir(parents=True, exist_ok=True)
    stem = d / f"greens_v{TABLE_FORMAT}_R{exact_radius}_N{quadrature_points}"
    with FileLock(str(stem) + ".lock"):
        if stem.with_suffix(".npy").exists() and stem.with_suffix(".json").exists():
            return GreensTable.load(stem)
        table = build_greens_table(exact_radius, quadrature_points)
        table.save(stem)
        return table


def eval_phi0(table: GreensTable, x1, x2=None):
    """Phi0 at lattice points: table value inside the crossover, asymptotic law outside.

    Accepts a single point or broadcastable integer arrays ``x1, x2``.
    """
    scalar = False
    if x2 is None:
        x1, x2 = x1
        scalar = np.isscalar(x1) or isinstance(x1, (int, np.integer))
    elif np.isscalar(x1) and np.isscalar(x2):
        scalar = True
    a = np.abs(np.asarray(x1, dtype=np.int64))
    b = np.abs(np.asarray(x2, dtype=np.int64))
    a, b = np.broadcast_arrays(a, b)
    inside = np.maximum(a, b) <= table.crossover_radius
    out = np.empty(a.shape, dtype=float)
    out[inside] = table.values[a[inside], b[inside]]
    far = ~inside
    if far.any():
        r = np.hypot(a[far], b[far])
        out[far] = -np.log(r) / (2.0 * np.pi) - table.fitted_constant
    return float(out) if scalar else out


def kernel_block(table: GreensTable, half: int) -> np.ndarray:
    """Phi0 on ``[-half, half]^2`` as a dense array indexed ``[x1 + half, x2 + half]``."""
    if half > table.crossover_radius:
        warnings.warn(f"kernel half-width {half} exceeds the exact crossover "
                      f"{table.crossover_radius}; asymptotic values used beyond it",
                      RuntimeWarning, stacklevel=2)
    r = np.arange(-half, half + 1)
    return eval_phi0(table, r[:, None], r[None, :])


def asymptotic_fit(table: GreensTable) -> tuple[float, float]:
    """Additive constant of ``-Phi0 - ln|x|/2pi`` on ``R/2 <= |x| <= R`` and the sup of residual*|x|."""
    if table.exact_radius < 64:
        raise ValueError("asymptotic_fit needs exact_radius >= 64")
    return _fit_constant(table.values, table.exact_radius)


def estimate_c1(table: GreensTable) -> float:
    """Smallest c1 >= 1 for which both two-sided log bounds hold on every stored x != 0."""
    v = table.values
    n = v.shape[0]
    m, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    sel = (k <= m) & ((m > 0) | (k > 0))
    phi = v[sel]
    lg = np.log1p(np.hypot(m[sel], k[sel]))
    additive = np.max(np.abs(phi + lg / (2.0 * np.pi)))
    lower = np.max(-phi / lg)           # -c1 ln(1+|x|) <= Phi0
    upper = np.max(lg / (-phi))         # Phi0 <= -(1/c1) ln(1+|x|)
    return float(max(1.0, additive, lower, upper))


def fourier_oracle(m: int, n: int, epsabs: float = 1e-11) -> float:
    """Phi0(m, n) by adaptive 2-D quadrature of the Fourier integral.

    Independent of the table: it integrates the full two-dimensional
    integrand over ``[0, pi]^2``, where ``1 - cos(x.t)`` reduces to
    ``1 - cos(m t1) cos(n t2)`` by symmetry. Slow; meant for spot checks.
    """
    def integrand(t2, t1):
        den = 4.0 - 2.0 * math.cos(t1) - 2.0 * math.cos(t2)
        if den <= 0.0:
            return 0.0
        return (1.0 - math.cos(m * t1) * math.cos(n * t2)) / den

    val, _ = integrate.dblquad(integrand, 0.0, math.pi, 0.0, math.pi, epsabs=epsabs, epsrel=1e-12)
    return -val / (math.pi * math.pi)


def phi0_point(table: GreensTable, x: LatticePoint) -> float:
    return eval_phi0(table, int(x[0]), int(x[1]))
