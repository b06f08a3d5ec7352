"""Asymptotic fits, measured constants, and the admissible-region scan."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .convolution import mean_zero_decay_check
from .greens import GreensTable, estimate_c1
from .lattice import GridFunction, TruncatedDomain

__all__ = [
    "FitResult",
    "fit_log_asymptote",
    "fit_double_log",
    "fit_liouville_shift",
    "fit_constant_with_decay",
    "threshold_h0",
    "log_threshold_h0",
    "Constants",
    "ScanResult",
    "admissible_region_scan",
    "measure_c0",
    "measure_C2",
    "measure_constants",
]


@dataclass
class FitResult:
    slope: float
    intercept: float
    residual_sup: float
    annulus: tuple[float, float]
    model: str = "log"
    n_points: int = 0
    oscillation: float = float("nan")

    def to_json(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "residual_sup": self.residual_sup,
                "annulus": list(self.annulus), "model": self.model, "n_points": self.n_points,
                "oscillation": self.oscillation}


def _annulus(u: GridFunction, r_in, r_out):
    d = u.domain
    if r_in is None:
        r_in = d.radius / 2.0
    if r_out is None:
        r_out = float(d.radius)
    if not r_in < r_out <= d.radius + 1:
        raise ValueError(f"need r_in < r_out <= domain radius, got ({r_in}, {r_out})")
    r = d.radii
    sel = d.closure & (r >= r_in) & (r <= r_out) & (r > 0)
    if sel.sum() < 100:
        raise ValueError(f"annulus ({r_in}, {r_out}) holds {int(sel.sum())} points; need >= 100")
    return r[sel], u.values[sel], (float(r_in), float(r_out))


def fit_log_asymptote(u: GridFunction, r_in: float | None = None, r_out: float | None = None) -> FitResult:
    """Least-squares fit ``u(x) ~ slope * ln|x| + intercept`` on ``r_in <= |x| <= r_out``.

    Defaults to the annulus ``(R/2, R)``.
    """
    r, y, ann = _annulus(u, r_in, r_out)
    A = np.column_stack([np.log(r), np.ones_like(r)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return FitResult(float(coef[0]), float(coef[1]), float(np.max(np.abs(res))), ann, "log", r.size)


def fit_constant_with_decay(u: GridFunction, slope: float, decay: float,
                            r_in: float | None = None, r_out: float | None = None) -> tuple[float, float]:
    """Fit ``u + slope_pinned * ln r = d + w r^-decay``; returns ``(d, w)``.

    ``slope`` is the pinned coefficient of ``-ln r``.
    """
    r, y, _ = _annulus(u, r_in, r_out)
    A = np.column_stack([np.ones_like(r), r ** (-decay)])
    coef, *_ = np.linalg.lstsq(A, y + slope * np.log(r), rcond=None)
    return float(coef[0]), float(coef[1])


def fit_double_log(u: GridFunction, kappa: float, r_in: float | None = None,
                   r_out: float | None = None) -> FitResult:
    """Constant of ``u + (2/kappa)(ln|x| + ln ln|x|)`` with both slopes pinned.

    ``oscillation`` is the max minus min of that expression on the annulus.
    """
    r, y, ann = _annulus(u, r_in, r_out)
    if ann[0] <= math.e:
        raise ValueError("double-log fit needs r_in > e")
    z = y + (2.0 / kappa) * (np.log(r) + np.log(np.log(r)))
    d = float(np.mean(z))
    return FitResult(-2.0 / kappa, d, float(np.max(np.abs(z - d))), ann, "log_double_log", r.size,
                     float(z.max() - z.min()))


def fit_liouville_shift(u: GridFunction, kappa: float, r_in: float | None = None,
                        r_out: float | None = None) -> FitResult:
    """Fit the shift ``t0`` of ``exp(kappa u) = (2/kappa) / (r^2 (ln r + t0)^2)``.

    This is the zero-energy far field of ``-Delta u + exp(kappa u) = 0``. The
    fitted ``t0`` is stored in ``intercept``; ``oscillation`` is the spread of
    the pointwise shifts on the annulus.
    """
    r, y, ann = _annulus(u, r_in, r_out)
    if ann[0] <= 1.0:
        raise ValueError("Liouville fit needs r_in > 1")
    t = np.log(r)
    z = kappa * y + 2.0 * t
    # pointwise shift solving the model exactly; the least-squares fit refines their mean
    pointwise = np.sqrt(2.0 / kappa) * np.exp(-0.5 * z) - t
    res = optimize.least_squares(lambda p: z - (math.log(2.0 / kappa) - 2.0 * np.log(t + p[0])),
                                 [float(np.mean(pointwise))], bounds=(-float(t.min()) + 1e-9, np.inf))
    t0 = float(res.x[0])
    return FitResult(-2.0 / kappa, t0, float(np.max(np.abs(res.fun))), ann, "liouville", r.size,
                     float(pointwise.max() - pointwise.min()))


# -- threshold h0 --------------------------------------------------------------

@dataclass
class Constants:
    """Constants entering the source-case threshold."""

    c0: float = 1.0
    c1: float = 1.0
    C2: float = 1.0

    def to_json(self) -> dict:
        return {"c0": self.c0, "c1": self.c1, "C2": self.C2}


def log_threshold_h0(sigma, constants: Constants):
    """``ln h0(sigma)``; h0 overflows double precision for realistic constants."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 2):
        raise ValueError("h0 needs sigma > 2")
    c = constants
    return (sigma * math.log(c.C2) + np.log(sigma - 2.0) + 2.0 * math.pi * c.c1 * sigma
            + 24.0 * math.pi * sigma * np.exp(sigma * math.log(c.c0)
                                               + (-4.0 - 1.0 / (sigma + 1.0)) * np.log(sigma - 2.0)))


def threshold_h0(sigma: float, constants: Constants) -> float:
    """``C2^s (s-2) exp(2 pi c1 s + 24 pi c0^s s (s-2)^(-4-1/(s+1)))``; may be ``inf``."""
    with np.errstate(over="ignore"):
        return float(np.exp(log_threshold_h0(sigma, constants)))


@dataclass
class ScanResult:
    sigma: np.ndarray
    log_h0: np.ndarray
    a0: float
    kappa_star: float
    log_kappa_star: float
    kappa_bar: dict[float, float]
    log_kappa_bar: dict[float, float]
    ordering_flags: dict[float, str]
    interior_minimum: bool
    admissible: list[tuple[float, float, bool]] = field(default_factory=list)

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sigma", "h0", "kappa_star_flag"])
        k = int(np.argmin(self.log_h0))
        for i, (s, lh) in enumerate(zip(self.sigma, self.log_h0)):
            w.writerow([repr(float(s)), repr(float(np.exp(lh))) if lh < 700 else "inf", int(i == k)])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "a0": self.a0,
            "kappa_star": self.kappa_star,
            "log_kappa_star": self.log_kappa_star,
            "kappa_bar": {str(k): v for k, v in self.kappa_bar.items()},
            "log_kappa_bar": {str(k): v for k, v in self.log_kappa_bar.items()},
            "ordering_flags": {str(k): v for k, v in self.ordering_flags.items()},
            "interior_minimum": self.interior_minimum,
            "log_h0_ends": [float(self.log_h0[0]), float(self.log_h0[-1])],
            "log_h0_min": float(self.log_h0.min()),
        }


def admissible_region_scan(constants: Constants, sigma_grid=None, kappa_grid=None,
                           epsilons=(0.1, 0.5, 0.9)) -> ScanResult:
    """Tabulate h0, locate ``a0 = argmin h0`` and ``kappa* = 1/min h0``, and ``kappa_bar(eps)``.

    ``kappa_bar(eps) = 1 / max h0`` over ``[2+eps, 2+1/eps]``. Since that
    window contains ``a0`` whenever the minimum is interior to it,
    ``kappa_bar <= kappa*`` is expected; each comparison is recorded in
    ``ordering_flags`` rather than asserted.
    """
    if sigma_grid is None:
        sigma_grid = np.linspace(2.0, 20.0, 3601)[1:]
    s = np.asarray(sigma_grid, dtype=float)
    if np.any(s <= 2):
        raise ValueError("sigma grid must lie in (2, inf)")
    lh = log_threshold_h0(s, constants)
    k = int(np.argmin(lh))
    # refine the minimum with a bounded scalar search around the grid argmin
    lo, hi = s[max(k - 1, 0)], s[min(k + 1, s.size - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(lambda t: float(log_threshold_h0(t, constants)), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-10})
        a0, lmin = float(res.x), float(res.fun)
    else:
        a0, lmin = float(s[k]), float(lh[k])
    interior = 0 < k < s.size - 1 and lh[0] - lmin >= math.log(10) and lh[-1] - lmin >= math.log(10)
    kbar, lkbar, flags = {}, {}, {}
    for eps in epsilons:
        t = np.linspace(2.0 + eps, 2.0 + 1.0 / eps, 2001)
        lmax = float(np.max(log_threshold_h0(t, constants)))
        lkbar[eps] = -lmax
        kbar[eps] = math.exp(-lmax) if lmax < 700 else 0.0
        flags[eps] = "kappa_bar>kappa_star" if -lmax > -lmin else "kappa_bar<=kappa_star"
    adm = []
    if kappa_grid is not None:
        for kap in kappa_grid:
            for si, li in zip(s, lh):
                adm.append((float(si), float(kap), bool(math.log(kap) + li <= 0)))
    return ScanResult(s, lh, a0, math.exp(-lmin) if lmin < 700 else 0.0, -lmin, kbar, lkbar,
                      flags, bool(interior), adm)


# -- measured constants ---------------------------------------------------------

def measure_c0(table: GreensTable, ms=(3.0, 4.0, 6.0), n_samples: int = 4, radius: int = 60,
               support: int = 5, seed: int = 0) -> float:
    """Largest ``bound_constant^(1/m)`` over random mean-zero inputs supported in ``Q_support``."""
    rng = np.random.default_rng(seed)
    dom = TruncatedDomain(radius)
    x1, x2 = dom.coords
    box = (np.abs(x1) <= support) & (np.abs(x2) <= support)
    best = 1.0
    for m in ms:
        for _ in range(n_samples):
            vals = np.where(box, rng.uniform(-1.0, 1.0, dom.shape), 0.0)
            vals[dom.index((0, 0))] -= math.fsum(vals[box])
            f = GridFunction(dom, np.where(dom.closure, vals, np.nan))
            rep = mean_zero_decay_check(table, f, m)
            best = max(best, rep.bound_constant ** (1.0 / m))
    return float(best)


def measure_C2(table: GreensTable, sigmas=None) -> float:
    """Smallest ``C2 >= 1`` with ``C2^-s/(s-2) <= sum K_s <= C2^s/(s-2)`` on a sigma grid.

    ``K_s = exp(2 pi s Phi0)``; the sum uses the stored table plus the power-law tail.
    """
    if sigmas is None:
        sigmas = np.concatenate([np.linspace(2.05, 3.0, 20), np.linspace(3.0, 20.0, 35)])
    v = table.values
    n = v.shape[0]
    m, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mult = np.where(m == 0, 1, 2) * np.where(k == 0, 1, 2)  # quadrant multiplicity
    rr = np.hypot(m, k)
    R = table.crossover_radius
    inside = rr <= R
    n_in = int((mult * inside).sum())
    r_eff = math.sqrt(n_in / math.pi)
    C = table.fitted_constant
    best = 1.0
    for s in sigmas:
        head = math.fsum((mult * np.exp(2 * math.pi * s * v))[inside])
        tail = math.exp(-2 * math.pi * s * C) * 2 * math.pi * r_eff ** (2 - s) / (s - 2)
        q = (head + tail) * (s - 2)
        best = max(best, q ** (1.0 / s), q ** (-1.0 / s))
    return float(best)


def measure_constants(table: GreensTable, seed: int = 0) -> Constants:
    return Constants(c0=measure_c0(table, seed=seed), c1=estimate_c1(table), C2=measure_C2(table))
