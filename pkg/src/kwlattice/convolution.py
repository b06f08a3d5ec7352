"""Convolution with the lattice Green's function and decay diagnostics.

``(Phi0 * f)(x) = sum_y Phi0(y - x) f(y)``. Because Phi0 is even the
orientation does not matter. Two evaluation paths are provided:

* direct summation over the support of ``f`` (a shifted kernel block per
  support point), used when the support is small;
* zero-padded FFT linear convolution, used for dense ``f``. The padding is
  large enough that no wrap-around occurs, so the result equals the direct
  sum up to floating-point rounding; it is not a periodic approximation.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .greens import GreensTable, eval_phi0
from .lattice import GridFunction, LatticePoint, TruncatedDomain, lattice_sum, weighted_norm

__all__ = [
    "Convolver",
    "convolve",
    "DecayReport",
    "decay_envelope",
    "mean_zero_decay_check",
    "nonzero_mean_decay_check",
    "b_m_tau",
    "random_mean_zero",
    "decay_suite",
]

DIRECT_SUPPORT_LIMIT = 256


class Convolver:
    """Reusable ``Phi0 * f`` for grid functions on one domain.

    The kernel block on ``[-2h, 2h]^2`` and its FFT are computed once, so
    fixed-point loops pay only two real FFTs per application.

    Parameters
    ----------
    table : GreensTable
        Should satisfy ``table.crossover_radius >= 2 * (domain.radius + 1)``
        for every kernel value to be exact; otherwise the asymptotic branch
        is used for long differences and ``exact`` is False.
    domain : TruncatedDomain
    """

    def __init__(self, table: GreensTable, domain: TruncatedDomain):
        self.table = table
        self.domain = domain
        h = domain.half_width
        self.exact = table.crossover_radius >= 2 * h
        if not self.exact:
            warnings.warn(
                f"Green's table crossover {table.crossover_radius} < {2 * h}; long-range kernel "
                "values use the asymptotic formula", RuntimeWarning, stacklevel=2)
        r = np.arange(-2 * h, 2 * h + 1)
        self.kernel = eval_phi0(table, r[:, None], r[None, :])
        n = 2 * h + 1
        self._fft_shape = tuple(sfft.next_fast_len(n + self.kernel.shape[0] - 1, real=True) for _ in range(2))
        self._kernel_hat = sfft.rfft2(self.kernel, self._fft_shape)

    def _direct(self, f: np.ndarray, support: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
        h = self.domain.half_width
        n = 2 * h + 1
        out = np.zeros((n, n))
        for i, j in zip(*support):
            # kernel index of (x - y) for x in the box: (x - y) + 2h with y = (i, j) - h
            out += f[i, j] * self.kernel[2 * h - i: 2 * h - i + n, 2 * h - j: 2 * h - j + n]
        return out

    def _fft(self, f: np.ndarray) -> np.ndarray:
        h = self.domain.half_width
        n = 2 * h + 1
        full = sfft.irfft2(sfft.rfft2(f, self._fft_shape) * self._kernel_hat, self._fft_shape)
        return full[2 * h: 2 * h + n, 2 * h: 2 * h + n]

    def apply_array(self, f: np.ndarray, method: str = "auto") -> np.ndarray:
        """Convolve a box array (NaN treated as zero); returns values on the whole box."""
        f = np.nan_to_num(np.asarray(f, dtype=float), nan=0.0)
        support = np.nonzero(f)
        if method == "auto":
            method = "direct" if support[0].size <= DIRECT_SUPPORT_LIMIT else "fft"
        if method == "direct":
            return self._direct(f, support)
        if method == "fft":
            return self._fft(f)
        raise ValueError(f"unknown method {method!r}")

    def __call__(self, f: GridFunction, method: str = "auto") -> GridFunction:
        if f.domain != self.domain:
            raise ValueError("grid function lives on a different domain")
        vals = self.apply_array(np.where(f.domain.interior, f.values, 0.0), method)
        return GridFunction(self.domain, np.where(self.domain.closure, vals, np.nan))


def convolve(table: GreensTable, f: GridFunction, method: str = "auto") -> GridFunction:
    """``g(x) = sum_y Phi0(y - x) f(y)`` for every stored ``x``, summing over interior ``y``."""
    return Convolver(table, f.domain)(f, method)


def decay_envelope(r, m: float):
    """``(e + r)^((2-m)/(m+1)) * ln(e + r)^(1/(m+1))``."""
    r = np.asarray(r, dtype=float)
    return (math.e + r) ** ((2.0 - m) / (m + 1.0)) * np.log(math.e + r) ** (1.0 / (m + 1.0))


@dataclass
class DecayReport:
    """Measured form of a convolution decay estimate.

    ``shell_radii`` / ``shell_ratio`` give the largest ratio on each integer
    shell ``k <= |x| < k+1``; ``trend_slope`` is the least-squares slope of
    ``ln shell_ratio`` against ``ln r`` over the trend window.
    """

    m: float
    observed_ratio_sup: float
    bound_constant: float
    witness_point: LatticePoint
    norm_m: float = float("nan")
    trend_slope: float = float("nan")
    trend_window: tuple[float, float] = (50.0, 200.0)
    shell_radii: np.ndarray = field(default=None, repr=False)
    shell_ratio: np.ndarray = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {"m": self.m, "observed_ratio_sup": self.observed_ratio_sup,
                "bound_constant": self.bound_constant, "witness": list(self.witness_point)}

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def _report(numerator: np.ndarray, domain: TruncatedDomain, m: float, norm_m: float,
            window: tuple[float, float]) -> DecayReport:
    mask = domain.closure
    r = domain.radii
    ratio = np.where(mask, np.abs(numerator) / decay_envelope(r, m), np.nan)
    flat = np.where(mask, ratio, -np.inf)
    k = int(np.argmax(flat))
    i, j = np.unravel_index(k, ratio.shape)
    h = domain.half_width
    sup = float(flat[i, j])

    shells = np.floor(r[mask]).astype(int)
    vals = ratio[mask]
    smax = np.full(shells.max() + 1, -np.inf)
    np.maximum.at(smax, shells, vals)
    radii = np.arange(smax.size, dtype=float)
    sel = (radii >= window[0]) & (radii <= window[1]) & (smax > 0)
    slope = float("nan")
    if sel.sum() >= 3:
        slope = float(np.polyfit(np.log(radii[sel]), np.log(smax[sel]), 1)[0])
    bound = sup * (m - 2.0) ** 4 / norm_m if norm_m > 0 else 0.0
    return DecayReport(m, sup, bound, LatticePoint(int(i - h), int(j - h)), norm_m, slope,
                       window, radii, smax)


def mean_zero_decay_check(table: GreensTable, f: GridFunction, m: float,
                          window: tuple[float, float] = (50.0, 200.0)) -> DecayReport:
    """Ratio of ``|Phi0 * f|`` to the envelope ``decay_envelope(|x|, m)`` on ``f.domain``.

    Raises
    ------
    ValueError
        If ``m <= 2`` or ``sum f`` differs from zero by more than 1e-12.
    """
    if not m > 2:
        raise ValueError(f"m must exceed 2, got {m}")
    total = lattice_sum(np.where(f.domain.interior, f.values, 0.0))
    if abs(total) > 1e-12:
        raise ValueError(f"mean-zero check needs sum f = 0, got {total:.3e}")
    g = convolve(table, f)
    return _report(g.values, f.domain, m, weighted_norm(f, m), window)


def nonzero_mean_decay_check(table: GreensTable, f: GridFunction, m: float,
                             window: tuple[float, float] = (50.0, 200.0)) -> DecayReport:
    """Envelope ratio of ``|Phi0 * f + b ln(1+|x|) + 2 pi b C|`` with ``b = sum f / 2 pi``.

    ``C`` is the measured additive constant of the table.
    """
    if not m > 2:
        raise ValueError(f"m must exceed 2, got {m}")
    beta_f = lattice_sum(np.where(f.domain.interior, f.values, 0.0)) / (2.0 * math.pi)
    if not beta_f > 0:
        raise ValueError(f"nonzero-mean check needs sum f > 0, got 2 pi * {beta_f:.3e}")
    g = convolve(table, f)
    r = f.domain.radii
    resid = g.values + beta_f * np.log1p(r) + 2.0 * math.pi * beta_f * table.fitted_constant
    return _report(resid, f.domain, m, weighted_norm(f, m), window)


def b_m_tau(c0: float, m: float, tau: float) -> float:
    """``c0^m / (m-2)^4 * (1 / (m - 2 - tau (m+1)))^(1/(m+1))`` for ``0 <= tau < (m-2)/(m+1)``."""
    if not m > 2:
        raise ValueError(f"m must exceed 2, got {m}")
    gap = m - 2.0 - tau * (m + 1.0)
    if not gap > 0:
        raise ValueError(f"tau must be below (m-2)/(m+1) = {(m - 2) / (m + 1):.6g}")
    return c0 ** m / (m - 2.0) ** 4 * gap ** (-1.0 / (m + 1.0))


def random_mean_zero(domain: TruncatedDomain, m: float, rng: np.random.Generator) -> GridFunction:
    """Random ``f`` with ``|f(x)| <= 2 (1+|x|)^-m`` on the disc and ``sum f = 0``.

    Uniform noise times the weight; the origin absorbs the mean.
    """
    vals = rng.uniform(-1.0, 1.0, domain.shape) * (1.0 + domain.radii) ** (-float(m))
    vals = np.where(domain.interior, vals, 0.0)
    origin = domain.index((0, 0))
    vals[origin] = 0.0
    vals[origin] = -lattice_sum(vals)
    return GridFunction(domain, np.where(domain.closure, vals, np.nan))


def decay_suite(table: GreensTable, ms=(3.0, 4.0, 6.0), n_samples: int = 20, radius: int = 256,
                seed: int = 0, window: tuple[float, float] = (50.0, 200.0)) -> dict:
    """Run :func:`mean_zero_decay_check` on ``n_samples`` random inputs per ``m``.

    An input passes when the envelope ratio has a non-positive trend slope on
    ``window`` and its largest shell value there does not exceed the largest
    shell value inside ``window[0]``.
    """
    rng = np.random.default_rng(seed)
    dom = TruncatedDomain(int(radius))
    conv = Convolver(table, dom)
    rows = []
    for m in ms:
        for k in range(n_samples):
            f = random_mean_zero(dom, m, rng)
            g = conv(f)
            rep = _report(g.values, dom, float(m), weighted_norm(f, m), window)
            inner = rep.shell_ratio[: int(window[0])]
            outer = rep.shell_ratio[int(window[0]): int(window[1]) + 1]
            ok = bool(rep.trend_slope <= 0.0 and np.max(outer) <= np.max(inner))
            rows.append({"m": float(m), "sample": k, "observed_ratio_sup": rep.observed_ratio_sup,
                         "bound_constant": rep.bound_constant, "trend_slope": rep.trend_slope,
                         "window_max": float(np.max(outer)), "inner_max": float(np.max(inner)), "passed": ok})
    return {"radius": int(radius), "window": list(window), "samples": rows,
            "max_trend_slope": max(r["trend_slope"] for r in rows),
            "passed": all(r["passed"] for r in rows)}
