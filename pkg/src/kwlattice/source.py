"""Source case ``-Delta u = exp(kappa u) + beta delta_0`` on Z^2.

The solution is sought as ``u = v + c_v / kappa + alpha Phi0`` where ``v`` is a
fixed point of ``T0(v) = Phi0 * (K exp(kappa v + c_v) - (alpha - beta) delta_0)``
and ``K = exp(alpha kappa Phi0)``. The normalisation ``c_v`` makes the total
mass of ``K exp(kappa v + c_v)`` equal ``alpha - beta``, which is the energy
identity ``sum exp(kappa u) = alpha - beta``.

Examples
--------
>>> from kwlattice.greens import load_or_build
>>> from kwlattice.source import SourceProblem, solve_source, required_table_radius
>>> p = SourceProblem.from_sigma(kappa=0.5, sigma=4.0, beta=0.0, domain_radius=64)
>>> table = load_or_build(required_table_radius(64))           # doctest: +SKIP
>>> report = solve_source(p, table)                             # doctest: +SKIP
>>> round(report.fitted_slope, 2)                               # doctest: +SKIP
-8.0
"""
from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .analysis import Constants, fit_constant_with_decay, fit_log_asymptote, log_threshold_h0
from .fixedpoint import FixedPointMap, IterationOptions, NonConvergenceError, iterate
from .greens import GreensTable
from .lattice import GridFunction, TailModel, TruncatedDomain, lattice_sum

__all__ = [
    "SourceProblem",
    "SolveReport",
    "IterationOptions",
    "NonConvergenceError",
    "source_weight",
    "normalization_constant",
    "t0_map",
    "solve_source",
    "threshold_h0",
    "required_table_radius",
    "build_report",
]


def required_table_radius(domain_radius: int) -> int:
    """Table radius making every kernel difference on the solve box exact."""
    return 2 * (int(domain_radius) + 1) + 1


@dataclass(frozen=True)
class SourceProblem:
    kappa: float
    alpha: float
    beta: float
    domain_radius: int = 256

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.sigma > 2:
            raise ValueError(f"sigma = alpha kappa / 2 pi = {self.sigma:.6g} must exceed 2")
        if not 0 <= self.beta < self.alpha:
            raise ValueError(f"need 0 <= beta < alpha, got beta={self.beta}, alpha={self.alpha}")

    @property
    def sigma(self) -> float:
        return self.alpha * self.kappa / (2.0 * math.pi)

    @classmethod
    def from_sigma(cls, kappa: float, sigma: float, beta: float, domain_radius: int = 256):
        return cls(kappa, 2.0 * math.pi * sigma / kappa, beta, domain_radius)


@dataclass
class SolveReport:
    """Converged solution and its diagnostics.

    ``identity_residual`` is ``|total_energy - target_energy|`` where the
    target is ``alpha - beta`` (source) or ``beta - alpha`` (absorption).
    """

    solution: GridFunction
    iterations: int
    final_update_norm: float
    total_energy: float
    fitted_slope: float
    fitted_constant_d: float
    identity_residual: float
    kappa: float = float("nan")
    alpha: float = float("nan")
    beta: float = float("nan")
    target_energy: float = float("nan")
    equation_residual: float = float("nan")
    energy_tail: float = float("nan")
    tail_bound: float = float("nan")
    normalization: float = float("nan")
    history: list[float] = field(default_factory=list, repr=False)
    extras: dict = field(default_factory=dict)

    @property
    def sigma(self) -> float:
        return self.alpha * self.kappa / (2.0 * math.pi)

    @property
    def relative_identity_residual(self) -> float:
        return self.identity_residual / abs(self.target_energy)

    def to_json(self) -> dict:
        out = {
            "kappa": self.kappa, "alpha": self.alpha, "beta": self.beta, "sigma": self.sigma,
            "domain": self.solution.domain.to_json(),
            "iterations": self.iterations,
            "final_update_norm": self.final_update_norm,
            "total_energy": self.total_energy,
            "target_energy": self.target_energy,
            "identity_residual": self.identity_residual,
            "relative_identity_residual": self.relative_identity_residual,
            "equation_residual": self.equation_residual,
            "energy_tail": self.energy_tail,
            "tail_bound": self.tail_bound,
            "fitted_slope": self.fitted_slope,
            "fitted_constant_d": self.fitted_constant_d,
            "normalization_c": self.normalization,
            "tail": self.solution.tail.to_json() if self.solution.tail else None,
        }
        out.update(self.extras)
        return out


def source_weight(table: GreensTable, alpha: float, kappa: float, radius: int = 256) -> GridFunction:
    """``K(x) = exp(alpha kappa Phi0(x))`` on the disc, with tail ``exp(-alpha kappa C) r^-sigma``."""
    sigma = alpha * kappa / (2.0 * math.pi)
    if not sigma > 2:
        raise ValueError(f"sigma = {sigma:.6g} must exceed 2")
    from .greens import eval_phi0

    dom = TruncatedDomain(int(radius))
    x1, x2 = dom.coords
    vals = np.exp(alpha * kappa * eval_phi0(table, x1, x2))
    tail = TailModel(sigma, math.exp(-alpha * kappa * table.fitted_constant), "power")
    return GridFunction(dom, np.where(dom.closure, vals, np.nan), tail)


def normalization_constant(K: GridFunction, g_mass: float, v: GridFunction, kappa: float) -> float:
    """``c_v = ln(g_mass / sum_{Z^2} K exp(kappa v))`` with an analytic tail beyond the disc.

    The tail integral starts at the radius whose disc area equals the
    interior point count. A ``RuntimeWarning`` flags tails above 1% of the head.
    """
    if not g_mass > 0:
        raise ValueError(f"g_mass must be positive, got {g_mass}")
    dom = K.domain
    if v.domain != dom:
        raise ValueError("K and v live on different domains")
    inner = dom.interior
    head = lattice_sum(np.where(inner, K.values * np.exp(kappa * v.values), np.nan))
    tail = 0.0
    if K.tail is not None:
        if v.tail is None:
            raise ValueError("v needs a tail model when K has one")
        if K.tail.kind != "power":
            raise ValueError("K needs a power-law tail model")
        sigma, a_k = K.tail.slope_a, K.tail.constant_d
        r0 = dom.effective_radius
        # integrate in t = ln r up to where r^(2 - sigma) has dropped by e^-80, then freeze v
        t0 = math.log(r0)
        t1 = min(t0 + 80.0 / (sigma - 2.0), 700.0)

        def integrand(t):
            return 2.0 * math.pi * a_k * math.exp((2.0 - sigma) * t + kappa * float(v.tail(math.exp(t))))

        tail, _ = integrate.quad(integrand, t0, t1, limit=200, epsrel=1e-12)
        tail += (2.0 * math.pi * a_k * math.exp((2.0 - sigma) * t1 + kappa * float(v.tail(math.exp(t1))))
                 / (sigma - 2.0))
        if tail > 0.01 * head:
            warnings.warn(f"tail correction {tail:.3e} exceeds 1% of the head sum {head:.3e}",
                          RuntimeWarning, stacklevel=2)
    total = head + tail
    if not (total > 0 and math.isfinite(total)):
        raise ValueError(f"sum K exp(kappa v) must be positive and finite, got {total}")
    return math.log(g_mass / total)


_MAP_CACHE: dict = {}
_MAP_LOCK = threading.Lock()


def _fixed_point_map(eps: int, kappa: float, alpha: float, beta: float, radius: int,
                     table: GreensTable) -> FixedPointMap:
    """Map for these parameters; the convolver of the last (table, radius) pair is reused."""
    key = (table.fingerprint, int(radius))
    with _MAP_LOCK:
        conv = _MAP_CACHE.get(key)
        fmap = FixedPointMap(eps, kappa, alpha, beta, radius, table, conv)
        if conv is None:
            _MAP_CACHE.clear()
            _MAP_CACHE[key] = fmap.conv
    return fmap


def t0_map(table: GreensTable, kappa: float, alpha: float, beta: float, v: GridFunction) -> GridFunction:
    """One application of the source map to ``v`` (tail included)."""
    return _fixed_point_map(1, kappa, alpha, beta, v.domain.radius, table)(v)


def build_report(fmap: FixedPointMap, result, target: float) -> SolveReport:
    info = fmap.assemble(result.state)
    u = info["u"]
    fit = fit_log_asymptote(u)
    a = fmap.alpha / (2.0 * math.pi)
    d_fit, w_fit = fit_constant_with_decay(u, a, fmap.sigma - 2.0)
    energy = info["energy"]
    return SolveReport(
        solution=u,
        iterations=result.iterations,
        final_update_norm=result.final_update_norm,
        total_energy=energy,
        fitted_slope=fit.slope,
        fitted_constant_d=d_fit,
        identity_residual=abs(energy - target),
        kappa=fmap.kappa, alpha=fmap.alpha, beta=fmap.beta,
        target_energy=target,
        equation_residual=info["equation_residual"],
        energy_tail=info["energy_tail"],
        tail_bound=info["tail_bound"],
        normalization=info["c"],
        history=result.history,
        extras={"free_fit": fit.to_json(), "tail_constant_d": u.tail.constant_d,
                "fitted_decay_amplitude": w_fit, "damping": result.damping},
    )


def solve_source(p: SourceProblem, table: GreensTable, opts: IterationOptions | None = None,
                 start: GridFunction | None = None) -> SolveReport:
    """Solve the source equation on the disc of radius ``p.domain_radius``.

    Raises
    ------
    NonConvergenceError
        If the damped iteration diverges.
    """
    opts = opts or IterationOptions()
    fmap = _fixed_point_map(1, p.kappa, p.alpha, p.beta, p.domain_radius, table)
    st = fmap.state_from_grid(start) if start is not None else None
    res = iterate(fmap, opts, st)
    return build_report(fmap, res, p.alpha - p.beta)


def threshold_h0(sigma: float, constants: Constants | dict) -> float:
    """``C2^s (s-2) exp(2 pi c1 s + 24 pi c0^s s (s-2)^(-4-1/(s+1)))``; ``inf`` on overflow."""
    if isinstance(constants, dict):
        constants = Constants(**constants)
    if not sigma > 2:
        raise ValueError(f"h0 needs sigma > 2, got {sigma}")
    with np.errstate(over="ignore"):
        return float(np.exp(log_threshold_h0(sigma, constants)))
