"""Normalised fixed-point maps shared by the source and absorption solvers.

With ``u = v + c_v / kappa + alpha Phi0`` and ``K = exp(alpha kappa Phi0)`` both
equations reduce to a fixed point of

    T(v) = eps * Phi0 * (K exp(kappa v + c_v) - g delta_0),
    c_v  = ln(g / sum_{Z^2} K exp(kappa v)),

with ``eps = +1, g = alpha - beta`` (source) and ``eps = -1, g = beta - alpha``
(absorption). Sums over Z^2 are split into the stored disc ``|x| <= R`` and an
analytic tail. Beyond the disc ``K`` follows ``exp(-alpha kappa C) r^-sigma``
and ``v`` follows ``v_inf + W r^(2-sigma)``, so every tail quantity has a
closed form or a one-dimensional quadrature.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .convolution import Convolver
from .greens import GreensTable
from .lattice import GridFunction, TailModel, TruncatedDomain, laplacian_grid, tail_bound

log = logging.getLogger(__name__)

__all__ = [
    "IterationOptions",
    "NonConvergenceError",
    "FixedPointMap",
    "IterationResult",
    "iterate",
]


class NonConvergenceError(RuntimeError):
    """Raised when the iteration diverges or hits ``max_iter``.

    ``history`` holds the sequence of update norms.
    """

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = list(history)


@dataclass
class IterationOptions:
    """Controls for the damped fixed-point loop.

    Parameters
    ----------
    tol : float
        Stop when the weighted sup norm of the update falls below ``tol``.
    max_iter : int
    damping : float
        Initial relaxation weight ``omega`` in ``v <- (1-omega) v + omega T(v)``.
    patience : int
        Consecutive growing updates tolerated (each one halves ``omega``).
    anderson : int
        Anderson mixing depth; 0 gives plain damped Picard.
    min_damping : float
    stall : int
        Anderson steps without a new smallest update before falling back to
        plain damped Picard from the initial iterate.
    fallback_damping : float
        Relaxation weight used after the fallback.
    """

    tol: float = 1e-10
    max_iter: int = 2000
    damping: float = 0.5
    patience: int = 8
    anderson: int = 3
    min_damping: float = 1.0 / 64.0
    stall: int = 40
    fallback_damping: float = 0.05

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class State:
    """Stored values of ``v`` on the closed disc and its tail parameters."""

    values: np.ndarray
    v_inf: float = 0.0
    W: float = 0.0

    def flat(self, mask: np.ndarray) -> np.ndarray:
        return np.concatenate([self.values[mask], [self.v_inf, self.W]])

    @classmethod
    def unflat(cls, x: np.ndarray, mask: np.ndarray) -> "State":
        vals = np.full(mask.shape, np.nan)
        vals[mask] = x[:-2]
        return cls(vals, float(x[-2]), float(x[-1]))


class FixedPointMap:
    """The map ``T`` for one parameter set on one truncated disc.

    Parameters
    ----------
    eps : {+1, -1}
        Sign of the nonlinearity: +1 source, -1 absorption.
    kappa, alpha, beta : float
    radius : int
    table : GreensTable
    """

    def __init__(self, eps: int, kappa: float, alpha: float, beta: float, radius: int,
                 table: GreensTable, convolver: Convolver | None = None):
        if eps not in (1, -1):
            raise ValueError("eps must be +1 or -1")
        self.eps = eps
        self.kappa = float(kappa)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.sigma = self.alpha * self.kappa / (2.0 * math.pi)
        if not self.sigma > 2:
            raise ValueError(f"sigma = alpha kappa / 2 pi must exceed 2, got {self.sigma:.6g}")
        self.g_mass = (self.alpha - self.beta) if eps == 1 else (self.beta - self.alpha)
        if not self.g_mass > 0:
            raise ValueError(f"point mass g must be positive, got {self.g_mass:.6g}")
        self.table = table
        self.C = table.fitted_constant
        self.domain = TruncatedDomain(int(radius))
        self.conv = convolver if convolver is not None else Convolver(table, self.domain)
        h = self.domain.half_width
        n = 2 * h + 1
        self.phi = np.array(self.conv.kernel[h: h + n, h: h + n])
        self.log_k = self.alpha * self.kappa * self.phi
        self.mask = self.domain.closure
        self.interior = self.domain.interior
        self.origin = (h, h)
        self.r_eff = self.domain.effective_radius
        self.s0 = self.r_eff ** (2.0 - self.sigma)
        # K ~ a_K r^-sigma in the tail
        self.log_a_k = -self.alpha * self.kappa * self.C

    # -- tail pieces -------------------------------------------------------

    def _tail_log_mass(self, state: State) -> float:
        """ln of sum_{|x|>R} K exp(kappa v) with v = v_inf + W r^(2-sigma)."""
        s, kw = self.sigma, self.kappa * state.W * self.s0
        # int_0^{s0} exp(kappa W s) ds = s0 * expm1(kw) / kw
        factor = math.expm1(kw) / kw if abs(kw) > 1e-12 else 1.0 + 0.5 * kw
        return (math.log(2.0 * math.pi / (s - 2.0)) + self.log_a_k + self.kappa * state.v_inf
                + math.log(self.s0 * factor))

    def _tail_potential(self, state: State, c: float) -> float:
        """sum_{|y|>R} f(y) (-ln|y| / 2 pi - C) with f = K exp(kappa v + c).

        Constant on the disc: a radial mass outside ``|x|`` acts like its mean.
        """
        s = self.sigma
        kw = self.kappa * state.W
        pref = 2.0 * math.pi / (s - 2.0) * math.exp(self.log_a_k + self.kappa * state.v_inf + c)

        def integrand(u):
            # u = r^(2-sigma) / s0 in (0, 1]; ln r = (ln u + ln s0) / (2 - sigma)
            ln_r = (math.log(u) + math.log(self.s0)) / (2.0 - s)
            return math.exp(kw * self.s0 * u) * (-ln_r / (2.0 * math.pi) - self.C)

        val, _ = integrate.quad(integrand, 0.0, 1.0, limit=200, epsabs=0.0, epsrel=1e-13)
        return pref * self.s0 * val

    # -- main pieces --------------------------------------------------------

    def head_log_terms(self, state: State) -> np.ndarray:
        return np.where(self.interior, self.log_k + self.kappa * state.values, -np.inf)

    def log_total_mass(self, state: State) -> tuple[float, float, float]:
        """(ln total, ln head, ln tail) of ``sum K exp(kappa v)``."""
        terms = self.head_log_terms(state)
        top = float(terms.max())
        head = top + math.log(math.fsum(np.exp(terms[self.interior] - top)))
        tail = self._tail_log_mass(state)
        total = np.logaddexp(head, tail)
        return float(total), head, tail

    def normalization(self, state: State) -> float:
        """``c_v = ln(g / sum_{Z^2} K e^{kappa v})``."""
        return math.log(self.g_mass) - self.log_total_mass(state)[0]

    def apply(self, state: State) -> tuple[State, float]:
        """One application of ``T``; returns the image and ``c_v`` of the input."""
        c = self.normalization(state)
        f = np.where(self.interior, np.exp(self.head_log_terms(state) + c), 0.0)
        f[self.origin] -= self.g_mass
        pot = self.conv.apply_array(f) + self._tail_potential(state, c)
        out = np.where(self.mask, self.eps * pot, np.nan)
        ring = self.domain.boundary
        r = self.domain.radii[ring]
        W = float(np.mean(out[ring] * r ** (self.sigma - 2.0)))
        return State(out, 0.0, W), c

    def tail_model(self, state: State) -> TailModel:
        return TailModel(0.0, state.v_inf, "log", state.W, self.sigma - 2.0)

    def as_grid(self, state: State) -> GridFunction:
        return GridFunction(self.domain, state.values, self.tail_model(state))

    def state_from_grid(self, v: GridFunction) -> State:
        if v.domain != self.domain:
            raise ValueError("grid function lives on a different domain")
        t = v.tail
        if t is None:
            return State(np.array(v.values), 0.0, 0.0)
        return State(np.array(v.values), t.constant_d, t.correction)

    def __call__(self, v: GridFunction) -> GridFunction:
        out, _ = self.apply(self.state_from_grid(v))
        return self.as_grid(out)

    # -- diagnostics ------------------------------------------------------

    def tau1(self) -> float:
        return (self.sigma - 2.0) / (2.0 * (self.sigma + 1.0))

    def update_norm(self, a: State, b: State) -> float:
        w = (1.0 + self.domain.radii[self.mask]) ** self.tau1()
        return float(np.max(np.abs(a.values[self.mask] - b.values[self.mask]) * w))

    def assemble(self, state: State) -> dict:
        """Build ``u`` from a converged ``v`` and collect diagnostics."""
        tv, c = self.apply(state)
        u_vals = np.where(self.mask, tv.values + c / self.kappa + self.alpha * self.phi, np.nan)
        ku = self.kappa * u_vals
        head_terms = np.exp(ku[self.interior])
        head = math.fsum(head_terms)
        tail = math.exp(self._tail_log_mass(tv) + c)
        lap = laplacian_grid(u_vals, self.interior)
        delta = np.zeros_like(u_vals)
        delta[self.origin] = self.beta
        resid = -lap - self.eps * np.exp(ku) - delta
        resid_sup = float(np.nanmax(np.abs(np.where(self.interior, resid, np.nan))))
        d_const = c / self.kappa - self.alpha * self.C + tv.v_inf
        tail_model = TailModel(self.alpha / (2.0 * math.pi), d_const, "log", tv.W, self.sigma - 2.0)
        # crude cross-check of the analytic tail: bound the power part with the lattice tail bound
        r_cut = max(4.0, float(self.domain.radius))
        sup_exp = max(1.0, math.exp(self.kappa * tv.W * r_cut ** (2.0 - self.sigma)))
        bound = (math.exp(self.log_a_k + c + self.kappa * tv.v_inf) * sup_exp
                 * tail_bound(self.sigma, 0.0, r_cut))
        return {
            "u": GridFunction(self.domain, u_vals, tail_model),
            "v": tv,
            "c": c,
            "energy_head": head,
            "energy_tail": tail,
            "energy": head + tail,
            "tail_bound": bound,
            "equation_residual": resid_sup,
        }


@dataclass
class IterationResult:
    state: State
    iterations: int
    final_update_norm: float
    history: list[float] = field(default_factory=list)
    damping: float = 0.5


def iterate(T: FixedPointMap, opts: IterationOptions, start: State | None = None) -> IterationResult:
    """Damped Picard with optional Anderson mixing, monitored in the ``tau1`` weighted norm.

    If the Anderson phase stalls for ``opts.stall`` steps or keeps growing for
    ``opts.patience`` steps, the loop restarts from the initial iterate as plain
    damped Picard with weight ``opts.fallback_damping``. Iterates
    reached by mixing can sit where plain Picard climbs for a long time, while
    the initial iterate is the one the damped map descends from.

    Raises
    ------
    NonConvergenceError
        After ``opts.patience`` consecutive growing plain-Picard updates, or at ``max_iter``.
    """
    mask = T.mask
    state = start if start is not None else State(np.where(mask, 0.0, np.nan))
    omega = opts.damping
    depth = opts.anderson
    history: list[float] = []
    xs: list[np.ndarray] = []
    gs: list[np.ndarray] = []
    growth = 0
    first = state
    prev = math.inf
    best_norm, best_k = math.inf, 0
    w = np.concatenate([(1.0 + T.domain.radii[mask]) ** T.tau1(), [0.0, 0.0]])
    for k in range(1, opts.max_iter + 1):
        image, _ = T.apply(state)
        x = state.flat(mask)
        gx = image.flat(mask) - x
        norm = float(np.max(np.abs(gx) * w))
        history.append(norm)
        if math.isfinite(norm) and norm < opts.tol:
            return IterationResult(image, k, norm, history, omega)
        if norm < best_norm:
            best_norm, best_k = norm, k
        if not math.isfinite(norm) or norm > prev:
            growth += 1
            omega = max(opts.min_damping, 0.5 * omega)
            xs.clear()
            gs.clear()
        else:
            growth = 0
        prev = norm
        trouble = None
        if not math.isfinite(norm):
            trouble = "non-finite update"
        elif growth >= opts.patience:
            trouble = f"update norm grew for {growth} consecutive steps (last {norm:.3e})"
        elif depth and k - best_k >= opts.stall:
            trouble = f"no new smallest update in {opts.stall} steps"
        if trouble and not depth:
            raise NonConvergenceError(trouble, history)
        if trouble:
            log.info("dropping Anderson mixing at iteration %d (%s)", k, trouble)
            depth, growth, best_k, prev = 0, 0, k, math.inf
            omega = opts.fallback_damping
            xs.clear()
            gs.clear()
            state = first
            continue
        xs.append(x)
        gs.append(gx)
        if len(xs) > depth + 1:
            xs.pop(0)
            gs.pop(0)
        if depth and len(xs) > 1:
            dg = np.stack([gs[i + 1] - gs[i] for i in range(len(gs) - 1)], axis=1)
            dx = np.stack([xs[i + 1] - xs[i] for i in range(len(xs) - 1)], axis=1)
            gamma, *_ = np.linalg.lstsq(dg * w[:, None], gx * w, rcond=None)
            x_new = x + omega * gx - (dx + omega * dg) @ gamma
        else:
            x_new = x + omega * gx
        state = State.unflat(x_new, mask)
        if k % 25 == 0:
            log.debug("iteration %d update %.3e omega %.3g", k, norm, omega)
    raise NonConvergenceError(f"no convergence in {opts.max_iter} iterations", history)
