"""Lattice geometry on Z^2: truncated domains, grid functions, weighted norms.

Grid functions are stored on the bounding box ``[-R-1, R+1]^2`` of a
truncated domain. Entries outside ``interior | boundary`` are NaN, so a
stray read of an undefined point poisons the result instead of silently
returning zero.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

__all__ = [
    "DomainError",
    "LatticePoint",
    "TruncatedDomain",
    "TailModel",
    "GridFunction",
    "laplacian",
    "laplacian_grid",
    "weighted_norm",
    "norm_ordering_check",
    "tail_bound",
    "lattice_sum",
    "boundary_flux",
]


class DomainError(ValueError):
    """A lattice point was queried outside the region where it is defined."""


class LatticePoint(NamedTuple):
    x1: int
    x2: int

    @property
    def norm(self) -> float:
        return math.hypot(self.x1, self.x2)

    @property
    def taxicab(self) -> int:
        return abs(self.x1) + abs(self.x2)

    def neighbors(self) -> list["LatticePoint"]:
        x1, x2 = self
        return [LatticePoint(x1 + 1, x2), LatticePoint(x1 - 1, x2),
                LatticePoint(x1, x2 + 1), LatticePoint(x1, x2 - 1)]


def _neighbor_any(mask: np.ndarray) -> np.ndarray:
    """True where at least one of the four lattice neighbours is set."""
    out = np.zeros_like(mask)
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


@dataclass(frozen=True)
class TruncatedDomain:
    """Finite ball ``|x| <= R`` (Euclidean or taxicab) plus its one-ring boundary.

    Arrays attached to the domain are indexed ``[x1 + h, x2 + h]`` with
    ``h = radius + 1``.
    """

    radius: int
    norm_kind: str = "euclidean_ball"

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"radius must be a positive integer, got {self.radius!r}")
        if self.norm_kind not in ("euclidean_ball", "taxicab_ball"):
            raise ValueError(f"unknown norm_kind {self.norm_kind!r}")

    @property
    def half_width(self) -> int:
        return self.radius + 1

    @property
    def shape(self) -> tuple[int, int]:
        n = 2 * self.half_width + 1
        return (n, n)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        h = self.half_width
        r = np.arange(-h, h + 1)
        return np.meshgrid(r, r, indexing="ij")

    @cached_property
    def radii(self) -> np.ndarray:
        x1, x2 = self.coords
        return np.hypot(x1, x2)

    @cached_property
    def interior(self) -> np.ndarray:
        x1, x2 = self.coords
        if self.norm_kind == "euclidean_ball":
            m = x1 * x1 + x2 * x2 <= self.radius * self.radius
        else:
            m = np.abs(x1) + np.abs(x2) <= self.radius
        m.flags.writeable = False
        return m

    @cached_property
    def boundary(self) -> np.ndarray:
        m = _neighbor_any(self.interior) & ~self.interior
        m.flags.writeable = False
        return m

    @cached_property
    def closure(self) -> np.ndarray:
        m = self.interior | self.boundary
        m.flags.writeable = False
        return m

    @property
    def n_interior(self) -> int:
        return int(self.interior.sum())

    @property
    def effective_radius(self) -> float:
        """Radius of the disc whose area equals the interior point count."""
        return math.sqrt(self.n_interior / math.pi)

    def index(self, x: tuple[int, int]) -> tuple[int, int]:
        h = self.half_width
        i, j = int(x[0]) + h, int(x[1]) + h
        if not (0 <= i < self.shape[0] and 0 <= j < self.shape[1]):
            raise DomainError(f"point {tuple(x)} lies outside the bounding box of radius {self.radius}")
        return i, j

    def contains(self, x: tuple[int, int]) -> bool:
        try:
            return bool(self.interior[self.index(x)])
        except DomainError:
            return False

    def points(self, which: str = "interior") -> list[LatticePoint]:
        """Points of ``interior``, ``boundary`` or ``closure``, lexicographic in (x1, x2)."""
        mask = getattr(self, which)
        h = self.half_width
        ii, jj = np.nonzero(mask)  # row-major == lexicographic
        return [LatticePoint(int(i - h), int(j - h)) for i, j in zip(ii, jj)]

    def new_array(self, fill: float = np.nan) -> np.ndarray:
        return np.full(self.shape, fill, dtype=float)

    def to_json(self) -> dict:
        return {"radius": self.radius, "norm_kind": self.norm_kind}


@dataclass(frozen=True)
class TailModel:
    """Closed-form model of a grid function beyond the stored radius.

    ``log``:            -a ln r + d + w r^(-p)
    ``log_double_log``: -a ln r - a ln(ln r + shift) + d
    ``power``:          d r^(-a)
    """

    slope_a: float
    constant_d: float
    kind: str = "log"
    correction: float = 0.0
    decay: float = 0.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in ("log", "log_double_log", "power"):
            raise ValueError(f"unknown tail kind {self.kind!r}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "power":
            return self.constant_d * r ** (-self.slope_a)
        out = -self.slope_a * np.log(r) + self.constant_d
        if self.kind == "log_double_log":
            out = out - self.slope_a * np.log(np.log(r) + self.shift)
        if self.correction:
            out = out + self.correction * r ** (-self.decay)
        return out

    def shifted(self, t: float) -> "TailModel":
        if self.kind == "power":
            raise ValueError("power tails are multiplicative; shifting is undefined")
        return TailModel(self.slope_a, self.constant_d + t, self.kind, self.correction, self.decay, self.shift)

    def to_json(self) -> dict:
        return {"slope_a": self.slope_a, "constant_d": self.constant_d, "kind": self.kind,
                "correction": self.correction, "decay": self.decay, "shift": self.shift}

    @classmethod
    def from_json(cls, d: dict | None) -> "TailModel | None":
        if not d:
            return None
        return cls(float(d["slope_a"]), float(d["constant_d"]), d.get("kind", "log"),
                   float(d.get("correction", 0.0)), float(d.get("decay", 0.0)), float(d.get("shift", 0.0)))


@dataclass(frozen=True)
class GridFunction:
    domain: TruncatedDomain
    values: np.ndarray = field(repr=False)
    tail: TailModel | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != self.domain.shape:
            raise ValueError(f"values shape {v.shape} does not match domain box {self.domain.shape}")
        closure = self.domain.closure
        if not np.all(np.isfinite(v[closure])):
            raise ValueError("grid function must be finite on interior and boundary")
        v[~closure] = np.nan
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, domain: TruncatedDomain, func: Callable, tail: TailModel | None = None):
        """Build from a vectorised ``func(x1, x2)``."""
        x1, x2 = domain.coords
        vals = np.broadcast_to(np.asarray(func(x1, x2), dtype=float), domain.shape)
        return cls(domain, np.where(domain.closure, vals, np.nan), tail)

    @classmethod
    def delta(cls, domain: TruncatedDomain, at: tuple[int, int] = (0, 0), mass: float = 1.0):
        v = np.where(domain.closure, 0.0, np.nan)
        v[domain.index(at)] = mass
        return cls(domain, v)

    def __call__(self, x: tuple[int, int]) -> float:
        d = self.domain
        try:
            idx = d.index(x)
            inside = bool(d.closure[idx])
        except DomainError:
            inside = False
        if inside:
            return float(self.values[idx])
        if self.tail is None:
            raise DomainError(f"{tuple(x)} is outside the domain and no tail model is attached")
        return float(self.tail(math.hypot(x[0], x[1])))

    def with_values(self, values: np.ndarray, tail: TailModel | None = None) -> "GridFunction":
        return GridFunction(self.domain, values, tail)

    def stored(self) -> np.ndarray:
        """Values on interior and boundary, lexicographic order."""
        return self.values[self.domain.closure]

    # -- persistence -----------------------------------------------------

    def save(self, path: str | Path) -> tuple[Path, Path]:
        """Write ``<path>.csv`` (``x1,x2,value``) and a JSON sidecar."""
        path = Path(path)
        csv_path = path.with_suffix(".csv")
        meta_path = path.with_suffix(".json")
        h = self.domain.half_width
        ii, jj = np.nonzero(self.domain.closure)
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("x1,x2,value\n")
            for i, j in zip(ii, jj):
                fh.write(f"{i - h},{j - h},{float(self.values[i, j])!r}\n")
        meta = dict(self.domain.to_json(), tail=self.tail.to_json() if self.tail else None)
        meta_path.write_text(json.dumps(meta, indent=2), encoding="utf-8")
        return csv_path, meta_path

    @classmethod
    def load(cls, path: str | Path) -> "GridFunction":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        domain = TruncatedDomain(int(meta["radius"]), meta.get("norm_kind", "euclidean_ball"))
        data = np.loadtxt(path.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
        vals = domain.new_array()
        h = domain.half_width
        vals[data[:, 0].astype(int) + h, data[:, 1].astype(int) + h] = data[:, 2]
        return cls(domain, vals, TailModel.from_json(meta.get("tail")))


def lattice_sum(values: np.ndarray) -> float:
    """Exactly rounded sum of the finite entries, in lexicographic order."""
    a = np.asarray(values, dtype=float).ravel()
    return math.fsum(a[np.isfinite(a)])


def laplacian_grid(values: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Unnormalised 4-point Laplacian of a box array; NaN off ``mask`` and on the box edge."""
    v = np.asarray(values, dtype=float)
    out = np.full(v.shape, np.nan)
    c = v[1:-1, 1:-1]
    out[1:-1, 1:-1] = (v[2:, 1:-1] - c) + (v[:-2, 1:-1] - c) + (v[1:-1, 2:] - c) + (v[1:-1, :-2] - c)
    if mask is not None:
        out[~mask] = np.nan
    return out


def laplacian(f: GridFunction, x: tuple[int, int]) -> float:
    """``sum_{y ~ x} (f(y) - f(x))`` at an interior point of ``f.domain``."""
    d = f.domain
    if not d.contains(x):
        raise DomainError(f"laplacian needs an interior point; {tuple(x)} is not interior")
    i, j = d.index(x)
    v = f.values
    c = v[i, j]
    return float((v[i + 1, j] - c) + (v[i - 1, j] - c) + (v[i, j + 1] - c) + (v[i, j - 1] - c))


def boundary_flux(f: GridFunction) -> float:
    """Outward flux ``sum (f(x) - f(y))`` over edges from interior x to boundary y.

    Equals ``sum_interior (-laplacian f)`` by the discrete divergence theorem.
    """
    d = f.domain
    v = f.values
    inner, bdry = d.interior, d.boundary
    terms = []
    for shift in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = np.roll(v, (-shift[0], -shift[1]), axis=(0, 1))
        nb_b = np.roll(bdry, (-shift[0], -shift[1]), axis=(0, 1))
        sel = inner & nb_b
        terms.append(np.where(sel, v - nb, np.nan))
    return lattice_sum(np.stack(terms))


def weighted_norm(f: GridFunction | np.ndarray, sigma: float, domain: TruncatedDomain | None = None) -> float:
    """``sup |f(x)| (1+|x|)^sigma`` over the stored points (tail excluded)."""
    if isinstance(f, GridFunction):
        domain, vals = f.domain, f.values
    else:
        vals = np.asarray(f, dtype=float)
    m = domain.closure
    w = np.abs(vals[m]) * (1.0 + domain.radii[m]) ** sigma
    return float(w.max()) if w.size else 0.0


def norm_ordering_check(f: GridFunction, sigma1: float, sigma2: float) -> bool:
    if not sigma1 > sigma2:
        raise ValueError(f"need sigma1 > sigma2, got {sigma1} <= {sigma2}")
    return weighted_norm(f, sigma2) <= weighted_norm(f, sigma1)


def tail_bound(sigma: float, rho: float, r: float) -> float:
    """Upper bound for ``sum_{x in Z^2, |x| > r} |x|^-sigma (ln|x|)^-rho``.

    For ``rho == -1`` the sharper dedicated estimate is used, valid for
    ``r >= 4 exp(2/(sigma-2))``; otherwise ``r >= 4``.
    """
    if not sigma > 2:
        raise ValueError(f"tail_bound needs sigma > 2, got {sigma}")
    if rho == -1:
        r_min = 4.0 * math.exp(2.0 / (sigma - 2.0))
        if r < r_min:
            raise ValueError(f"rho = -1 branch needs r >= {r_min:.6g}, got {r}")
        return math.pi * 2.0 ** (2 * sigma + 3) / (sigma - 2) * r ** (2 - sigma) * math.log(r)
    if r < 4:
        raise ValueError(f"tail_bound needs r >= 4, got {r}")
    if rho >= 0:
        varpi = 1.0 / (sigma - 2)
    else:
        n = math.ceil(-rho)
        varpi = math.factorial(n) * sigma ** n / (sigma - 2) ** (n + 1)
    return math.pi * 2.0 ** (2 * sigma + 2 * abs(rho) - 1) * varpi * r ** (2 - sigma) * math.log(r) ** (-rho)
