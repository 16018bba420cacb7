"""The compactified frequency shell, test functions on it, and its cell partition.

A nonzero frequency ``eta`` is located by its direction ``eta/|eta|`` and the
compactified radius ``tau = |eta| / (1 + |eta|)``.  Radii with ``tau < delta``
are lumped into the inner sphere (``sigma0``), radii with ``tau > 1 - delta``
into the outer sphere (``sigmainf``), and the rest into ``n_rad`` equal
interior shells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

INTERIOR, SIGMA0, SIGMAINF = "interior", "sigma0", "sigmainf"
KINDS = (INTERIOR, SIGMA0, SIGMAINF)

_SNAP = 1e-11

VecRule = Callable[[np.ndarray], np.ndarray]


def compactify_radius(s):
    """``tau = s / (1 + s)``; accepts scalars or arrays, ``inf`` maps to 1."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("radius must be nonnegative")
    with np.errstate(invalid="ignore"):
        tau = np.where(np.isinf(s), 1.0, s / (1.0 + s))
    return float(tau) if tau.ndim == 0 else tau


def decompactify_radius(tau):
    tau = np.asarray(tau, dtype=float)
    return tau / (1.0 - tau)


@dataclass(frozen=True)
class ShellPoint:
    """A point of the compactified shell: interior frequency or a boundary direction."""

    kind: str
    vec: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shell point kind {self.kind!r}")
        v = np.asarray(self.vec, dtype=float)
        norm = float(np.linalg.norm(v))
        if self.kind == INTERIOR:
            if norm == 0.0:
                raise ValueError("interior shell point must be nonzero")
        elif abs(norm - 1.0) > 1e-12:
            raise ValueError(f"boundary direction must be a unit vector, |e| = {norm}")
        object.__setattr__(self, "vec", tuple(float(c) for c in v))

    @classmethod
    def interior(cls, xi) -> "ShellPoint":
        return cls(INTERIOR, tuple(xi))

    @classmethod
    def sigma0(cls, e) -> "ShellPoint":
        return cls(SIGMA0, tuple(_unit(e)))

    @classmethod
    def sigma_inf(cls, e) -> "ShellPoint":
        return cls(SIGMAINF, tuple(_unit(e)))

    @property
    def dim(self) -> int:
        return len(self.vec)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.vec)

    @property
    def direction(self) -> np.ndarray:
        v = self.array
        return v / np.linalg.norm(v)

    @property
    def tau(self) -> float:
        if self.kind == SIGMA0:
            return 0.0
        if self.kind == SIGMAINF:
            return 1.0
        return compactify_radius(float(np.linalg.norm(self.array)))


def _unit(e) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    return e / np.linalg.norm(e)


def direction_grid(dim: int, count: int = 64) -> np.ndarray:
    """Deterministic sample of unit vectors used for compatibility checks, shape ``(M, dim)``."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        t = 2 * np.pi * (np.arange(count) + 0.25) / count
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    # Fibonacci sphere
    i = np.arange(count) + 0.5
    z = 1 - 2 * i / count
    phi = np.pi * (1 + 5**0.5) * i
    rho = np.sqrt(1 - z**2)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


@dataclass(frozen=True, eq=False)
class ShellTestFn:
    """Continuous function on the compactified shell.

    ``interior`` maps an ``(M, d)`` array of nonzero frequencies to ``(M,)``
    complex values; ``psi0`` and ``psi_inf`` map ``(M, d)`` unit vectors to the
    values on the inner and outer spheres.  The compatibility of the three
    pieces is sampled at construction.
    """

    dim: int
    interior: VecRule
    psi0: VecRule
    psi_inf: VecRule
    compat_tol: float = 1e-6
    compat_radii: tuple[float, float] = (1e-4, 1e4)
    name: str = ""
    homogeneous: bool = False
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.check_compatibility()

    def check_compatibility(self):
        e = direction_grid(self.dim)
        small, large = self.compat_radii
        err0 = np.abs(self.interior(small * e) - self.psi0(e))
        errinf = np.abs(self.interior(large * e) - self.psi_inf(e))
        for side, err in (("sigma0", err0), ("sigmainf", errinf)):
            worst = float(np.max(err))
            if not worst <= self.compat_tol:
                raise ValueError(
                    f"shell test function {self.name!r} violates compatibility on {side}: "
                    f"deviation {worst:.3e} > {self.compat_tol:.1e}"
                )

    def values(self, eta: np.ndarray) -> np.ndarray:
        """Interior rule on an ``(M, d)`` array of nonzero frequencies."""
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        if np.any(np.all(eta == 0, axis=1)):
            raise ValueError("shell test functions are undefined at the origin")
        return np.asarray(self.interior(eta), dtype=complex).reshape(len(eta))

    def at(self, point: ShellPoint) -> complex:
        """Value at a shell point; boundary points use the sphere values."""
        v = point.array[None]
        if point.kind == SIGMA0:
            return complex(np.asarray(self.psi0(v)).reshape(-1)[0])
        if point.kind == SIGMAINF:
            return complex(np.asarray(self.psi_inf(v)).reshape(-1)[0])
        return complex(self.values(v)[0])

    def scaled(self, c: complex) -> "ShellTestFn":
        return ShellTestFn(
            self.dim,
            lambda x: c * self.interior(x),
            lambda e: c * self.psi0(e),
            lambda e: c * self.psi_inf(e),
            self.compat_tol * max(1.0, abs(c)),
            self.compat_radii,
            f"{c}*{self.name}",
            self.homogeneous,
        )


def eval_test(psi: ShellTestFn, eta) -> complex:
    eta = np.asarray(eta, dtype=float).reshape(1, -1)
    if not np.any(eta):
        raise ValueError("shell test functions are undefined at the origin")
    return complex(psi.values(eta)[0])


def homogeneous_lift(g: VecRule, dim: int, name: str = "g∘π") -> ShellTestFn:
    """``psi(xi) = g(xi/|xi|)`` with ``g`` on both spheres."""

    def interior(x):
        x = np.asarray(x, dtype=float)
        return g(x / np.linalg.norm(x, axis=1, keepdims=True))

    return ShellTestFn(dim, interior, g, g, name=name, homogeneous=True)


def constant_lift(c: complex, dim: int) -> ShellTestFn:
    const = lambda x: np.full(len(x), c, dtype=complex)  # noqa: E731
    return ShellTestFn(dim, const, const, const, name=f"const{c}", homogeneous=True)


def c0_lift(h: VecRule, dim: int, compat_tol: float = 1e-6,
            compat_radii: tuple[float, float] = (1e-4, 1e4), name: str = "h") -> ShellTestFn:
    """Embed ``h`` (continuous, vanishing at infinity) into the shell functions.

    ``psi0 = h(0)`` and ``psi_inf = 0``; the compatibility check names the
    failing sphere if ``h`` does not decay or is discontinuous at the origin.
    """
    h0 = complex(np.asarray(h(np.zeros((1, dim)))).reshape(-1)[0])
    return ShellTestFn(
        dim,
        h,
        lambda e: np.full(len(e), h0, dtype=complex),
        lambda e: np.zeros(len(e), dtype=complex),
        compat_tol,
        compat_radii,
        name,
        tags={"c0": True, "h": h},
    )


def monomial(x: np.ndarray, alpha) -> np.ndarray:
    out = np.ones(x.shape[0], dtype=complex)
    for a, p in enumerate(alpha):
        if p:
            out = out * x[:, a] ** p
    return out


def rational_symbol(alpha, l: int, m: int, compat_tol: float = 1e-6,
                    compat_radii: tuple[float, float] = (1e-8, 1e8)) -> ShellTestFn:
    """``xi^alpha / (|xi|^l + |xi|^m)`` with its limits on the two spheres.

    The default probe radii are tighter than for generic test functions because
    the approach to the sphere values is only linear in ``|xi|^(m-l)``.
    """
    alpha = tuple(int(a) for a in alpha)
    order = sum(alpha)
    if not 0 <= l <= m or not l <= order <= m:
        raise ValueError(f"need l <= |alpha| <= m, got l={l}, |alpha|={order}, m={m}")

    def interior(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=1)
        return monomial(x, alpha) / (r**l + r**m)

    def on_sphere(keep: bool, scale: float):
        def rule(e):
            if keep:
                return scale * monomial(np.asarray(e, dtype=float), alpha)
            return np.zeros(len(e), dtype=complex)
        return rule

    if l == m:
        psi0 = psi_inf = on_sphere(True, 0.5)
    else:
        psi0 = on_sphere(order == l, 1.0)
        psi_inf = on_sphere(order == m, 1.0)
    return ShellTestFn(len(alpha), interior, psi0, psi_inf, compat_tol, compat_radii,
                       name=f"rat{alpha}/{l},{m}", homogeneous=(l == m == order))


# --- cell partition ---------------------------------------------------------

@dataclass(frozen=True)
class ShellBins:
    """Finite partition of the compactified shell.

    Direction bins: two signs for ``d=1``; ``n_dir`` angular sectors centred on
    the angles ``2 pi j / n_dir`` for ``d=2``; for ``d=3`` a latitude-longitude
    grid of ``n_dir // 2`` polar bands times ``n_dir`` longitude sectors.
    Cell ids run over the inner sphere first, then interior cells
    (``D + dir * n_rad + rad``), then the outer sphere.
    """

    dim: int
    n_dir: int = 8
    n_rad: int = 9
    delta: float = 0.05

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        if not 0 < self.delta < 0.5:
            raise ValueError("delta_boundary must lie in (0, 0.5)")
        if self.n_rad < 1:
            raise ValueError("n_rad must be positive")
        if self.dim == 1:
            object.__setattr__(self, "n_dir", 2)
        elif self.n_dir < 2 or (self.dim == 3 and self.n_dir % 2):
            raise ValueError("n_dir must be >= 2 (and even for d=3)")

    @property
    def n_lat(self) -> int:
        return self.n_dir // 2 if self.dim == 3 else 1

    @property
    def n_directions(self) -> int:
        return self.n_dir * self.n_lat if self.dim == 3 else self.n_dir

    @property
    def n_cells(self) -> int:
        return self.n_directions * (self.n_rad + 2)

    @property
    def rad_width(self) -> float:
        return (1 - 2 * self.delta) / self.n_rad

    # -- classification

    def direction_bins(self, eta: np.ndarray) -> np.ndarray:
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        if self.dim == 1:
            return (eta[:, 0] < 0).astype(np.int64)
        if self.dim == 2:
            return _sector(np.arctan2(eta[:, 1], eta[:, 0]), self.n_dir)
        r = np.linalg.norm(eta, axis=1)
        polar = np.arccos(np.clip(eta[:, 2] / r, -1.0, 1.0))
        band = np.minimum(_floor_snap(polar / (np.pi / self.n_lat)), self.n_lat - 1)
        lon = _sector(np.arctan2(eta[:, 1], eta[:, 0]), self.n_dir)
        return band * self.n_dir + lon

    def classify_many(self, eta: np.ndarray) -> np.ndarray:
        """Cell id for each row of ``eta``; rows must be nonzero."""
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        r = np.linalg.norm(eta, axis=1)
        if np.any(r == 0):
            raise ValueError("zero-frequency mode must be excluded or routed by caller")
        D = self.n_directions
        dirs = self.direction_bins(eta)
        tau = compactify_radius(r)
        rad = np.clip(_floor_snap((tau - self.delta) / self.rad_width), 0, self.n_rad - 1)
        cells = D + dirs * self.n_rad + rad
        cells = np.where(tau < self.delta, dirs, cells)
        cells = np.where(tau > 1 - self.delta, D + D * self.n_rad + dirs, cells)
        return cells.astype(np.int64)

    def classify(self, eta) -> int:
        return int(self.classify_many(np.asarray(eta, dtype=float).reshape(1, -1))[0])

    def classify_point(self, point: ShellPoint) -> int:
        if point.kind == INTERIOR:
            return self.classify(point.vec)
        d = int(self.direction_bins(point.array[None])[0])
        return d if point.kind == SIGMA0 else self.n_directions * (self.n_rad + 1) + d

    # -- cell metadata

    def cell_info(self, cell: int) -> dict:
        D = self.n_directions
        if not 0 <= cell < self.n_cells:
            raise IndexError(f"cell {cell} out of range")
        if cell < D:
            return {"kind": SIGMA0, "dir_bin": cell, "rad_bin": None}
        if cell >= D * (self.n_rad + 1):
            return {"kind": SIGMAINF, "dir_bin": cell - D * (self.n_rad + 1), "rad_bin": None}
        k = cell - D
        return {"kind": INTERIOR, "dir_bin": k // self.n_rad, "rad_bin": k % self.n_rad}

    def cell_id(self, kind: str, dir_bin: int, rad_bin: int | None = None) -> int:
        D = self.n_directions
        if kind == SIGMA0:
            return dir_bin
        if kind == SIGMAINF:
            return D * (self.n_rad + 1) + dir_bin
        return D + dir_bin * self.n_rad + int(rad_bin)

    def kinds(self) -> np.ndarray:
        return np.array([self.cell_info(c)["kind"] for c in range(self.n_cells)])

    def dir_of_cells(self) -> np.ndarray:
        return np.array([self.cell_info(c)["dir_bin"] for c in range(self.n_cells)])

    def direction_centroid(self, dir_bin: int) -> np.ndarray:
        if self.dim == 1:
            return np.array([1.0 if dir_bin == 0 else -1.0])
        if self.dim == 2:
            t = 2 * np.pi * dir_bin / self.n_dir
            return np.array([math.cos(t), math.sin(t)])
        band, lon = divmod(dir_bin, self.n_dir)
        polar = (band + 0.5) * np.pi / self.n_lat
        t = 2 * np.pi * lon / self.n_dir
        return np.array([math.sin(polar) * math.cos(t), math.sin(polar) * math.sin(t),
                         math.cos(polar)])

    def radial_centroid(self, rad_bin: int) -> float:
        """Centre of a radial bin in the compactified coordinate."""
        return self.delta + (rad_bin + 0.5) * self.rad_width

    def representative(self, cell: int) -> ShellPoint:
        info = self.cell_info(cell)
        e = self.direction_centroid(info["dir_bin"])
        if info["kind"] == SIGMA0:
            return ShellPoint(SIGMA0, tuple(e))
        if info["kind"] == SIGMAINF:
            return ShellPoint(SIGMAINF, tuple(e))
        s = float(decompactify_radius(self.radial_centroid(info["rad_bin"])))
        return ShellPoint(INTERIOR, tuple(s * e))

    def antipodal_dir(self, dir_bin: int) -> int:
        if self.dim == 1:
            return 1 - dir_bin
        if self.dim == 2:
            if self.n_dir % 2:
                raise ValueError("antipodal map needs an even number of sectors")
            return (dir_bin + self.n_dir // 2) % self.n_dir
        band, lon = divmod(dir_bin, self.n_dir)
        return (self.n_lat - 1 - band) * self.n_dir + (lon + self.n_dir // 2) % self.n_dir

    def antipode(self, cell: int) -> int:
        info = self.cell_info(cell)
        return self.cell_id(info["kind"], self.antipodal_dir(info["dir_bin"]), info["rad_bin"])

    def to_dict(self) -> dict:
        return {"d": self.dim, "n_dir": self.n_dir, "n_rad": self.n_rad,
                "delta_boundary": self.delta}

    def cells_json(self) -> dict:
        """Stable cell schema: id -> {kind, dir_bin, rad_bin}."""
        return {"bins": self.to_dict(),
                "cells": {str(c): self.cell_info(c) for c in range(self.n_cells)}}


def _floor_snap(t: np.ndarray) -> np.ndarray:
    """``floor`` that treats values within ``_SNAP`` below an integer as that integer."""
    t = np.asarray(t, dtype=float)
    near = np.round(t)
    t = np.where(np.abs(t - near) <= _SNAP * np.maximum(1.0, np.abs(near)), near, t)
    return np.floor(t).astype(np.int64)


def _sector(angle: np.ndarray, n: int) -> np.ndarray:
    # sector j covers [(j - 1/2), (j + 1/2)) * 2 pi / n
    t = angle / (2 * np.pi / n) + 0.5
    return _floor_snap(t) % n
