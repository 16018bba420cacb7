"""Periodic torus grids, sampled fields and the DFT convention.

Coefficients follow the Fourier-series normalisation

    c_xi = (1/N^d) sum_j f(x_j) exp(-2 pi i xi . x_j),

so that on the unit torus ``sum |c_xi|^2 == integral |f|^2``.  Frequencies are
kept in numpy FFT order and every array of coefficients is accompanied by the
signed frequency lattice from :meth:`TorusGrid.frequencies`; callers never see
an ``fftshift``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

MAX_SAMPLES = 2**28
SMOOTH_TOL = 1e-10


class GridMismatchError(ValueError):
    """Raised when two objects live on incompatible discretisations."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the torus ``[0, period)^dim`` with ``points`` samples per axis."""

    dim: int
    points: int
    period: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.points <= 0 or self.points % 2:
            raise ValueError("points_per_axis must be even")
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.points**self.dim > MAX_SAMPLES:
            raise ValueError(
                f"{self.points}^{self.dim} samples exceed the limit of {MAX_SAMPLES}"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dim

    @property
    def size(self) -> int:
        return self.points**self.dim

    @property
    def spacing(self) -> float:
        return self.period / self.points

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def volume(self) -> float:
        return self.period**self.dim

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.points) * self.spacing
        return (x,) * self.dim

    def coordinates(self) -> np.ndarray:
        """Sample coordinates, shape ``(dim, N, ..., N)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def _frequencies(self) -> np.ndarray:
        k = np.fft.fftfreq(self.points, d=1.0 / self.points) / self.period
        freq = np.stack(np.meshgrid(*(k,) * self.dim, indexing="ij"))
        freq.setflags(write=False)
        return freq

    def frequencies(self) -> np.ndarray:
        """Signed lattice frequencies in FFT order, shape ``(dim, N, ..., N)``.

        Components lie in ``[-N/2, N/2) / period``.
        """
        return self._frequencies

    @cached_property
    def _freq_norm(self) -> np.ndarray:
        out = np.sqrt(np.sum(self._frequencies**2, axis=0))
        out.setflags(write=False)
        return out

    def frequency_norms(self) -> np.ndarray:
        return self._freq_norm

    @property
    def max_frequency(self) -> float:
        """Largest Euclidean frequency magnitude on the lattice."""
        return float(np.sqrt(self.dim) * (self.points // 2) / self.period)

    @property
    def headroom(self) -> float:
        """Frequencies at or below this magnitude are safe from aliasing under windowing."""
        return self.points / 4 / self.period

    def index_of(self, xi: Sequence[float]) -> tuple[int, ...]:
        """FFT-order index of the lattice frequency ``xi``."""
        idx = []
        for comp in xi:
            k = int(round(comp * self.period))
            if not -self.points // 2 <= k < self.points // 2:
                raise ValueError(f"frequency {tuple(xi)} is not on the lattice")
            idx.append(k % self.points)
        return tuple(idx)

    def to_dict(self) -> dict:
        return {"d": self.dim, "N": self.points, "period": self.period}


def _check_same_grid(a: TorusGrid, b: TorusGrid):
    if a != b:
        raise GridMismatchError(f"incompatible discretisations: {a} vs {b}")


@dataclass(frozen=True, eq=False)
class Field:
    """Complex vector field with ``r`` components sampled on a torus grid.

    ``samples`` has shape ``(r, N, ..., N)``.
    """

    grid: TorusGrid
    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.shape == self.grid.shape:
            s = s[None]
        if s.ndim != self.grid.dim + 1 or s.shape[1:] != self.grid.shape:
            raise ValueError(
                f"samples of shape {s.shape} do not fit grid shape {self.grid.shape}"
            )
        object.__setattr__(self, "samples", s)

    @property
    def components(self) -> int:
        return self.samples.shape[0]

    @property
    def flat(self) -> np.ndarray:
        """Samples as an ``(r, N^d)`` array."""
        return self.samples.reshape(self.components, -1)

    @classmethod
    def zeros(cls, grid: TorusGrid, components: int = 1) -> "Field":
        return cls(grid, np.zeros((components,) + grid.shape, dtype=complex))

    def component(self, i: int) -> "Field":
        return Field(self.grid, self.samples[i : i + 1])

    def is_real(self, tol: float = 1e-14) -> bool:
        scale = max(float(np.max(np.abs(self.samples), initial=0.0)), 1.0)
        return float(np.max(np.abs(self.samples.imag), initial=0.0)) <= tol * scale

    def _combine(self, other, op):
        if isinstance(other, Field):
            _check_same_grid(self.grid, other.grid)
            return Field(self.grid, op(self.samples, other.samples))
        return Field(self.grid, op(self.samples, other))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, scalar):
        return Field(self.grid, self.samples * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.samples)


@dataclass(frozen=True, eq=False)
class PhysTestFn:
    """Smooth physical-space test function (the phi in the pairings).

    Construction checks that DFT coefficients with ``|xi| >= N/4`` are below
    ``smooth_tol`` times the largest one, so products with admissible fields do
    not alias.  Pass ``smooth_tol=None`` to skip the check (only for windows
    that are deliberately non-analytic, e.g. compactly supported ones).
    """

    grid: TorusGrid
    samples: np.ndarray
    declared_support: tuple[tuple[float, float], ...] | None = None
    smooth_tol: float | None = SMOOTH_TOL
    name: str = ""

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.shape != self.grid.shape:
            raise ValueError(f"samples of shape {s.shape} do not fit {self.grid.shape}")
        object.__setattr__(self, "samples", s)
        if self.smooth_tol is not None:
            tail = self.spectral_tail()
            if tail > self.smooth_tol:
                raise ValueError(
                    f"test function {self.name!r} is under-resolved: relative DFT tail "
                    f"{tail:.3e} beyond |xi| = N/4 exceeds {self.smooth_tol:.1e}"
                )
        if self.declared_support is not None:
            outside = ~_box_mask(self.grid, self.declared_support)
            leak = float(np.max(np.abs(s[outside]), initial=0.0))
            if leak > 1e-14:
                raise ValueError(
                    f"test function {self.name!r} is {leak:.3e} outside its declared support"
                )

    def spectral_tail(self) -> float:
        c = np.abs(dft_coefficients(self.grid, self.samples))
        top = float(c.max())
        if top == 0.0:
            return 0.0
        far = self.grid.frequency_norms() >= self.grid.headroom
        return float(c[far].max(initial=0.0)) / top

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def conj(self) -> "PhysTestFn":
        return PhysTestFn(self.grid, self.samples.conj(), self.declared_support, None, self.name)

    def __mul__(self, other: "PhysTestFn") -> "PhysTestFn":
        _check_same_grid(self.grid, other.grid)
        return PhysTestFn(self.grid, self.samples * other.samples, None, None,
                          f"{self.name}*{other.name}")


def _box_mask(grid: TorusGrid, box) -> np.ndarray:
    x = grid.coordinates()
    mask = np.ones(grid.shape, dtype=bool)
    for a, (lo, hi) in enumerate(box):
        mask &= (x[a] >= lo) & (x[a] <= hi)
    return mask


# --- transforms -------------------------------------------------------------

def dft_coefficients(grid: TorusGrid, samples: np.ndarray) -> np.ndarray:
    axes = tuple(range(-grid.dim, 0))
    return np.fft.fftn(samples, axes=axes) / grid.size


def dft_forward(f: Field) -> np.ndarray:
    """Normalised DFT of every component, shape ``(r, N, ..., N)`` in FFT order."""
    return dft_coefficients(f.grid, f.samples)


def dft_inverse(grid: TorusGrid, coeffs: np.ndarray) -> Field:
    axes = tuple(range(-grid.dim, 0))
    return Field(grid, np.fft.ifftn(np.asarray(coeffs) * grid.size, axes=axes))


def pointwise_mul(phi: PhysTestFn, u: Field) -> Field:
    _check_same_grid(phi.grid, u.grid)
    return Field(u.grid, phi.samples[None] * u.samples)


def parseval_mass(f: Field) -> float:
    """``integral |f|^2`` computed on the coefficient side."""
    c = dft_forward(f)
    return float(np.sum(np.abs(c) ** 2).real) * f.grid.volume


def quadrature_mass(f: Field) -> float:
    """``integral |f|^2`` by the rectangle rule (exact for trigonometric polynomials)."""
    return float(np.sum(np.abs(f.samples) ** 2)) * f.grid.cell_volume


def integrate(grid: TorusGrid, values: np.ndarray) -> complex:
    return complex(np.sum(values)) * grid.cell_volume


# --- test functions ---------------------------------------------------------

def constant_window(grid: TorusGrid, value: complex = 1.0) -> PhysTestFn:
    return PhysTestFn(grid, np.full(grid.shape, value, dtype=complex), name="const")


def raised_cosine_bump(grid: TorusGrid, center: Sequence[float], power: int = 2,
                       scale: float = 1.0) -> PhysTestFn:
    """``scale * prod_a ((1 + cos 2 pi (x_a - c_a)/P) / 2)^power``; a trigonometric polynomial."""
    x = grid.coordinates()
    out = np.ones(grid.shape)
    for a in range(grid.dim):
        out *= ((1 + np.cos(2 * np.pi * (x[a] - center[a]) / grid.period)) / 2) ** power
    return PhysTestFn(grid, scale * out, name=f"bump{power}@{tuple(center)}")


def trig_harmonic(grid: TorusGrid, k: Sequence[int], kind: str = "cos") -> PhysTestFn:
    x = grid.coordinates()
    phase = 2 * np.pi * np.tensordot(np.asarray(k, dtype=float), x, axes=1) / grid.period
    vals = np.cos(phase) if kind == "cos" else np.sin(phase)
    return PhysTestFn(grid, vals, name=f"{kind}{tuple(k)}")


def partition_of_unity(grid: TorusGrid, per_axis: int = 2, kappa: float = 0.35,
                       smooth_tol: float | None = SMOOTH_TOL) -> list[PhysTestFn]:
    """Smooth windows with ``sum_p phi_p^2 == 1`` on the torus.

    With two windows per axis we use ``cos(theta), sin(theta)`` for
    ``theta = pi/4 (1 + cos 2 pi x)``; both are entire in ``x``, so their
    coefficients decay like Bessel functions and pass the smoothness check on
    any grid with ``N >= 64``.  Other counts use
    ``g_j = exp(kappa cos 2 pi (x - j/P))`` normalised by ``sqrt(sum g^2)``.
    The d-dimensional windows are tensor products.
    """
    if per_axis < 1:
        raise ValueError("per_axis must be positive")
    if per_axis == 1:
        return [constant_window(grid)]
    x = grid.axes[0] / grid.period
    if per_axis == 2:
        theta = np.pi / 4 * (1 + np.cos(2 * np.pi * x))
        g = np.stack([np.sin(theta), np.cos(theta)])
    else:
        g = np.stack([np.exp(kappa * np.cos(2 * np.pi * (x - j / per_axis)))
                      for j in range(per_axis)])
        g /= np.sqrt(np.sum(g**2, axis=0))
    return _tensor_windows(grid, g, "w", smooth_tol)


def _tensor_windows(grid, g, prefix, smooth_tol):
    windows = []
    for combo in np.ndindex(*(len(g),) * grid.dim):
        vals = np.ones(grid.shape)
        for a, j in enumerate(combo):
            shape = [1] * grid.dim
            shape[a] = grid.points
            vals = vals * g[j].reshape(shape)
        windows.append(PhysTestFn(grid, vals, smooth_tol=smooth_tol,
                                  name=prefix + "".join(map(str, combo))))
    return windows


def compact_partition(grid: TorusGrid, per_axis: int = 2, margin: float = 0.1
                      ) -> list[PhysTestFn]:
    """Squared partition of unity whose windows vanish identically on part of the torus.

    Built from the C-infinity transition ``s(t) = e^{-1/t} / (e^{-1/t} + e^{-1/(1-t)})``;
    not analytic, so the smoothness check is skipped.
    """
    if per_axis != 2:
        raise ValueError("compact_partition supports per_axis=2")
    t = grid.axes[0] / grid.period
    # theta ramps 0 -> pi/2 on [0.25-m, 0.25+m] and back on [0.75-m, 0.75+m]
    ramp = _smooth_step((t - 0.25 + margin) / (2 * margin)) - _smooth_step(
        (t - 0.75 + margin) / (2 * margin))
    theta = np.pi / 2 * ramp
    g = np.stack([np.cos(theta), np.sin(theta)])
    return _tensor_windows(grid, g, "c", None)


def _smooth_step(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1 - t, 1.0)), 0.0)
    return a / (a + b)


def squared_partition_defect(windows: Sequence[PhysTestFn]) -> float:
    total = sum(np.abs(w.samples) ** 2 for w in windows)
    return float(np.max(np.abs(total - 1.0)))


# --- binary cache format ----------------------------------------------------

_MAGIC = b"OSHF"
_HEADER = struct.Struct("<4sIIIId")


def save_field(f: Field, path: str | Path):
    """Write ``f`` as header + little-endian complex64 samples (row-major ``(r, N, ..., N)``)."""
    header = _HEADER.pack(_MAGIC, 1, f.grid.dim, f.grid.points, f.components, f.grid.period)
    data = np.ascontiguousarray(f.samples, dtype="<c8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def load_field(path: str | Path) -> Field:
    raw = Path(path).read_bytes()
    magic, version, d, n, r, period = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise ValueError(f"{path}: not a field cache file")
    grid = TorusGrid(d, n, period)
    data = np.frombuffer(raw, dtype="<c8", offset=_HEADER.size)
    return Field(grid, data.reshape((r,) + grid.shape).astype(complex))
