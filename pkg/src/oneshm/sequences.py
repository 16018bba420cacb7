"""Parametric model sequences with closed-form weak limits.

Every family is a small frozen dataclass with ``generate(n) -> Field``.  The
oscillating families round their exponents to integers so each wave is an exact
lattice mode; the rounding is stored in ``Field.meta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import Field, PhysTestFn, TorusGrid, dft_forward, dft_inverse

_ROUND_EPS = 1e-9


class AliasingError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleSchedule:
    """Positive sequence indexed by ``n``: ``c * n^(-p)`` or explicit values."""

    rule: str = "power"
    p: float = 1.0
    c: float = 1.0
    values: tuple[tuple[int, float], ...] = ()
    name: str = ""

    def __post_init__(self):
        if self.rule == "power":
            if self.c <= 0:
                raise ValueError("power schedule needs c > 0")
        elif self.rule == "explicit":
            vals = tuple((int(n), float(v)) for n, v in self.values)
            if not vals:
                raise ValueError("explicit schedule needs at least one value")
            if any(v <= 0 for _, v in vals):
                raise ValueError("schedule values must be positive")
            object.__setattr__(self, "values", tuple(sorted(vals)))
        else:
            raise ValueError(f"unknown schedule rule {self.rule!r}")
        if not self.name:
            object.__setattr__(self, "name", self._default_name())

    @classmethod
    def power(cls, p: float, c: float = 1.0, name: str = "") -> "ScaleSchedule":
        return cls("power", p, c, name=name)

    @classmethod
    def explicit(cls, mapping, name: str = "") -> "ScaleSchedule":
        items = mapping.items() if isinstance(mapping, dict) else mapping
        return cls("explicit", values=tuple(items), name=name)

    def _default_name(self) -> str:
        if self.rule == "power":
            pre = "" if self.c == 1 else f"{self.c:g}*"
            return f"{pre}n^-{self.p:g}"
        return "explicit"

    def __call__(self, n: int) -> float:
        if self.rule == "power":
            return self.c * float(n) ** (-self.p)
        table = dict(self.values)
        if n not in table:
            raise KeyError(f"explicit schedule {self.name!r} has no value for n={n}")
        return table[n]

    def to_dict(self) -> dict:
        if self.rule == "power":
            return {"rule": "power", "p": self.p, "c": self.c}
        return {"rule": "explicit", "values": {str(n): v for n, v in self.values}}


def int_exponent(x: float) -> int:
    """``floor(x)`` robust against ``n**alpha`` landing a hair below an integer."""
    return int(math.floor(x + _ROUND_EPS))


def _plane(grid: TorusGrid, xi: np.ndarray) -> np.ndarray:
    x = grid.coordinates()
    return np.exp(2j * np.pi * np.tensordot(xi, x, axes=1))


def _check_alias(grid: TorusGrid, xi: np.ndarray, what: str):
    mag = float(np.linalg.norm(xi))
    if mag > grid.headroom + 1e-12:
        raise AliasingError(
            f"{what}: frequency {tuple(float(c) for c in xi)} has |xi| = {mag:g} beyond the N/4 = "
            f"{grid.headroom:g} headroom; refine the grid"
        )


class SequenceFamily:
    """Base class; subclasses are frozen dataclasses with ``grid`` and ``generate``."""

    grid: TorusGrid
    kind = "custom"

    @property
    def components(self) -> int:
        raise NotImplementedError

    def generate(self, n: int) -> Field:
        raise NotImplementedError

    @property
    def limit_known(self) -> bool:
        return True

    def weak_limit(self) -> Field:
        """Closed-form weak limit; zero unless overridden."""
        return Field.zeros(self.grid, self.components)

    @property
    def weakly_null(self) -> bool:
        if not self.limit_known:
            return False
        return not np.any(self.weak_limit().samples)

    def describe(self) -> dict:
        return {"kind": self.kind}


def generate(fam: SequenceFamily, n: int) -> Field:
    if n < 1:
        raise ValueError("n must be a positive integer")
    return fam.generate(n)


@dataclass(frozen=True, eq=False)
class PlaneWave(SequenceFamily):
    """``amp_n * window(x) * exp(2 pi i floor(scale n^alpha) k.x)``.

    ``real=True`` replaces the exponential by ``cos``.
    """

    grid: TorusGrid
    k: tuple[int, ...]
    alpha: float = 1.0
    scale: float = 1.0
    amplitude: ScaleSchedule | None = None
    window: PhysTestFn | None = None
    real: bool = False
    kind = "plane_wave"

    def __post_init__(self):
        if len(self.k) != self.grid.dim:
            raise ValueError("wave vector dimension does not match the grid")
        if not any(self.k):
            raise ValueError("wave vector must be nonzero")

    @property
    def components(self) -> int:
        return 1

    def frequency(self, n: int) -> np.ndarray:
        q = int_exponent(self.scale * n**self.alpha)
        return q * np.asarray(self.k, dtype=float) / self.grid.period

    def generate(self, n: int) -> Field:
        exponent = self.scale * n**self.alpha
        xi = self.frequency(n)
        _check_alias(self.grid, xi, f"{self.kind} n={n}")
        wave = _plane(self.grid, xi)
        if self.real:
            wave = wave.real.astype(complex)
        if self.window is not None:
            wave = wave * self.window.samples
        amp = self.amplitude(n) if self.amplitude is not None else 1.0
        meta = {"n": n, "exponent": exponent, "rounded": int_exponent(exponent),
                "frequency": xi.tolist()}
        return Field(self.grid, amp * wave[None], meta)

    def weak_limit(self) -> Field:
        if self.alpha == 0 and self.amplitude is None:
            return self.generate(1)
        return Field.zeros(self.grid, 1)

    def describe(self) -> dict:
        return {"kind": self.kind, "k": list(self.k), "alpha": self.alpha, "scale": self.scale}


@dataclass(frozen=True, eq=False)
class TwoScaleSum(SequenceFamily):
    """``exp(2 pi i floor(n^alpha) k.x) + exp(2 pi i floor(n^beta) s.x)``."""

    grid: TorusGrid
    alpha: float
    beta: float
    k: tuple[int, ...]
    s: tuple[int, ...]
    kind = "two_scale_sum"

    @property
    def components(self) -> int:
        return 1

    def generate(self, n: int) -> Field:
        a = PlaneWave(self.grid, self.k, self.alpha).generate(n)
        b = PlaneWave(self.grid, self.s, self.beta).generate(n)
        return Field(self.grid, a.samples + b.samples,
                     {"n": n, "first": a.meta, "second": b.meta})

    def describe(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "beta": self.beta,
                "k": list(self.k), "s": list(self.s)}


def gaussian_profile(y: np.ndarray) -> np.ndarray:
    """L2-normalised Gaussian ``2^(d/4) exp(-pi |y|^2)``; ``y`` has shape ``(d, ...)``."""
    d = y.shape[0]
    return 2 ** (d / 4) * np.exp(-np.pi * np.sum(y**2, axis=0))


@dataclass(frozen=True, eq=False)
class Concentration(SequenceFamily):
    """``eps_n^(-d/2) profile((x - x0)/eps_n)`` with minimum-image periodic wrap."""

    grid: TorusGrid
    eps: ScaleSchedule
    x0: tuple[float, ...]
    profile: Callable[[np.ndarray], np.ndarray] = gaussian_profile
    min_cells: float = 4.0
    kind = "concentration"

    @property
    def components(self) -> int:
        return 1

    def generate(self, n: int) -> Field:
        eps = self.eps(n)
        if eps * self.grid.points / self.grid.period < self.min_cells:
            raise ValueError(
                f"under-resolved concentration: width {eps:g} spans fewer than "
                f"{self.min_cells:g} grid cells at n={n}"
            )
        x = self.grid.coordinates()
        P = self.grid.period
        disp = np.stack([(x[a] - self.x0[a] + P / 2) % P - P / 2 for a in range(self.grid.dim)])
        vals = eps ** (-self.grid.dim / 2) * self.profile(disp / eps)
        return Field(self.grid, vals[None], {"n": n, "eps": eps})

    def describe(self) -> dict:
        return {"kind": self.kind, "eps": self.eps.to_dict(), "x0": list(self.x0)}


@dataclass(frozen=True, eq=False)
class ModulatedOscillation(SequenceFamily):
    """``window(x) exp(2 pi i floor(1/eps_n) k.x)``."""

    grid: TorusGrid
    eps: ScaleSchedule
    k: tuple[int, ...]
    window: PhysTestFn
    kind = "modulated"

    @property
    def components(self) -> int:
        return 1

    def generate(self, n: int) -> Field:
        q = int_exponent(1.0 / self.eps(n))
        xi = q * np.asarray(self.k, dtype=float) / self.grid.period
        _check_alias(self.grid, xi, f"{self.kind} n={n}")
        vals = self.window.samples * _plane(self.grid, xi)
        return Field(self.grid, vals[None], {"n": n, "rounded": q})

    def describe(self) -> dict:
        return {"kind": self.kind, "eps": self.eps.to_dict(), "k": list(self.k)}


def solve_relaxation_system(a: Sequence[float], eps: float, f: Field) -> Field:
    """Solve ``u_i + eps d_{x_i}(a_i u_i) = f_i`` (i = 1, 2) spectrally.

    Coefficients are constant, so ``u_i^ = f_i^ / (1 + 2 pi i eps a_i xi_i)``.
    """
    if f.grid.dim != 2 or f.components != 2:
        raise ValueError("the relaxation system needs d = 2 and r = 2")
    xi = f.grid.frequencies()
    c = dft_forward(f)
    denom = np.stack([1 + 2j * np.pi * eps * a[i] * xi[i] for i in range(2)])
    if np.any(denom == 0):
        raise ValueError("relaxation symbol vanishes on the lattice")
    u = dft_inverse(f.grid, c / denom)
    return Field(f.grid, u.samples, {**f.meta, "eps": eps, "a": list(a)})


def relaxation_lhs(a: Sequence[float], eps: float, u: Field) -> Field:
    """Apply ``u_i + eps d_{x_i}(a_i u_i)`` spectrally (constant coefficients)."""
    xi = u.grid.frequencies()
    c = dft_forward(u)
    mult = np.stack([1 + 2j * np.pi * eps * a[i] * xi[i] for i in range(2)])
    return dft_inverse(u.grid, c * mult)


@dataclass(frozen=True, eq=False)
class RelaxationSystem(SequenceFamily):
    """Solutions of the two-component relaxation system driven by ``forcing``."""

    grid: TorusGrid
    a: tuple[float, float]
    eps: ScaleSchedule
    forcing: SequenceFamily
    kind = "relaxation"

    def __post_init__(self):
        if self.forcing.components != 2:
            raise ValueError("relaxation forcing must have two components")

    @property
    def components(self) -> int:
        return 2

    def generate(self, n: int) -> Field:
        return solve_relaxation_system(self.a, self.eps(n), self.forcing.generate(n))

    @property
    def limit_known(self) -> bool:
        return self.forcing.weakly_null

    def weak_limit(self) -> Field:
        if not self.forcing.weakly_null:
            raise ValueError("weak limit of the relaxation family is only known for null forcing")
        return Field.zeros(self.grid, 2)

    def describe(self) -> dict:
        return {"kind": self.kind, "a": list(self.a), "eps": self.eps.to_dict(),
                "forcing": self.forcing.describe()}


@dataclass(frozen=True, eq=False)
class Custom(SequenceFamily):
    """User-supplied generator ``fn(n) -> samples or Field``."""

    grid: TorusGrid
    fn: Callable[[int], object]
    r: int = 1
    limit: Callable[[], Field] | None = None
    known: bool = True
    label: str = "custom"

    @property
    def kind(self):
        return self.label

    @property
    def components(self) -> int:
        return self.r

    def generate(self, n: int) -> Field:
        out = self.fn(n)
        if isinstance(out, Field):
            return out
        return Field(self.grid, np.asarray(out), {"n": n})

    @property
    def limit_known(self) -> bool:
        return self.known

    def weak_limit(self) -> Field:
        if not self.known:
            raise ValueError(f"family {self.label!r} has no closed-form weak limit")
        return self.limit() if self.limit is not None else Field.zeros(self.grid, self.r)


@dataclass(frozen=True, eq=False)
class Stack(SequenceFamily):
    """Concatenate the components of several families."""

    parts: tuple[SequenceFamily, ...]
    kind = "stack"

    @property
    def grid(self):
        return self.parts[0].grid

    @property
    def components(self) -> int:
        return sum(p.components for p in self.parts)

    def generate(self, n: int) -> Field:
        fields = [p.generate(n) for p in self.parts]
        return Field(self.grid, np.concatenate([f.samples for f in fields]),
                     {"n": n, "parts": [f.meta for f in fields]})

    @property
    def limit_known(self) -> bool:
        return all(p.limit_known for p in self.parts)

    def weak_limit(self) -> Field:
        return Field(self.grid, np.concatenate([p.weak_limit().samples for p in self.parts]))

    def describe(self) -> dict:
        return {"kind": self.kind, "parts": [p.describe() for p in self.parts]}


def zero_family(grid: TorusGrid, r: int = 1) -> SequenceFamily:
    return Custom(grid, lambda n: np.zeros((r,) + grid.shape, dtype=complex), r, label="zero")


@dataclass(frozen=True, eq=False)
class Scaled(SequenceFamily):
    """``gamma_n * base_n``."""

    base: SequenceFamily
    gamma: ScaleSchedule
    kind = "scaled"

    @property
    def grid(self):
        return self.base.grid

    @property
    def components(self) -> int:
        return self.base.components

    def generate(self, n: int) -> Field:
        f = self.base.generate(n)
        return Field(self.grid, self.gamma(n) * f.samples, f.meta)

    @property
    def limit_known(self) -> bool:
        return self.base.limit_known

    def weak_limit(self) -> Field:
        # gamma_n -> 0 for decreasing power schedules
        if self.gamma.rule == "power" and self.gamma.p > 0:
            return Field.zeros(self.grid, self.components)
        raise ValueError("weak limit of a scaled family needs a vanishing power schedule")


@dataclass(frozen=True, eq=False)
class Sum(SequenceFamily):
    parts: tuple[SequenceFamily, ...]
    kind = "sum"

    @property
    def grid(self):
        return self.parts[0].grid

    @property
    def components(self) -> int:
        return self.parts[0].components

    def generate(self, n: int) -> Field:
        out = self.parts[0].generate(n).samples.copy()
        for p in self.parts[1:]:
            out += p.generate(n).samples
        return Field(self.grid, out, {"n": n})

    @property
    def limit_known(self) -> bool:
        return all(p.limit_known for p in self.parts)

    def weak_limit(self) -> Field:
        return Field(self.grid, sum(p.weak_limit().samples for p in self.parts))


@dataclass(frozen=True, eq=False)
class Centered(SequenceFamily):
    base: SequenceFamily
    kind = "centered"

    @property
    def grid(self):
        return self.base.grid

    @property
    def components(self) -> int:
        return self.base.components

    def generate(self, n: int) -> Field:
        f = self.base.generate(n)
        return Field(self.grid, f.samples - self._limit.samples, f.meta)

    @property
    def _limit(self) -> Field:
        return self.base.weak_limit()

    def describe(self) -> dict:
        return {"kind": self.kind, "base": self.base.describe()}


def center_sequence(fam: SequenceFamily) -> SequenceFamily:
    """Subtract the closed-form weak limit; null families are returned unchanged."""
    if not fam.limit_known:
        raise ValueError(
            "the family's weak limit is unknown; supply a closed-form limit "
            "(Custom(limit=...)) before centering"
        )
    if fam.weakly_null:
        return fam
    return Centered(fam)


def band_limited_real(grid: TorusGrid, seed: int, band: int | None = None) -> Field:
    """Random real field whose spectrum sits inside ``|xi| <= band`` (default N/4)."""
    band = grid.headroom if band is None else band
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    c[grid.frequency_norms() > band] = 0
    f = dft_inverse(grid, c)
    return Field(grid, f.samples.real.astype(complex))
