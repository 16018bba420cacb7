"""Fourier multipliers, multiplication operators and their commutators.

Operator norms are estimated by power iteration on ``L^* L``; the adjoints
are explicit (conjugated diagonal in frequency or in space), so no dense matrix
is ever formed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grid import Field, PhysTestFn, TorusGrid, dft_forward, dft_inverse
from .measures import parallel_map
from .shell import ShellTestFn, direction_grid, homogeneous_lift

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MultiplierOp:
    """``A u = (psi(omega xi) u^)``; ``psi`` is a shell function or a plain rule on R^d.

    A shell function is undefined at the origin.  When its inner-sphere values
    are constant (C0 embeddings, constants) it extends continuously and that
    value is used at ``xi = 0``; otherwise the zero mode is annihilated.  A
    plain rule is evaluated at ``xi = 0``.
    """

    psi: ShellTestFn | Callable[[np.ndarray], np.ndarray]
    omega: float = 1.0

    def symbol(self, grid: TorusGrid) -> np.ndarray:
        xi = grid.frequencies().reshape(grid.dim, -1).T * self.omega
        if isinstance(self.psi, ShellTestFn):
            vals = np.zeros(xi.shape[0], dtype=complex)
            nz = np.any(xi != 0, axis=1)
            vals[nz] = self.psi.values(xi[nz])
            origin = origin_value(self.psi)
            if origin is not None:
                vals[~nz] = origin
        else:
            vals = np.asarray(self.psi(xi), dtype=complex).reshape(-1)
        return vals.reshape(grid.shape)

    def sup(self, grid: TorusGrid) -> float:
        return float(np.max(np.abs(self.symbol(grid))))


def origin_value(psi: ShellTestFn) -> complex | None:
    """Continuous extension to ``xi = 0`` if ``psi0`` is constant, else ``None``."""
    v = np.asarray(psi.psi0(direction_grid(psi.dim)), dtype=complex).reshape(-1)
    if np.max(np.abs(v - v[0])) <= psi.compat_tol:
        return complex(v[0])
    return None


def apply_multiplier(op: MultiplierOp, u: Field, symbol: np.ndarray | None = None) -> Field:
    s = op.symbol(u.grid) if symbol is None else symbol
    c = dft_forward(u)
    if isinstance(op.psi, ShellTestFn) and origin_value(op.psi) is None:
        zero = u.grid.volume * float(np.sum(np.abs(c[(slice(None),) + (0,) * u.grid.dim]) ** 2))
        if zero > 0:
            log.debug("multiplier annihilated zero-mode energy %.3e", zero)
    return dft_inverse(u.grid, c * s[None])


@dataclass(frozen=True, eq=False)
class LinearMap:
    """A bounded operator on fields with an explicit adjoint."""

    apply: Callable[[Field], Field]
    adjoint: Callable[[Field], Field]
    name: str = ""

    def __call__(self, u: Field) -> Field:
        return self.apply(u)

    def __sub__(self, other: "LinearMap") -> "LinearMap":
        return LinearMap(lambda u: self.apply(u) - other.apply(u),
                         lambda u: self.adjoint(u) - other.adjoint(u),
                         f"({self.name} - {other.name})")

    def __add__(self, other: "LinearMap") -> "LinearMap":
        return LinearMap(lambda u: self.apply(u) + other.apply(u),
                         lambda u: self.adjoint(u) + other.adjoint(u),
                         f"({self.name} + {other.name})")

    def __matmul__(self, other: "LinearMap") -> "LinearMap":
        return LinearMap(lambda u: self.apply(other.apply(u)),
                         lambda u: other.adjoint(self.adjoint(u)),
                         f"{self.name}{other.name}")

    @property
    def H(self) -> "LinearMap":
        return LinearMap(self.adjoint, self.apply, f"{self.name}*")


def identity_map() -> LinearMap:
    return LinearMap(lambda u: u, lambda u: u, "I")


def zero_map() -> LinearMap:
    z = lambda u: u * 0.0  # noqa: E731
    return LinearMap(z, z, "0")


def multiplication_map(phi: PhysTestFn) -> LinearMap:
    s, sc = phi.samples[None], phi.samples.conj()[None]
    return LinearMap(lambda u: Field(u.grid, s * u.samples),
                     lambda u: Field(u.grid, sc * u.samples), f"B[{phi.name}]")


def multiplier_map(op: MultiplierOp, grid: TorusGrid) -> LinearMap:
    s = op.symbol(grid)
    sc = s.conj()

    def fwd(u):
        return dft_inverse(u.grid, dft_forward(u) * s[None])

    def adj(u):
        return dft_inverse(u.grid, dft_forward(u) * sc[None])

    return LinearMap(fwd, adj, "A")


def commutator_map(phi: PhysTestFn, op: MultiplierOp) -> LinearMap:
    """``C = B_phi A - A B_phi`` with ``C^* = A^* B_conj(phi) - B_conj(phi) A^*``."""
    B = multiplication_map(phi)
    A = multiplier_map(op, phi.grid)
    C = B @ A - A @ B
    return LinearMap(C.apply, C.adjoint, f"[B,A]")


def commutator_apply(phi: PhysTestFn, op: MultiplierOp, u: Field) -> Field:
    Au = apply_multiplier(op, u)
    return Field(u.grid, phi.samples[None] * Au.samples) - apply_multiplier(
        op, Field(u.grid, phi.samples[None] * u.samples))


def _norm(u: Field) -> float:
    return math.sqrt(float(np.sum(np.abs(u.samples) ** 2)))


def op_norm_estimate(L: LinearMap, grid: TorusGrid, components: int = 1, probes: int = 4,
                     iters: int = 50, seed: int = 0, rtol: float = 0.0,
                     method: str = "power") -> float:
    """Estimate ``||L||`` from the normal operator ``L^* L``.

    ``method="power"`` runs power iteration from ``probes`` random starts and
    returns the best ``||L x||`` (a lower bound; ``rtol > 0`` stops a probe
    early).  ``method="lanczos"`` hands ``L^* L`` to ARPACK instead, which
    converges much faster when the top of the spectrum is clustered.
    """
    if probes < 1 or iters < 1:
        raise ValueError("probes and iters must be positive")
    rng = np.random.default_rng(seed)
    shape = (components,) + grid.shape
    if method == "lanczos":
        return _lanczos_norm(L, grid, shape, rng)
    if method != "power":
        raise ValueError(f"unknown method {method!r}")
    starts = [rng.standard_normal(shape) + 1j * rng.standard_normal(shape) for _ in range(probes)]

    def run(x0):
        x = Field(grid, x0)
        x = x * (1.0 / _norm(x))
        est = 0.0
        for _ in range(iters):
            y = L.apply(x)
            new = _norm(y)
            z = L.adjoint(y)
            nz = _norm(z)
            if nz == 0.0:
                return new
            x = z * (1.0 / nz)
            if rtol and abs(new - est) <= rtol * new:
                est = new
                break
            est = new
        return max(est, _norm(L.apply(x)))

    return float(max(parallel_map(run, starts)))


def _lanczos_norm(L: LinearMap, grid: TorusGrid, shape, rng) -> float:
    from scipy.sparse.linalg import LinearOperator, eigsh

    size = int(np.prod(shape))

    def normal(v):
        f = Field(grid, np.asarray(v).reshape(shape))
        return L.adjoint(L.apply(f)).samples.reshape(-1)

    op = LinearOperator((size, size), matvec=normal, dtype=complex)
    v0 = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    top = eigsh(op, k=1, which="LM", v0=v0, return_eigenvectors=False, tol=1e-10)
    return float(math.sqrt(max(float(np.real(top[0])), 0.0)))


# --- experiments ------------------------------------------------------------

@dataclass
class DecayCurve:
    xs: list[float]
    norms: list[float]
    ratio: float
    monotone: bool
    decaying: bool
    ratio_tol: float
    jitter: float

    def to_dict(self) -> dict:
        return {"x": self.xs, "norm": self.norms, "final_over_initial": self.ratio,
                "non_increasing": self.monotone, "decaying": self.decaying,
                "ratio_tol": self.ratio_tol, "jitter": self.jitter}


def _verdict(xs, norms, ratio_tol, jitter, need_monotone=True) -> DecayCurve:
    first = norms[0]
    ratio = norms[-1] / first if first > 0 else 0.0
    mono = all(b <= (1 + jitter) * a for a, b in zip(norms, norms[1:]))
    ok = ratio <= ratio_tol and (mono or not need_monotone)
    return DecayCurve(list(xs), list(norms), ratio, mono, ok, ratio_tol, jitter)


def commutation_decay_experiment(phi: PhysTestFn, psi, omegas: Sequence[float],
                                 probes: int = 4, iters: int = 50, seed: int = 0,
                                 ratio_tol: float = 0.2, jitter: float = 0.1) -> DecayCurve:
    """``||[B_phi, A_psi(omega .)]||`` along a decreasing list of ``omega``."""
    omegas = list(omegas)
    if any(b >= a for a, b in zip(omegas, omegas[1:])):
        raise ValueError("omega list must be decreasing")
    norms = [op_norm_estimate(commutator_map(phi, MultiplierOp(psi, w)), phi.grid,
                              probes=probes, iters=iters, seed=seed) for w in omegas]
    return _verdict(omegas, norms, ratio_tol, jitter)


def split_commutator(phi: PhysTestFn, psi: ShellTestFn, omega: float
                 ) -> tuple[LinearMap, LinearMap, LinearMap]:
    """``(C, C_tilde, K)`` with ``C = [B, A_psi]``, ``C_tilde = [B, A_{psi - psi0 o pi}]``
    and ``K = [B, A_{psi0 o pi}]``; ``C = C_tilde + K`` by linearity."""
    hom = homogeneous_lift(psi.psi0, psi.dim, name="psi0∘π")

    def rest(x):
        xn = np.asarray(x, dtype=float)
        return psi.interior(xn) - hom.interior(xn)

    C = commutator_map(phi, MultiplierOp(psi, omega))
    K = commutator_map(phi, MultiplierOp(hom, omega))
    # zero-mode symbol chosen so that C = C_tilde + K holds exactly
    origin = (MultiplierOp(psi).symbol(phi.grid).reshape(-1)[0]
              - MultiplierOp(hom).symbol(phi.grid).reshape(-1)[0])
    C_tilde = commutator_map(phi, MultiplierOp(_plain_on_nonzero(rest, origin), omega))
    return C, C_tilde, K


def _plain_on_nonzero(rule, origin=0.0):
    def f(x):
        out = np.full(x.shape[0], origin, dtype=complex)
        nz = np.any(x != 0, axis=1)
        out[nz] = rule(x[nz])
        return out
    return f


def windowed_wave_probes(window: PhysTestFn, k: Sequence[int], freqs: Sequence[int]
                         ) -> list[Field]:
    """Unit-norm fields ``window * exp(2 pi i q k.x)`` for each ``q``."""
    grid = window.grid
    x = grid.coordinates()
    out = []
    for q in freqs:
        phase = 2 * np.pi * q * np.tensordot(np.asarray(k, dtype=float), x, axes=1) / grid.period
        f = Field(grid, window.samples * np.exp(1j * phase))
        out.append(f * (1.0 / _norm(f)))
    return out


def compactness_probe(K: LinearMap, probes: Sequence[Field], ratio_tol: float = 0.2
                      ) -> DecayCurve:
    """``||K e_n||`` on a weakly-null probe family; compact maps send it to zero."""
    norms = [_norm(K.apply(e)) / _norm(e) for e in probes]
    return _verdict(list(range(len(probes))), norms, ratio_tol, math.inf, need_monotone=False)
