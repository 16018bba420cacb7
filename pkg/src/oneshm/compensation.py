"""Quadratic forms on characteristic sets and compactness by compensation.

``Q(x; lam) = lam^* Q(x) lam``.  Characteristic sets are kernels of the
symbol at sampled (physical point, shell point) pairs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import Field, PhysTestFn, TorusGrid, constant_window, partition_of_unity, trig_harmonic
from .measures import (EmpiricalMeasure, _cplx, empirical_measure, extrapolate, oscillatory_index,
                       parallel_map, support_inclusion_check)
from .sequences import RelaxationSystem, ScaleSchedule, SequenceFamily
from .shell import SIGMAINF, ShellBins, ShellPoint
from .symbols import (Regime, SystemDescriptor, example5_system, localisation_residual,
                      measure_residual, rhs_condition, symbol_eval)

log = logging.getLogger(__name__)

KERNEL_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """``r x r`` matrix (constant, or sampled with shape ``(r, r, N, ..., N)``)."""

    Q: np.ndarray
    hermitian_flag: bool | None = None
    name: str = ""

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=complex)
        object.__setattr__(self, "Q", Q)
        Qs = np.swapaxes(Q, 0, 1).conj()
        herm = bool(np.max(np.abs(Q - Qs), initial=0.0) <= 1e-12)
        if self.hermitian_flag and not herm:
            raise ValueError("form declared hermitian but Q* != Q")
        object.__setattr__(self, "hermitian_flag", herm)

    @property
    def r(self) -> int:
        return self.Q.shape[0]

    @property
    def hermitian_part(self) -> np.ndarray:
        return (self.Q + np.swapaxes(self.Q, 0, 1).conj()) / 2

    @property
    def antihermitian_part(self) -> np.ndarray:
        """Hermitian ``K`` with ``Q = H + iK``."""
        return (self.Q - np.swapaxes(self.Q, 0, 1).conj()) / 2j

    def at(self, x_index=None) -> np.ndarray:
        if self.Q.ndim == 2:
            return self.Q
        return self.Q[(slice(None), slice(None)) + tuple(x_index)]

    def value(self, lam: np.ndarray, x_index=None) -> complex:
        lam = np.asarray(lam, dtype=complex)
        return complex(lam.conj() @ self.at(x_index) @ lam)

    def on_field(self, u: Field) -> np.ndarray:
        """Pointwise ``Q(x; u(x))`` on the grid."""
        if self.Q.ndim == 2:
            return np.einsum("i...,ij,j...->...", u.samples.conj(), self.Q, u.samples)
        return np.einsum("i...,ij...,j...->...", u.samples.conj(), self.Q, u.samples)

    def norm(self) -> float:
        Q = self.Q if self.Q.ndim == 2 else np.moveaxis(self.Q, (0, 1), (-2, -1))
        return float(np.max(np.linalg.norm(Q, ord=2, axis=(-2, -1))))


@dataclass
class CharacteristicSample:
    x_index: tuple | None
    point: ShellPoint
    kernel_basis: np.ndarray       # (r, k), orthonormal columns
    rank: int
    singular_values: np.ndarray
    near_threshold: bool
    symbol_norm: float

    @property
    def nullity(self) -> int:
        return self.kernel_basis.shape[1]


def characteristic_kernel(sys: SystemDescriptor, regime: Regime | str, x_index,
                          sp: ShellPoint, rtol: float = KERNEL_RTOL) -> CharacteristicSample:
    """Kernel of the symbol via SVD with a relative singular-value threshold."""
    p = symbol_eval(sys, regime, x_index, sp)
    _, s, vh = np.linalg.svd(p)
    top = float(s[0]) if s.size else 0.0
    if top == 0.0:
        return CharacteristicSample(x_index, sp, np.eye(sys.r, dtype=complex), 0, s, False, 0.0)
    thr = rtol * top
    rank = int(np.sum(s > thr))
    near = bool(np.any((s > thr / 10) & (s < thr * 10)))
    basis = vh[rank:].conj().T
    return CharacteristicSample(x_index, sp, basis, rank, s, near, top)


def shell_samples(bins: ShellBins, x_indices: Sequence = (None,)) -> list[tuple]:
    """Every cell representative paired with every physical sample point."""
    reps = [bins.representative(c) for c in range(bins.n_cells)]
    return [(x, sp) for x in x_indices for sp in reps]


@dataclass
class SignVerdict:
    verdict: str                  # NonnegativeEverywhere | ZeroEverywhere | Indefinite
    witness: dict | None
    n_points: int
    n_nontrivial: int
    near_threshold: list = field(default_factory=list)
    tol: float = 1e-10
    vacuous: bool = False         # c in {0, inf} with l < m: trivial, reported but uninformative

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "witness": self.witness, "points": self.n_points,
                "points_with_kernel": self.n_nontrivial,
                "near_threshold": self.near_threshold, "tol": self.tol,
                "vacuous": self.vacuous}


def form_sign_on_characteristic(Q: QuadraticForm, sys: SystemDescriptor, regime,
                                samples: Sequence[tuple], n_random: int = 20, seed: int = 0,
                                tol: float = 1e-10) -> SignVerdict:
    """Classify ``Q`` on the union of sampled kernels.

    Tests every kernel basis vector and ``n_random`` random unit combinations
    per point.  Values are normalised by ``|lam|^2``.
    """
    rng = np.random.default_rng(seed)
    all_zero, all_nonneg = True, True
    witness = None
    nontrivial = 0
    near = []
    scale = max(Q.norm(), 1e-300)
    for x_idx, sp in samples:
        ks = characteristic_kernel(sys, regime, x_idx, sp)
        if ks.near_threshold:
            near.append({"x": _jsonable(x_idx), "point": _sp_dict(sp)})
        if ks.nullity == 0:
            continue
        nontrivial += 1
        B = ks.kernel_basis
        coeffs = rng.standard_normal((n_random, B.shape[1])) + 1j * rng.standard_normal(
            (n_random, B.shape[1]))
        cands = list(B.T) + [B @ c for c in coeffs]
        for lam in cands:
            lam = lam / np.linalg.norm(lam)
            val = Q.value(lam, x_idx) / scale
            if abs(val) > tol:
                all_zero = False
            bad = val.real < -tol or abs(val.imag) > tol
            if bad:
                all_nonneg = False
                if witness is None:
                    witness = {"x": _jsonable(x_idx), "point": _sp_dict(sp),
                               "lambda": _cplx(lam), "value": [val.real * scale, val.imag * scale]}
    if all_zero:
        verdict = "ZeroEverywhere"
    elif all_nonneg:
        verdict = "NonnegativeEverywhere"
    else:
        verdict = "Indefinite"
    if isinstance(regime, str):
        regime = Regime.parse(regime)
    vacuous = regime.blind_sphere is not None and sys.l < sys.m
    return SignVerdict(verdict, witness, len(samples), nontrivial, near, tol, vacuous)


def _sp_dict(sp: ShellPoint) -> dict:
    return {"kind": sp.kind, "vec": list(sp.vec)}


def _jsonable(x):
    return None if x is None else [int(i) for i in x]


# --- weak-* limits and the compensation check -------------------------------

@dataclass
class WeakStarTrace:
    n_list: list[int]
    values: list[complex]
    limit: complex

    def to_dict(self) -> dict:
        return {"n": self.n_list, "values": [[v.real, v.imag] for v in self.values],
                "limit": [self.limit.real, self.limit.imag]}


def weak_star_limit(Q: QuadraticForm, fam: SequenceFamily, phi: PhysTestFn | None,
                    n_list: Sequence[int], limit_method: str = "last") -> WeakStarTrace:
    """``int phi Q(x; u_n(x)) dx`` by the rectangle rule."""
    grid = fam.grid
    w = np.ones(grid.shape) if phi is None else phi.samples

    def one(n):
        return complex(np.sum(w * Q.on_field(fam.generate(n)))) * grid.cell_volume

    vals = parallel_map(one, list(n_list))
    lim = complex(extrapolate(list(n_list), [np.asarray(v) for v in vals], limit_method))
    return WeakStarTrace(list(n_list), vals, lim)


def phi_dictionary(grid: TorusGrid, windows: Sequence[PhysTestFn] | None = None
                   ) -> list[PhysTestFn]:
    """Windows plus eight low-frequency harmonics."""
    out = list(windows) if windows else [constant_window(grid)]
    if grid.dim == 1:
        ks = [(1,), (2,), (3,), (4,)]
    elif grid.dim == 2:
        ks = [(1, 0), (0, 1), (1, 1), (1, -1)]
    else:
        ks = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 1)]
    for k in ks:
        out.append(trig_harmonic(grid, k, "cos"))
        out.append(trig_harmonic(grid, k, "sin"))
    return out


@dataclass
class CompensationReport:
    verdict: str
    entries: list[dict]
    passed: bool | None
    tol: float
    mass_scale: float

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "entries": self.entries, "passed": self.passed,
                "tol": self.tol, "mass_scale": self.mass_scale}


def compensation_check(Q: QuadraticForm, fam: SequenceFamily, sign: SignVerdict,
                       phis: Sequence[PhysTestFn], n_list: Sequence[int], tol: float = 1e-2,
                       limit_method: str = "last") -> CompensationReport:
    """Compare ``nu(phi) = lim int phi Q(u_n)`` with ``int phi Q(u)`` over a test dictionary."""
    grid = fam.grid
    u = fam.weak_limit()
    Qu = Q.on_field(u)
    last = fam.generate(list(n_list)[-1])
    mass_scale = max(Q.norm() * float(np.sum(np.abs(last.samples) ** 2)) * grid.cell_volume,
                     1e-300)
    entries = []
    ok = True
    for phi in phis:
        nu = weak_star_limit(Q, fam, phi, n_list, limit_method).limit
        ref = complex(np.sum(phi.samples * Qu)) * grid.cell_volume
        bound = tol * mass_scale * phi.sup
        entry = {"phi": phi.name, "nu": [nu.real, nu.imag], "Q_of_limit": [ref.real, ref.imag],
                 "bound": bound}
        if sign.verdict == "ZeroEverywhere":
            entry["pass"] = abs(nu - ref) <= bound
        elif sign.verdict == "NonnegativeEverywhere":
            if np.min(phi.samples.real) >= -1e-14 and np.max(np.abs(phi.samples.imag)) <= 1e-14:
                entry["pass"] = nu.real >= ref.real - bound
            else:
                entry["pass"] = None
        else:
            entry["pass"] = None
        if entry["pass"] is False:
            ok = False
        entries.append(entry)
    passed = None if sign.verdict == "Indefinite" else ok
    return CompensationReport(sign.verdict, entries, passed, tol, mass_scale)


# --- relaxation-system pipeline --------------------------------------------

def example5_form() -> QuadraticForm:
    """``Q(lam) = lam_1 conj(lam_2)`` in the ``lam^* Q lam`` convention."""
    return QuadraticForm(np.array([[0, 0], [1, 0]], dtype=complex), name="l1*conj(l2)")


def example5_pipeline(a1: float, a2: float, eps: ScaleSchedule, forcing: SequenceFamily,
                      grid: TorusGrid, bins: ShellBins, n_list: Sequence[int],
                      windows: Sequence[PhysTestFn] | None = None,
                      phi: PhysTestFn | None = None, omega: ScaleSchedule | None = None,
                      concentration_tol: float = 0.95, offdiag_tol: float = 1e-6,
                      correlation_tol: float = 1e-3, vacuous_share: float = 1e-3) -> dict:
    """Solve, measure and check the localisation and support conclusions.

    The measure uses the characteristic length ``omega = eps`` unless another
    schedule is given.  Checks (i)/(ii) are vacuous when the component carries
    less than ``vacuous_share`` of the trace mass.
    """
    if a1 == 0 or a2 == 0:
        raise ValueError("coefficients must satisfy a1 != 0 and a2 != 0 everywhere")
    n_list = list(n_list)
    omega = eps if omega is None else omega
    windows = list(windows) if windows else [constant_window(grid)]
    fam = RelaxationSystem(grid, (a1, a2), eps, forcing)
    sys = example5_system(a1, a2, eps)
    em = empirical_measure(fam, windows, omega, n_list[-1], bins)
    total = em.total()

    def sphere_cells(direction_vectors):
        dirs = {int(bins.direction_bins(np.asarray(v, dtype=float)[None])[0])
                for v in direction_vectors}
        return [bins.cell_id(SIGMAINF, dbin) for dbin in sorted(dirs)]

    checks = {}
    for label, i, vecs in (("i", 0, [(0, 1), (0, -1)]), ("ii", 1, [(1, 0), (-1, 0)])):
        comp = float(np.real(em.component_total(i)))
        share = comp / total if total > 0 else 0.0
        frac = em.fraction(sphere_cells(vecs), i=i) if comp > 0 else 0.0
        vacuous = share <= vacuous_share
        checks[label] = {"fraction": frac, "component_share": share, "vacuous": vacuous,
                         "tol": concentration_tol,
                         "pass": bool(vacuous or frac >= concentration_tol)}
    off = float(np.max(np.abs(em.mass[:, :, 0, 1]), initial=0.0))
    rel_off = off / total if total > 0 else 0.0
    checks["iii"] = {"max_offdiag_over_total": rel_off, "tol": offdiag_tol,
                     "pass": rel_off <= offdiag_tol}

    weight = np.ones(grid.shape) if phi is None else phi.samples

    def corr(n):
        u = fam.generate(n)
        return abs(complex(np.sum(weight * u.samples[0] * u.samples[1].conj()))) * grid.cell_volume

    corrs = parallel_map(corr, n_list)
    checks["iv"] = {"values": corrs, "tol": correlation_tol, "pass": corrs[-1] <= correlation_tol}

    r_max = (1 - bins.delta) / bins.delta
    osc = oscillatory_index(fam, phi, eps, n_list, [1.0, r_max])
    if osc.oscillatory:
        masses = []
        for n in n_list:
            u1 = fam.generate(n).samples[0]
            masses.append(float(np.sum(np.abs(weight * u1) ** 2)) * grid.cell_volume)
        decays = masses[-1] <= 0.1 * masses[0] if masses[0] > 0 else True
        checks["v"] = {"applies": True, "u1_local_mass": masses, "pass": bool(decays)}
    else:
        checks["v"] = {"applies": False, "pass": True}

    loc = localisation_residual(fam, sys, phi, n_list)
    rhs = rhs_condition(forcing, phi, sys, n_list)
    mres = measure_residual(em, sys, "P1", windows=windows)
    Q = example5_form()
    sign = form_sign_on_characteristic(Q, sys, "P1", shell_samples(bins))
    comp = compensation_check(Q, fam, sign, phi_dictionary(grid, windows), n_list)
    support = support_inclusion_check(em)
    checks["localisation"] = {**loc.to_dict(), "pass": loc.localised}
    checks["rhs_condition"] = rhs.to_dict()
    checks["measure_residual"] = {**mres.to_dict(), "tol": 0.05,
                                  "pass": mres.relative <= 0.05}
    asserted = ["i", "ii", "iii", "iv", "v"]
    return {
        "n": n_list,
        "total_mass": total,
        "sigma_inf_mass": em.kind_mass(SIGMAINF),
        "checks": checks,
        "oscillatory": osc.to_dict(),
        "form_sign": sign.to_dict(),
        "compensation": comp.to_dict(),
        "support_inclusion": support,
        "passed": all(checks[k]["pass"] for k in asserted),
        "measure": em,
    }
