"""Systems with a characteristic length, their weights and symbols.

A system is ``sum_{l <= |alpha| <= m} eps_n^(|alpha| - l) d^alpha (A_n^alpha u_n) = f_n``
with ``q x r`` coefficient matrices.  Coefficients may carry an affine
perturbation ``A + gamma_n B`` and an extra power ``eps_n^shift``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import Field, PhysTestFn, TorusGrid, dft_forward, dft_inverse, pointwise_mul
from .measures import EmpiricalMeasure, _nonzero, omega_at, parallel_map
from .sequences import ScaleSchedule, SequenceFamily
from .shell import INTERIOR, SIGMA0, SIGMAINF, ShellPoint, ShellTestFn, monomial

TWO_PI_I = 2j * np.pi


@dataclass(frozen=True, eq=False)
class Term:
    alpha: tuple[int, ...]
    A: np.ndarray                     # (q, r) or (q, r, N, ..., N)
    B: np.ndarray | None = None
    gamma: ScaleSchedule | None = None
    power_shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(int(a) for a in self.alpha))
        object.__setattr__(self, "A", np.asarray(self.A, dtype=complex))
        if self.B is not None:
            B = np.asarray(self.B, dtype=complex)
            if B.shape != self.A.shape:
                raise ValueError("perturbation B must have the shape of A")
            if self.gamma is None:
                raise ValueError("perturbation B needs a gamma schedule")
            object.__setattr__(self, "B", B)

    @property
    def order(self) -> int:
        return sum(self.alpha)

    @property
    def is_field(self) -> bool:
        return self.A.ndim > 2

    def coefficient(self, n: int | None = None, eps: float | None = None) -> np.ndarray:
        """``A_n`` at index ``n``; with ``n=None`` the limit coefficient."""
        if n is None:
            return self.A if self.power_shift == 0 else np.zeros_like(self.A)
        A = self.A
        if self.B is not None:
            A = A + self.gamma(n) * self.B
        if self.power_shift:
            A = A * eps**self.power_shift
        return A

    def limit_at(self, x_index=None) -> np.ndarray:
        A = self.coefficient(None)
        if A.ndim > 2:
            if x_index is None:
                raise ValueError("field coefficients need a physical point")
            return A[(slice(None), slice(None)) + tuple(x_index)]
        return A


@dataclass(frozen=True, eq=False)
class SystemDescriptor:
    d: int
    r: int
    q: int
    l: int
    m: int
    terms: tuple[Term, ...]
    eps: ScaleSchedule
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not 0 <= self.l <= self.m:
            raise ValueError("orders must satisfy 0 <= l <= m")
        for t in self.terms:
            if len(t.alpha) != self.d:
                raise ValueError(f"multi-index {t.alpha} does not have length d={self.d}")
            if not self.l <= t.order <= self.m:
                raise ValueError(f"|alpha| = {t.order} outside [{self.l}, {self.m}]")
            if t.A.shape[:2] != (self.q, self.r):
                raise ValueError(f"coefficient shape {t.A.shape[:2]} is not ({self.q}, {self.r})")
            if t.gamma is not None and t.gamma.rule == "power" and t.gamma.p <= 0:
                raise ValueError("perturbation schedules must decrease to zero")

    def reduce_power_shifts(self) -> tuple["SystemDescriptor", float]:
        """Divide by ``eps^delta`` with ``delta = min shift``; returns ``(system, delta)``.

        The right-hand side of the reduced system is ``eps_n^(-delta) f_n``.
        """
        delta = min(t.power_shift for t in self.terms)
        terms = tuple(replace(t, power_shift=t.power_shift - delta) for t in self.terms)
        return replace(self, terms=terms), delta


# --- weights ----------------------------------------------------------------

def _abs_pow(r: np.ndarray, s: float) -> np.ndarray:
    # |xi|^0 := 1, also at the origin
    return np.ones_like(r) if s == 0 else r**s


@dataclass(frozen=True)
class WeightFn:
    kind: str
    l: int
    m: int
    eps: float

    def __call__(self, xi_norm) -> np.ndarray:
        return weight_eval(self, xi_norm)


def weight_eval(w: WeightFn, xi_norm) -> np.ndarray:
    """``k_n = sum_{s=l}^m eps^(s-l) |xi|^s`` or ``h_n = |xi|^l + eps^(m-l) |xi|^m``."""
    r = np.asarray(xi_norm, dtype=float)
    if w.kind == "Kn":
        out = sum(w.eps ** (s - w.l) * _abs_pow(r, s) for s in range(w.l, w.m + 1))
    elif w.kind == "Hn":
        if w.l == w.m:
            out = _abs_pow(r, w.l)
        else:
            out = _abs_pow(r, w.l) + w.eps ** (w.m - w.l) * _abs_pow(r, w.m)
    else:
        raise ValueError(f"unknown weight kind {w.kind!r}")
    return np.asarray(out, dtype=float) * np.ones_like(r)


def weight_equivalence_bounds(l: int, m: int, eps: float, xi_norms) -> tuple[float, float]:
    xi_norms = np.asarray(xi_norms, dtype=float)
    if xi_norms.size == 0:
        raise ValueError("sample must be nonempty")
    ratio = (1 + weight_eval(WeightFn("Hn", l, m, eps), xi_norms)) / (
        1 + weight_eval(WeightFn("Kn", l, m, eps), xi_norms))
    return float(ratio.min()), float(ratio.max())


# --- right-hand side diagnostics --------------------------------------------

def _windowed_coeffs(f: Field, phi: PhysTestFn | None) -> np.ndarray:
    g = f if phi is None else pointwise_mul(phi, f)
    return dft_forward(g).reshape(f.components, -1)


@dataclass
class NormSequence:
    n_list: list[int]
    values: list[float]
    satisfied: bool
    criteria: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"n": self.n_list, "values": self.values, "satisfied": self.satisfied,
                **self.criteria}


def rhs_condition(f_fam: SequenceFamily, phi: PhysTestFn | None, sys: SystemDescriptor,
                  n_list: Sequence[int], ratio_tol: float = 0.2, abs_tol: float = 1e-3,
                  jitter: float = 0.1) -> NormSequence:
    """``|| (phi f_n)^ / (1 + k_n) ||_L2`` along ``n_list``.

    Finite-n proxy for convergence to zero: the last value is below ``abs_tol``,
    or the sequence is non-increasing (up to ``jitter``) and has dropped to
    ``ratio_tol`` of its first value.
    """
    grid = f_fam.grid
    norms = grid.frequency_norms().reshape(-1)

    def one(n):
        c = _windowed_coeffs(f_fam.generate(n), phi)
        k = weight_eval(WeightFn("Kn", sys.l, sys.m, sys.eps(n)), norms)
        return math.sqrt(grid.volume * float(np.sum(np.abs(c / (1 + k)) ** 2)))

    vals = parallel_map(one, list(n_list))
    mono = all(b <= (1 + jitter) * a for a, b in zip(vals, vals[1:]))
    ok = vals[-1] <= abs_tol or (mono and vals[-1] <= ratio_tol * vals[0])
    return NormSequence(list(n_list), vals, bool(ok),
                        {"ratio_tol": ratio_tol, "abs_tol": abs_tol, "jitter": jitter})


@dataclass
class TailReport:
    n_list: list[int]
    r_list: list[float]
    tails: np.ndarray
    tail_limit: float
    tail_ok: bool
    hneg_norms: list[float] | None
    conclusion_holds: bool | None
    counterexample: bool

    def to_dict(self) -> dict:
        return {"n": self.n_list, "r": self.r_list, "tails": self.tails.tolist(),
                "tail_limit": self.tail_limit, "tail_condition": self.tail_ok,
                "h_minus_l_norms": self.hneg_norms, "decay_holds": self.conclusion_holds,
                "counterexample": self.counterexample}


def hminus_norm(f: Field, l: int) -> float:
    c = dft_forward(f).reshape(f.components, -1)
    w = (1 + f.grid.frequency_norms().reshape(-1) ** 2) ** (-l / 2)
    return math.sqrt(f.grid.volume * float(np.sum(np.abs(c * w) ** 2)))


def tail_condition(f_fam: SequenceFamily, sys: SystemDescriptor, r_list: Sequence[float],
                   n_list: Sequence[int], rhs: NormSequence | None = None,
                   phi: PhysTestFn | None = None, tol: float = 1e-6, decay: float = 0.1,
                   tail_count: int = 2) -> TailReport:
    """Tails ``sum_{|xi| >= r/eps_n} |f^/(1 + |xi|^l)|^2`` and the H^{-l} decay they imply.

    When ``rhs`` is given and both conditions hold, the H^{-l} norms must drop
    by ``decay``; a failure is flagged as a counterexample.
    """
    grid = f_fam.grid
    norms = grid.frequency_norms().reshape(-1)
    r_list = sorted(float(r) for r in r_list)
    n_list = list(n_list)

    def one(n):
        f = f_fam.generate(n)
        c = _windowed_coeffs(f, phi)
        energy = grid.volume * np.sum(np.abs(c / (1 + _abs_pow(norms, sys.l))) ** 2, axis=0)
        e = sys.eps(n)
        return [float(energy[norms >= r / e].sum()) for r in r_list], hminus_norm(f, sys.l)

    out = parallel_map(one, n_list)
    tails = np.array([t for t, _ in out]).T
    limit = float(np.max(tails[-1, -tail_count:]))
    ok = limit <= tol
    hneg, holds, counter = None, None, False
    if rhs is not None and rhs.satisfied and ok:
        hneg = [h for _, h in out]
        holds = hneg[-1] <= decay * hneg[0] if hneg[0] > 0 else True
        counter = not holds
    return TailReport(n_list, r_list, tails, limit, ok, hneg, holds, counter)


# --- symbols ----------------------------------------------------------------

@dataclass(frozen=True)
class Regime:
    kind: str
    c: float | None = None

    KINDS = ("P1", "P0", "Pc", "Pinf", "Ppr", "Psc")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown symbol regime {self.kind!r}")
        if self.kind in ("Pc", "Psc") and self.c is None:
            raise ValueError(f"regime {self.kind} needs a value of c")

    @classmethod
    def parse(cls, text: str) -> "Regime":
        m = re.fullmatch(r"\s*(\w+)\s*(?:\(\s*([^)]+)\s*\))?\s*", text)
        if not m:
            raise ValueError(f"cannot parse regime {text!r}")
        c = None
        if m.group(2) is not None:
            c = math.inf if m.group(2) in ("inf", "oo") else float(m.group(2))
        return cls(m.group(1), c)

    def __str__(self):
        return self.kind if self.c is None else f"{self.kind}({self.c:g})"

    @property
    def blind_sphere(self) -> str | None:
        """Sphere the localisation says nothing about (outer for c = 0, inner for c = inf)."""
        if self.kind == "P0" or (self.kind in ("Pc", "Psc") and self.c == 0):
            return SIGMAINF
        if self.kind == "Pinf" or (self.kind in ("Pc", "Psc") and math.isinf(self.c)):
            return SIGMA0
        return None


def _rational_factor(alpha, l, m, sp: ShellPoint) -> complex:
    """``xi^alpha/(|xi|^l + |xi|^m)`` or its sphere limits."""
    order = sum(alpha)
    if sp.kind == INTERIOR:
        x = sp.array
        r = float(np.linalg.norm(x))
        return complex(monomial(x[None], alpha)[0] / (_abs_pow(r, l) + _abs_pow(r, m)))
    e = sp.array[None]
    if l == m:
        return complex(0.5 * monomial(e, alpha)[0])
    keep = order == l if sp.kind == SIGMA0 else order == m
    return complex(monomial(e, alpha)[0]) if keep else 0j


def symbol_eval(sys: SystemDescriptor, regime: Regime | str, x_index, sp: ShellPoint
                ) -> np.ndarray:
    """``q x r`` symbol matrix at a physical point and a shell point."""
    if isinstance(regime, str):
        regime = Regime.parse(regime)
    out = np.zeros((sys.q, sys.r), dtype=complex)
    kind = regime.kind
    if kind == "Psc":
        if sp.kind != INTERIOR:
            raise ValueError("polynomial symbols live on R^d; boundary points are not allowed")
        xi = sp.array[None]
        c = regime.c
        for t in sys.terms:
            if c == 0:
                if t.order != sys.l:
                    continue
                f = TWO_PI_I**sys.l
            elif math.isinf(c):
                if t.order != sys.m:
                    continue
                f = TWO_PI_I**sys.m
            else:
                f = (TWO_PI_I * c) ** t.order
            out += f * monomial(xi, t.alpha)[0] * t.limit_at(x_index)
        return out
    if kind == "Ppr":
        e = sp.direction[None]
        for t in sys.terms:
            if t.order == sys.m:
                out += TWO_PI_I**sys.m * monomial(e, t.alpha)[0] * t.limit_at(x_index)
        return out
    for t in sys.terms:
        if kind == "P0" and t.order != sys.l:
            continue
        if kind == "Pinf" and t.order != sys.m:
            continue
        if kind == "Pc":
            f = (TWO_PI_I * regime.c) ** t.order
        else:
            f = TWO_PI_I**t.order
        out += f * _rational_factor(t.alpha, sys.l, sys.m, sp) * t.limit_at(x_index)
    return out


def symbol_on_lattice(sys: SystemDescriptor, eta: np.ndarray, coeffs: Sequence[np.ndarray]
                      ) -> np.ndarray:
    """P1-type multiplier ``sum (2 pi i)^|a| eta^a/(|eta|^l+|eta|^m) A^a`` at rows of ``eta``.

    Returns shape ``(K, q, r)``; ``coeffs`` are constant matrices per term.
    """
    r = np.linalg.norm(eta, axis=1)
    den = _abs_pow(r, sys.l) + _abs_pow(r, sys.m)
    out = np.zeros((eta.shape[0], sys.q, sys.r), dtype=complex)
    for t, A in zip(sys.terms, coeffs):
        w = TWO_PI_I**t.order * monomial(eta, t.alpha) / den
        out += w[:, None, None] * A[None]
    return out


# --- residuals --------------------------------------------------------------

@dataclass
class ResidualReport:
    n_list: list[int]
    residuals: list[float]
    base_norms: list[float]
    ratios: list[float]
    localised: bool
    tol: float
    zero_mode: list[float]

    def to_dict(self) -> dict:
        return {"n": self.n_list, "residual": self.residuals, "norm": self.base_norms,
                "ratio": self.ratios, "localised": self.localised, "tol": self.tol,
                "zero_mode_energy": self.zero_mode}


def localisation_residual(fam: SequenceFamily, sys: SystemDescriptor, phi: PhysTestFn | None,
                          n_list: Sequence[int], tol: float = 1e-2, omega=None
                          ) -> ResidualReport:
    """``||w_n||`` with ``w_n = sum (2 pi i)^|a| (e xi)^a / (|e xi|^l + |e xi|^m) (A^a phi u_n)^``.

    ``e`` is ``eps_n`` unless another scale ``omega`` is supplied; ``xi = 0`` is skipped.
    """
    if fam.components != sys.r:
        raise ValueError(f"family has {fam.components} components, system expects r={sys.r}")
    grid = fam.grid
    xi, nz = _nonzero(grid)
    scale = sys.eps if omega is None else omega

    def one(n):
        u = fam.generate(n)
        e = omega_at(scale, n)
        eps = sys.eps(n)
        wu = u if phi is None else pointwise_mul(phi, u)
        v = dft_forward(wu).reshape(sys.r, -1)
        base = math.sqrt(grid.volume * float(np.sum(np.abs(v) ** 2)))
        eta = e * xi[nz]
        r = np.linalg.norm(eta, axis=1)
        den = _abs_pow(r, sys.l) + _abs_pow(r, sys.m)
        w = np.zeros((sys.q, int(nz.sum())), dtype=complex)
        for t in sys.terms:
            A = t.coefficient(n, eps)
            if A.ndim > 2:
                prod = np.einsum("qr...,r...->q...", A, wu.samples)
                va = dft_forward(Field(grid, prod)).reshape(sys.q, -1)[:, nz]
            else:
                va = A @ v[:, nz]
            w += (TWO_PI_I**t.order * monomial(eta, t.alpha) / den) * va
        res = math.sqrt(grid.volume * float(np.sum(np.abs(w) ** 2)))
        zero = grid.volume * float(np.sum(np.abs(v[:, 0]) ** 2))
        return res, base, zero

    out = parallel_map(one, list(n_list))
    res = [o[0] for o in out]
    base = [o[1] for o in out]
    ratios = [a / b if b > 0 else 0.0 for a, b in zip(res, base)]
    return ResidualReport(list(n_list), res, base, ratios, ratios[-1] <= tol, tol,
                          [o[2] for o in out])


def _window_peak(grid: TorusGrid, name: str, windows) -> tuple[int, ...] | None:
    for w in windows or ():
        if w.name == name:
            return tuple(int(i) for i in np.unravel_index(np.argmax(np.abs(w.samples)),
                                                          grid.shape))
    return None


@dataclass
class MeasureResidual:
    per_cell: list[float]
    max_residual: float
    total_mass: float
    relative: float
    blind_sphere: str | None = None

    def to_dict(self) -> dict:
        return {"per_phys_cell": self.per_cell, "max": self.max_residual,
                "total_mass": self.total_mass, "relative": self.relative,
                "blind_sphere": self.blind_sphere}


def measure_residual(em: EmpiricalMeasure, sys: SystemDescriptor, regime: Regime | str,
                     psi: ShellTestFn | None = None, windows=None) -> MeasureResidual:
    """Frobenius norm of ``sum_C psi(C) p(C) M_C`` per physical cell.

    Cells are evaluated at their representative shell points; field
    coefficients are frozen at the peak of each window (pass ``windows``).
    For ``c = 0`` or ``c = inf`` the residual is computed anyway; mass on the
    sphere named by ``blind_sphere`` is not constrained and the residual there
    is small for a trivial reason.
    """
    if isinstance(regime, str):
        regime = Regime.parse(regime)
    bins = em.bins
    reps = [bins.representative(c) for c in range(bins.n_cells)]
    weights = [1.0 if psi is None else psi.at(sp) for sp in reps]
    per = []
    for p, name in enumerate(em.window_names):
        x_idx = _window_peak(em.grid, name, windows) if any(t.is_field for t in sys.terms) else None
        acc = np.zeros((sys.q, sys.r), dtype=complex)
        for c, sp in enumerate(reps):
            M = em.mass[p, c]
            if not np.any(M):
                continue
            acc += weights[c] * symbol_eval(sys, regime, x_idx, sp) @ M
        per.append(float(np.linalg.norm(acc)))
    total = em.total()
    mx = max(per) if per else 0.0
    return MeasureResidual(per, mx, total, mx / total if total > 0 else 0.0,
                           regime.blind_sphere)


def apply_system(sys: SystemDescriptor, u: Field, n: int) -> Field:
    """Forward operator ``sum eps_n^(|a|-l) d^a (A_n^a u)``, evaluated spectrally."""
    grid = u.grid
    eps = sys.eps(n)
    xi = grid.frequencies().reshape(grid.dim, -1).T
    out = np.zeros((sys.q, grid.size), dtype=complex)
    for t in sys.terms:
        A = t.coefficient(n, eps)
        if A.ndim > 2:
            prod = np.einsum("qr...,r...->q...", A, u.samples)
        else:
            prod = np.einsum("qr,r...->q...", A, u.samples)
        c = dft_forward(Field(grid, prod)).reshape(sys.q, -1)
        out += eps ** (t.order - sys.l) * (TWO_PI_I**t.order) * monomial(xi, t.alpha) * c
    return dft_inverse(grid, out.reshape((sys.q,) + grid.shape))


# --- constructors and JSON ---------------------------------------------------

def example5_system(a1: float, a2: float, eps: ScaleSchedule) -> SystemDescriptor:
    """``u^i + eps d_{x_i}(a_i u^i) = f^i`` as an (l, m) = (0, 1) system."""
    return SystemDescriptor(
        d=2, r=2, q=2, l=0, m=1, eps=eps, name="relaxation",
        terms=(Term((0, 0), np.eye(2)),
               Term((1, 0), np.diag([a1, 0.0])),
               Term((0, 1), np.diag([0.0, a2]))),
    )


def _parse_matrix(obj, base: Path | None = None) -> np.ndarray:
    if isinstance(obj, dict):
        if "constant" in obj:
            return _parse_matrix(obj["constant"])
        if "field_ref" in obj:
            path = Path(obj["field_ref"])
            if base is not None and not path.is_absolute():
                path = base / path
            return np.load(path)
        if "re" in obj:
            return np.asarray(complex(obj["re"], obj.get("im", 0.0)))
        raise ValueError(f"cannot parse coefficient {obj!r}")
    if isinstance(obj, str):
        return np.asarray(complex(obj.replace(" ", "")))
    if isinstance(obj, list):
        return np.array([_parse_matrix(x) for x in obj], dtype=complex)
    return np.asarray(complex(obj))


def schedule_from_dict(obj) -> ScaleSchedule:
    if isinstance(obj, (int, float)):
        return ScaleSchedule.power(0.0, float(obj))
    rule = obj.get("rule", "power")
    if rule == "power":
        return ScaleSchedule.power(float(obj.get("p", 1.0)), float(obj.get("c", 1.0)),
                                   obj.get("name", ""))
    if rule == "explicit":
        vals = obj["values"]
        if isinstance(vals, dict):
            vals = {int(k): v for k, v in vals.items()}
        return ScaleSchedule.explicit(vals, obj.get("name", ""))
    raise ValueError(f"unknown schedule rule {rule!r}")


def system_from_dict(obj: dict, d: int | None = None, base: Path | None = None
                     ) -> SystemDescriptor:
    terms = []
    for t in obj["terms"]:
        A = _parse_matrix(t["A"], base)
        B = gamma = None
        pert = t.get("perturbation")
        if pert:
            B = _parse_matrix(pert["B"], base)
            gamma = schedule_from_dict(pert["gamma"])
        terms.append(Term(tuple(t["alpha"]), A, B, gamma, float(t.get("power_shift", 0.0))))
    if not terms:
        raise ValueError("system needs at least one term")
    q, r = terms[0].A.shape[:2]
    return SystemDescriptor(
        d=d if d is not None else len(terms[0].alpha), r=r, q=q,
        l=int(obj["l"]), m=int(obj["m"]), terms=tuple(terms),
        eps=schedule_from_dict(obj["eps"]), name=obj.get("name", ""))


def load_system(path: str | Path) -> SystemDescriptor:
    path = Path(path)
    return system_from_dict(json.loads(path.read_text()), base=path.parent)
