"""Empirical one-scale pairings and histogram measures on (torus x shell).

All sums run over the nonzero lattice frequencies; the energy of the zero mode
is reported separately.  With ``v = (phi u)^`` the cell mass is the hermitian
matrix ``sum v v^*`` (row index from ``phi_1 u``, column index from the
conjugated ``phi_2 u``), scaled by the torus volume so that the total equals
the physical L2 mass.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import Field, PhysTestFn, TorusGrid, dft_forward, pointwise_mul, squared_partition_defect
from .sequences import ScaleSchedule, SequenceFamily, center_sequence
from .shell import INTERIOR, SIGMA0, SIGMAINF, ShellBins, ShellTestFn, compactify_radius

log = logging.getLogger(__name__)

PARTITION_TOL = 1e-10


def n_threads() -> int:
    env = os.environ.get("ONESHM_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def parallel_map(fn: Callable, items: Sequence):
    items = list(items)
    workers = min(n_threads(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def omega_at(omega, n: int) -> float:
    return float(omega(n)) if callable(omega) else float(omega)


def _nonzero(grid: TorusGrid):
    """Flat frequency array of shape ``(K, d)`` and the mask of nonzero modes."""
    xi = grid.frequencies().reshape(grid.dim, -1).T
    mask = np.any(xi != 0, axis=1)
    return xi, mask


def _coeffs(phi: PhysTestFn | None, u: Field) -> np.ndarray:
    w = u if phi is None else pointwise_mul(phi, u)
    return dft_forward(w).reshape(u.components, -1)


# --- pairings ---------------------------------------------------------------

@dataclass
class PairingTrace:
    n_list: list[int]
    values: list[np.ndarray]
    zero_modes: list[np.ndarray]
    limit_method: str = "last"
    order: float = 1.0
    limit_estimate: np.ndarray = field(init=False)

    def __post_init__(self):
        self.limit_estimate = extrapolate(self.n_list, self.values, self.limit_method, self.order)

    @property
    def limit(self) -> np.ndarray:
        return self.limit_estimate

    def scalar(self) -> complex:
        """Trace of the limit estimate."""
        return complex(np.trace(self.limit_estimate))

    def to_dict(self) -> dict:
        return {"n": list(self.n_list), "values": [_cplx(v) for v in self.values],
                "zero_mode": [_cplx(v) for v in self.zero_modes],
                "limit": _cplx(self.limit_estimate), "limit_method": self.limit_method}


def extrapolate(n_list, values, method: str = "last", order: float = 1.0) -> np.ndarray:
    """LastValue, or Richardson on a ratio-2 geometric schedule assuming ``O(n^-order)`` error."""
    if method == "last":
        return np.array(values[-1])
    if method != "richardson":
        raise ValueError(f"unknown limit method {method!r}")
    if len(values) < 2:
        return np.array(values[-1])
    n1, n2 = n_list[-2], n_list[-1]
    if n2 != 2 * n1:
        raise ValueError("Richardson extrapolation needs a doubling n schedule")
    w = 2.0**order
    return (w * np.asarray(values[-1]) - np.asarray(values[-2])) / (w - 1)


def pairing_at(u: Field, phi1: PhysTestFn | None, phi2: PhysTestFn | None,
               psi: ShellTestFn, omega: float) -> tuple[np.ndarray, np.ndarray]:
    """``(M, zero)`` for one field: ``M = V sum_{xi != 0} v1 v2^* psi(omega xi)``."""
    grid = u.grid
    xi, nz = _nonzero(grid)
    v1 = _coeffs(phi1, u)
    v2 = v1 if phi2 is phi1 else _coeffs(phi2, u)
    weights = np.zeros(xi.shape[0], dtype=complex)
    weights[nz] = psi.values(omega * xi[nz])
    M = grid.volume * (v1 * weights) @ v2.conj().T
    zero = grid.volume * np.outer(v1[:, 0], v2[:, 0].conj())
    return M, zero


def pairing(fam: SequenceFamily, phi1: PhysTestFn | None, phi2: PhysTestFn | None,
            psi: ShellTestFn, omega, n_list: Sequence[int], limit_method: str = "last",
            order: float = 1.0) -> PairingTrace:
    """Evaluate the defining one-scale pairing along ``n_list``.

    ``phi = None`` means the constant window 1.  The family must be weakly null
    (see :func:`center_sequence`).
    """
    _require_null(fam)
    n_list = _check_n_list(n_list)

    def one(n):
        return pairing_at(fam.generate(n), phi1, phi2, psi, omega_at(omega, n))

    out = parallel_map(one, n_list)
    return PairingTrace(n_list, [m for m, _ in out], [z for _, z in out], limit_method, order)


def _require_null(fam: SequenceFamily):
    if not fam.weakly_null:
        raise ValueError(
            "the family is not weakly null; apply center_sequence() before measuring"
        )


def _check_n_list(n_list) -> list[int]:
    n_list = [int(n) for n in n_list]
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be a nonempty increasing sequence")
    return n_list


# --- histogram measures -----------------------------------------------------

@dataclass
class EmpiricalMeasure:
    """Cell masses of shape ``(P, n_cells, r, r)`` for P windows."""

    grid: TorusGrid
    bins: ShellBins
    window_names: list[str]
    mass: np.ndarray
    zero_mode_mass: np.ndarray
    n_used: int
    omega_used: float
    real_input: bool = False
    window_masses: np.ndarray | None = None

    @property
    def r(self) -> int:
        return self.mass.shape[-1]

    @property
    def n_windows(self) -> int:
        return self.mass.shape[0]

    def cell_traces(self) -> np.ndarray:
        """Trace per (window, cell), shape ``(P, n_cells)``."""
        return np.real(np.einsum("pcii->pc", self.mass))

    def shell_traces(self) -> np.ndarray:
        return self.cell_traces().sum(axis=0)

    def total(self) -> float:
        return float(self.cell_traces().sum())

    def component_total(self, i: int, j: int | None = None) -> complex:
        j = i if j is None else j
        return complex(self.mass[:, :, i, j].sum())

    def fraction(self, cells: Sequence[int], i: int | None = None) -> float:
        """Share of the (trace or ``ii``-component) mass carried by ``cells``."""
        if i is None:
            per = self.shell_traces()
        else:
            per = np.real(self.mass[:, :, i, i]).sum(axis=0)
        tot = per.sum()
        return float(per[list(cells)].sum() / tot) if tot > 0 else 0.0

    def kind_mass(self, kind: str) -> float:
        kinds = self.bins.kinds()
        return float(self.shell_traces()[kinds == kind].sum())

    def dominant_cell(self) -> int:
        return int(np.argmax(self.shell_traces()))

    def bookkeeping_error(self) -> float:
        """Relative gap between binned + zero-mode mass and the windowed Parseval masses."""
        ref = float(np.sum(self.window_masses)) if self.window_masses is not None else 0.0
        got = self.total() + float(np.real(np.trace(self.zero_mode_mass)))
        return abs(got - ref) / ref if ref > 0 else abs(got)

    def hermitian_defect(self) -> float:
        return float(np.max(np.abs(self.mass - np.conj(np.swapaxes(self.mass, -1, -2))),
                            initial=0.0))

    def min_eigenvalue(self) -> float:
        herm = (self.mass + np.conj(np.swapaxes(self.mass, -1, -2))) / 2
        return float(np.min(np.linalg.eigvalsh(herm.reshape(-1, self.r, self.r))))

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "shell": self.bins.cells_json(),
            "windows": list(self.window_names),
            "n": self.n_used,
            "omega": self.omega_used,
            "zero_mode_mass": _cplx(self.zero_mode_mass),
            "mass": [[_cplx(self.mass[p, c]) for c in range(self.mass.shape[1])]
                     for p in range(self.n_windows)],
        }


def empirical_measure(fam: SequenceFamily | None, windows: Sequence[PhysTestFn], omega,
                      n: int, bins: ShellBins, u: Field | None = None) -> EmpiricalMeasure:
    """Histogram the one-scale mass of ``u_n`` over windows and shell cells.

    Pass ``u`` to measure a precomputed field instead of generating one.
    """
    if u is None:
        _require_null(fam)
        u = fam.generate(n)
    windows = list(windows)
    defect = squared_partition_defect(windows)
    if defect > PARTITION_TOL:
        raise ValueError(
            f"windows are not a squared partition of unity: max |sum phi^2 - 1| = {defect:.3e}"
        )
    grid = u.grid
    w = omega_at(omega, n)
    xi, nz = _nonzero(grid)
    cells = bins.classify_many(w * xi[nz])
    r = u.components
    n_cells = bins.n_cells
    mass = np.zeros((len(windows), n_cells, r, r), dtype=complex)
    zero = np.zeros((r, r), dtype=complex)
    wmass = np.zeros(len(windows))
    for p, phi in enumerate(windows):
        v = _coeffs(phi, u)
        wmass[p] = grid.volume * float(np.sum(np.abs(v) ** 2))
        zero += grid.volume * np.outer(v[:, 0], v[:, 0].conj())
        vz = v[:, nz]
        for i in range(r):
            for j in range(i, r):
                prod = vz[i] * vz[j].conj()
                re = np.bincount(cells, prod.real, n_cells)
                im = np.bincount(cells, prod.imag, n_cells)
                mass[p, :, i, j] = grid.volume * (re + 1j * im)
                if j != i:
                    mass[p, :, j, i] = np.conj(mass[p, :, i, j])
                else:
                    mass[p, :, i, i] = mass[p, :, i, i].real
    return EmpiricalMeasure(grid, bins, [phi.name for phi in windows], mass, zero, n, w,
                            u.is_real(), wmass)


def empirical_measures(fam, windows, omega, n_list, bins) -> list[EmpiricalMeasure]:
    return parallel_map(lambda n: empirical_measure(fam, windows, omega, n, bins), n_list)


# --- projections ------------------------------------------------------------

@dataclass
class DirectionMeasure:
    """Direction marginal of an empirical measure, shape ``(P, D, r, r)``."""

    bins: ShellBins
    mass: np.ndarray

    def traces(self) -> np.ndarray:
        return np.real(np.einsum("pdii->d", self.mass))

    def pair(self, g: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """``sum g(e_dir) * mass`` with ``g`` evaluated at the bin centroids."""
        D = self.bins.n_directions
        e = np.stack([self.bins.direction_centroid(k) for k in range(D)])
        gv = np.asarray(g(e), dtype=complex)
        return np.einsum("d,pdij->ij", gv, self.mass)


def h_projection(em: EmpiricalMeasure) -> DirectionMeasure:
    """Sum every cell (radial bins and both spheres) into its direction bin."""
    dirs = em.bins.dir_of_cells()
    D = em.bins.n_directions
    out = np.zeros((em.n_windows, D, em.r, em.r), dtype=complex)
    for k in range(D):
        out[:, k] = em.mass[:, dirs == k].sum(axis=1)
    return DirectionMeasure(em.bins, out)


@dataclass
class ScMeasure:
    """Interior cells kept at their representatives plus an atom at the origin."""

    bins: ShellBins
    points: np.ndarray          # (C_int, d) representatives, rescaled frequency
    mass: np.ndarray            # (P, C_int, r, r)
    origin_mass: np.ndarray     # (P, r, r)
    dropped_mass: float         # trace mass that sat on the outer sphere

    def total(self) -> float:
        return float(np.real(np.einsum("pcii->", self.mass)) +
                     np.real(np.einsum("pii->", self.origin_mass)))

    def origin_fraction(self) -> float:
        tot = self.total()
        return float(np.real(np.einsum("pii->", self.origin_mass))) / tot if tot > 0 else 0.0

    def pair(self, h: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        d = self.points.shape[1]
        hv = np.asarray(h(self.points), dtype=complex)
        h0 = complex(np.asarray(h(np.zeros((1, d)))).reshape(-1)[0])
        return np.einsum("c,pcij->ij", hv, self.mass) + h0 * self.origin_mass.sum(axis=0)


def sc_projection(em: EmpiricalMeasure) -> ScMeasure:
    kinds = em.bins.kinds()
    interior = np.flatnonzero(kinds == INTERIOR)
    pts = np.stack([em.bins.representative(c).array for c in interior])
    origin = em.mass[:, kinds == SIGMA0].sum(axis=1)
    dropped = float(np.real(np.einsum("pcii->", em.mass[:, kinds == SIGMAINF])))
    return ScMeasure(em.bins, pts, em.mass[:, interior], origin, dropped)


def pair_measure(em: EmpiricalMeasure, psi: ShellTestFn) -> np.ndarray:
    """``<mu, 1 (x) psi>`` with psi sampled at cell representatives."""
    vals = np.array([psi.at(em.bins.representative(c)) for c in range(em.bins.n_cells)])
    return np.einsum("c,pcij->ij", vals, em.mass)


# --- diagnostics ------------------------------------------------------------

@dataclass
class OscillationReport:
    n_list: list[int]
    r_list: list[float]
    tails: np.ndarray            # (len(r_list), len(n_list))
    limit: float
    oscillatory: bool
    tol: float
    empty_by_discretisation: bool

    def to_dict(self) -> dict:
        return {"n": self.n_list, "r": self.r_list, "tails": self.tails.tolist(),
                "limit": self.limit, "oscillatory": self.oscillatory, "tol": self.tol,
                "tail_empty_by_discretization": self.empty_by_discretisation}


def oscillatory_index(fam: SequenceFamily, phi: PhysTestFn | None, omega,
                      n_list: Sequence[int], r_list: Sequence[float], tol: float = 1e-6,
                      tail_count: int = 2) -> OscillationReport:
    """Tail energies ``T[r][n] = sum_{|xi| >= r/omega_n} |(phi u_n)^|^2``.

    The limit is the largest of the last ``tail_count`` values at the largest r
    (a finite stand-in for the lim sup).
    """
    if not fam.limit_known:
        raise ValueError("oscillatory_index needs a family with known weak limit")
    fam = center_sequence(fam)
    n_list = _check_n_list(n_list)
    r_list = sorted(float(r) for r in r_list)
    grid = fam.grid
    norms = grid.frequency_norms().reshape(-1)

    def one(n):
        v = _coeffs(phi, fam.generate(n))
        energy = grid.volume * np.sum(np.abs(v) ** 2, axis=0)
        w = omega_at(omega, n)
        return [float(energy[norms >= r / w].sum()) for r in r_list]

    tails = np.array(parallel_map(one, n_list)).T
    empty = all(r_list[0] / omega_at(omega, n) > grid.max_frequency for n in n_list)
    if empty:
        log.warning("tail empty by discretization: r/omega_n exceeds the lattice for every n")
    limit = float(np.max(tails[-1, -tail_count:]))
    return OscillationReport(n_list, r_list, tails, limit, limit <= tol, tol, empty)


def default_r_max(bins: ShellBins) -> float:
    """Radius at which the outer-sphere cells start, ``(1 - delta)/delta``."""
    return (1 - bins.delta) / bins.delta


def sigma_inf_mass(em: EmpiricalMeasure) -> float:
    return em.kind_mass(SIGMAINF)


def sigma_inf_verdict(fam, windows, omega, n_list, bins, tol: float = 1e-6,
                      tail_count: int = 2) -> tuple[bool, float]:
    """Outer-sphere mass over the last ``tail_count`` n; ``True`` means none detected."""
    ems = empirical_measures(fam, windows, omega, list(n_list)[-tail_count:], bins)
    worst = max(sigma_inf_mass(em) for em in ems)
    return worst <= tol, worst


def antipodal_check(em: EmpiricalMeasure) -> float:
    """Largest ``|mass(C) - mass(-C)|`` over windows and cells (real scalar input only)."""
    if em.r != 1:
        raise ValueError("antipodal check needs a scalar (r = 1) sequence")
    if not em.real_input:
        raise ValueError("antipodal check needs a real-valued sequence")
    anti = np.array([em.bins.antipode(c) for c in range(em.bins.n_cells)])
    m = em.mass[:, :, 0, 0]
    return float(np.max(np.abs(m - m[:, anti])))


def support_inclusion_check(em: EmpiricalMeasure, tol: float = 1e-10) -> dict:
    """Cellwise Cauchy-Schwarz ``|m_ij|^2 <= m_ii m_jj`` for every component pair."""
    scale = em.total() or 1.0
    out = {}
    for i in range(em.r):
        for j in range(i + 1, em.r):
            mij = np.abs(em.mass[:, :, i, j]) ** 2
            bound = np.real(em.mass[:, :, i, i]) * np.real(em.mass[:, :, j, j])
            excess = float(np.max((mij - bound) / scale**2))
            out[f"{i}{j}"] = {"pass": excess <= tol, "max_excess": excess}
    return out


# --- serialisation ----------------------------------------------------------

def _cplx(m) -> list:
    m = np.asarray(m, dtype=complex)
    if m.ndim == 0:
        return [float(m.real), float(m.imag)]
    return [_cplx(x) for x in m]


def fmt_number(x: float, floor: float = 0.0) -> str:
    """Twelve significant digits; magnitudes below ``floor`` print as 0."""
    if abs(x) <= floor:
        return "0"
    return f"{x:.12g}"


def measure_csv(em: EmpiricalMeasure) -> str:
    """One row per (window, cell): kind, bins and the r x r real/imaginary parts."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    r = em.r
    entries = [(i, j) for i in range(r) for j in range(r)]
    w.writerow(["phys_cell", "cell", "kind", "dir_bin", "rad_bin"]
               + [f"m{i}{j}_{part}" for i, j in entries for part in ("re", "im")])
    floor = 1e-14 * max(em.total(), 0.0)
    for p, name in enumerate(em.window_names):
        for c in range(em.bins.n_cells):
            info = em.bins.cell_info(c)
            row = [name, c, info["kind"], info["dir_bin"],
                   "" if info["rad_bin"] is None else info["rad_bin"]]
            for i, j in entries:
                z = em.mass[p, c, i, j]
                row += [fmt_number(z.real, floor), fmt_number(z.imag, floor)]
            w.writerow(row)
    return buf.getvalue()
