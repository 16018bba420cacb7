"""Acceptance criteria; one PASS/FAIL line per criterion in the pytest summary."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from conftest import ACCEPTANCE
from oneshm.cli import main
from oneshm.compensation import (QuadraticForm, compensation_check, example5_form,
                                 example5_pipeline, form_sign_on_characteristic, phi_dictionary,
                                 shell_samples)
from oneshm.grid import (Field, TorusGrid, constant_window, parseval_mass, partition_of_unity,
                         raised_cosine_bump)
from oneshm.measures import (antipodal_check, default_r_max, empirical_measure, h_projection,
                             oscillatory_index, pairing, sc_projection, sigma_inf_verdict)
from oneshm.operators import (MultiplierOp, commutation_decay_experiment, commutator_map,
                              compactness_probe, split_commutator, windowed_wave_probes)
from oneshm.sequences import (Concentration, Custom, ModulatedOscillation, PlaneWave,
                              RelaxationSystem, ScaleSchedule, Scaled, Stack, TwoScaleSum,
                              band_limited_real)
from oneshm.shell import (INTERIOR, SIGMA0, SIGMAINF, ShellBins, c0_lift, constant_lift,
                          homogeneous_lift)
from oneshm.symbols import SystemDescriptor, Term, example5_system, rhs_condition, tail_condition

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = Path(__file__).parent / "golden"
N_LIST = [8, 16, 32, 64]
ONE_OVER_N = ScaleSchedule.power(1.0)
N_M2 = ScaleSchedule.power(2.0)
N_MHALF = ScaleSchedule.power(0.5)


def verdict(n: int, desc: str, ok: bool, detail=None):
    ACCEPTANCE[n] = (bool(ok), desc)
    assert ok, detail


def gauss(d):
    return c0_lift(lambda x: np.exp(-np.sum(np.asarray(x) ** 2, axis=1)), d)


@pytest.fixture(scope="module")
def g256():
    return TorusGrid(2, 256)


@pytest.fixture(scope="module")
def bump(g256):
    return raised_cosine_bump(g256, (0.5, 0.5), power=2)


def window_l2_quadrature() -> np.ndarray:
    """Independent ``int phi_p^2`` for the two-per-axis windows, in their tensor order."""
    theta = lambda t: np.pi / 4 * (1 + np.cos(2 * np.pi * t))
    one = [integrate.quad(lambda t: f(theta(t)) ** 2, 0.0, 1.0, epsabs=1e-14)[0]
           for f in (np.sin, np.cos)]
    return np.outer(one, one).reshape(-1)


def example1_rows(grid, windows):
    rows = {}
    for name, omega, delta in (("interior", ONE_OVER_N, 0.05), ("sigma0", N_M2, 0.05),
                               ("sigmainf", N_MHALF, 0.15)):
        bins = ShellBins(2, 8, 9, delta)
        rows[name] = (bins, empirical_measure(PlaneWave(grid, (1, 0)), windows, omega,
                                              N_LIST[-1], bins))
    return rows


@pytest.fixture(scope="module")
def windows(g256):
    return partition_of_unity(g256, 2)


def test_1_example1_one_scale(g256, windows):
    oracle = window_l2_quadrature()
    detail = {}
    ok = True
    for name, (bins, em) in example1_rows(g256, windows).items():
        kind = {"interior": INTERIOR, "sigma0": SIGMA0, "sigmainf": SIGMAINF}[name]
        cell = (bins.classify((1.0, 0.0)) if kind == INTERIOR
                else bins.cell_id(kind, int(bins.direction_bins(np.array([[1.0, 0.0]]))[0])))
        frac = em.fraction([cell])
        rel = float(np.max(np.abs(em.cell_traces().sum(axis=1) - oracle) / oracle))
        detail[name] = (frac, rel)
        ok &= frac >= 0.99 and rel <= 0.01
    verdict(1, "plane-wave one-scale placement in all three regimes and quadrature mass", ok,
            detail)


def test_2_two_scale_rows():
    g = TorusGrid(1, 16384)
    fam = TwoScaleSum(g, 1.0, 2.0, (1,), (-1,))
    bins = ShellBins(1, delta=0.15)
    plus, minus = 0, 1
    rows = [
        (ScaleSchedule.power(3.0), [(SIGMA0, plus), (SIGMA0, minus)]),
        (ScaleSchedule.power(2.0), [(SIGMA0, plus), (INTERIOR, (-1.0,))]),
        (ScaleSchedule.power(1.5), [(SIGMA0, plus), (SIGMAINF, minus)]),
        (ScaleSchedule.power(1.0), [(INTERIOR, (1.0,)), (SIGMAINF, minus)]),
        (ScaleSchedule.power(0.5), [(SIGMAINF, plus), (SIGMAINF, minus)]),
    ]
    detail = []
    ok = True
    for omega, cells in rows:
        em = empirical_measure(fam, [constant_window(g)], omega, N_LIST[-1], bins)
        for kind, where in cells:
            cell = bins.classify(where) if kind == INTERIOR else bins.cell_id(kind, where)
            frac = float(em.shell_traces()[cell])
            detail.append((omega.p, kind, frac))
            ok &= frac >= 0.99
    verdict(2, "two-scale sum reproduces all five regime rows", ok, detail)


def test_3_homogeneous_pairing_exact(g256, bump):
    g = homogeneous_lift(lambda e: 1 + e[:, 0] + 0.5 * e[:, 1] ** 2 + 0j, 2)
    fam = PlaneWave(g256, (1, 0), window=bump)
    a = pairing(fam, None, None, g, ONE_OVER_N, N_LIST)
    b = pairing(fam, None, None, g, N_M2, N_LIST)
    rel = max(float(np.max(np.abs(x - y)) / max(np.max(np.abs(x)), 1e-300))
              for x, y in zip(a.values, b.values))
    bins, em = example1_rows(g256, partition_of_unity(g256, 2))["interior"]
    hp = h_projection(em).traces()
    got = int(np.argmax(hp))
    want = int(bins.direction_bins(np.array([[1.0, 0.0]]))[0])
    gap = min((got - want) % bins.n_directions, (want - got) % bins.n_directions)
    ok = rel <= 1e-13 and gap <= 1 and hp[got] >= 0.99 * hp.sum()
    verdict(3, "homogeneous pairing is schedule independent and h-projection hits k/|k|", ok,
            (rel, got, want))


def test_4_semiclassical_table(g256, windows):
    rows = example1_rows(g256, windows)
    bins, em = rows["sigma0"]
    origin = sc_projection(em).origin_fraction()
    bins, em = rows["interior"]
    sc = sc_projection(em)
    atom = em.fraction([bins.classify((1.0, 0.0))])
    atom_ok = atom >= 0.99 and sc.total() >= 0.99 * em.total() and sc.origin_fraction() <= 0.01
    bins, em = rows["sigmainf"]
    absent = sc_projection(em).total() <= 0.01 * em.total()
    ok = origin >= 0.99 and atom_ok and absent
    verdict(4, "semiclassical projections: origin atom, atom at k, no mass", ok,
            (origin, atom, absent))


def test_5_mass_positivity_hermiticity(g256, bump):
    suite = []
    windows = partition_of_unity(g256, 2)
    for fam in (PlaneWave(g256, (1, 0)), PlaneWave(g256, (0, 1), real=True),
                ModulatedOscillation(g256, ONE_OVER_N, (0, 1), bump),
                Stack((PlaneWave(g256, (1, 0)), PlaneWave(g256, (0, 1), real=True)))):
        for omega in (ONE_OVER_N, N_M2, N_MHALF):
            suite.append((fam, empirical_measure(fam, windows, omega, 32, ShellBins(2))))
    u = band_limited_real(g256, 11)
    suite.append((None, empirical_measure(None, windows, ONE_OVER_N, 8, ShellBins(2), u=u)))

    # psi == 1 pairing against the Parseval mass of the windowed field
    fam = ModulatedOscillation(g256, ONE_OVER_N, (1, 2), bump)
    one = pairing(fam, bump, bump, constant_lift(1.0, 2), ONE_OVER_N, [8, 16])
    mass_rel = max(abs(v[0, 0] - parseval_mass(Field(g256, bump.samples * fam.generate(n).samples)))
                   / abs(v[0, 0]) for n, v in zip([8, 16], one.values))

    herm = max(em.hermitian_defect() / max(em.total(), 1) for _, em in suite)
    psd = min(em.min_eigenvalue() / max(em.total(), 1) for _, em in suite)
    anti = max(antipodal_check(em) / max(em.total(), 1) for fam, em in suite
               if fam is None or (fam.components == 1 and getattr(fam, "real", False)))
    cs_ok = True
    for _, em in suite:
        M = em.mass
        diag = np.real(np.einsum("pcii->pci", M))
        lhs = np.abs(M) ** 2
        rhs = diag[..., :, None] * diag[..., None, :]
        cs_ok &= bool(np.all(lhs <= rhs + 1e-10 * max(em.total(), 1) ** 2))
    ok = mass_rel <= 1e-10 and herm <= 1e-10 and psd >= -1e-10 and anti <= 1e-10 and cs_ok
    verdict(5, "mass identity, hermiticity, positivity, antipodal symmetry, Cauchy-Schwarz", ok,
            (mass_rel, herm, psd, anti, cs_ok))


def test_6_oscillation_equivalence(g256, bump):
    g1 = TorusGrid(1, 16384)
    families = [
        PlaneWave(g256, (1, 0)),
        PlaneWave(g256, (0, 1), real=True),
        ModulatedOscillation(g256, ONE_OVER_N, (0, 1), bump),
        Concentration(g256, ScaleSchedule.power(1.0, c=2.0), (0.5, 0.5)),
        Scaled(Custom(g256, lambda n: band_limited_real(g256, 5).samples,
                      limit=lambda: band_limited_real(g256, 5)), ONE_OVER_N),
        TwoScaleSum(g1, 1.0, 2.0, (1,), (-1,)),
    ]
    agree = []
    for fam in families:
        bins = ShellBins(fam.grid.dim, delta=0.15)
        for omega in (ONE_OVER_N, N_M2, N_MHALF):
            osc = oscillatory_index(fam, None, omega, N_LIST, [1.0, default_r_max(bins)])
            sig, _ = sigma_inf_verdict(fam, [constant_window(fam.grid)], omega, N_LIST, bins)
            agree.append((fam.kind, omega.p, osc.oscillatory, sig))
    ok = len(agree) == 18 and all(o == s for *_, o, s in agree)
    verdict(6, "outer-sphere mass and tail index agree on 18 family/schedule cases", ok, agree)


def test_7_commutator_decay():
    grid = TorusGrid(2, 64)
    phi = raised_cosine_bump(grid, (0.5, 0.5), power=2)
    omegas = [2.0**-k for k in range(2, 9)]
    curve = commutation_decay_experiment(phi, gauss(2), omegas)
    flat = commutation_decay_experiment(phi, homogeneous_lift(lambda e: e[:, 0] + 0j, 2), omegas)
    _, _, K = split_commutator(phi, gauss(2), omegas[-1])
    probes = windowed_wave_probes(phi, (1, 1), [1, 2, 4, 8, 12])
    probe = compactness_probe(K, probes)
    hom = compactness_probe(commutator_map(phi, MultiplierOp(homogeneous_lift(
        lambda e: e[:, 0] + 0j, 2))), probes)
    k_ok = (probe.decaying and probe.ratio <= 0.2) or max(probe.norms) < 1e-12
    ok = curve.decaying and curve.ratio <= 0.2 and not flat.decaying and k_ok and hom.decaying
    verdict(7, "commutator decays for gaussian symbol, not for homogeneous; K-part compact", ok,
            (curve.ratio, flat.ratio, probe.norms, hom.ratio))


def example5_setup(grid):
    eps = ScaleSchedule.power(0.5, c=256.0)
    forcing = Stack((PlaneWave(grid, (0, 1), alpha=2.0, scale=1 / 64),
                     PlaneWave(grid, (1, 0), alpha=2.0, scale=1 / 64)))
    return eps, forcing


def test_8_example5_localisation(g256):
    eps, forcing = example5_setup(g256)
    rep = example5_pipeline(1.0, 1.0, eps, forcing, g256, ShellBins(2), N_LIST)
    c = rep["checks"]
    ratio = c["localisation"]["ratio"][-1]
    ok = (ratio <= 1e-2 and c["rhs_condition"]["satisfied"]
          and c["measure_residual"]["relative"] <= 0.05
          and c["i"]["fraction"] >= 0.95 and c["ii"]["fraction"] >= 0.95
          and c["iii"]["max_offdiag_over_total"] <= 1e-6 and c["iv"]["values"][-1] <= 1e-3)
    verdict(8, "relaxation system: localisation, rhs condition, residual and support conclusions", ok,
            {k: c[k] for k in ("i", "ii", "iii", "iv")} | {"ratio": ratio})


def test_9_compensation():
    g = TorusGrid(2, 128)
    eps = ScaleSchedule.power(2.0)
    sys = example5_system(1.0, 1.0, eps)
    forcing = Stack((PlaneWave(g, (0, 1)), PlaneWave(g, (1, 0))))
    fam = RelaxationSystem(g, (1.0, 1.0), eps, forcing)
    samples = shell_samples(ShellBins(2))
    sign = form_sign_on_characteristic(example5_form(), sys, "P1", samples)
    comp = compensation_check(example5_form(), fam, sign, phi_dictionary(g), [8, 16, 32],
                              tol=1e-2)
    indef = form_sign_on_characteristic(QuadraticForm(np.diag([1.0, -1.0])), sys, "P1", samples)
    ok = (sign.verdict == "ZeroEverywhere" and comp.passed is True
          and indef.verdict == "Indefinite" and indef.witness is not None)
    verdict(9, "zero form on the characteristic set, compensation equality, indefinite witness",
            ok, (sign.verdict, comp.passed, indef.witness))


def test_10_tail_condition():
    g = TorusGrid(1, 16384)
    r_list = [2.0, 4.0]

    def system(eps):
        return SystemDescriptor(1, 1, 1, 0, 1, (Term((0,), np.eye(1)), Term((1,), np.eye(1))),
                                eps)

    eps = N_M2
    good = Scaled(PlaneWave(g, (1,)), eps)
    rhs = rhs_condition(good, None, system(eps), N_LIST)
    rep = tail_condition(good, system(eps), r_list, N_LIST, rhs)
    drop = rep.hneg_norms[0] / rep.hneg_norms[-1]
    bad = Scaled(PlaneWave(g, (1,), alpha=2.0), ONE_OVER_N)
    rejected = tail_condition(bad, system(ONE_OVER_N), r_list, N_LIST,
                              rhs_condition(bad, None, system(ONE_OVER_N), N_LIST))
    ok = rhs.satisfied and rep.tail_ok and rep.conclusion_holds and drop >= 10 \
        and not rejected.tail_ok
    verdict(10, "constructed forcing passes both conditions and decays; violator rejected", ok,
            (rhs.satisfied, rep.tail_ok, drop, rejected.tail_ok))


def test_11_determinism_and_golden(tmp_path, capsys):
    cfg = ROOT / "configs" / "example1_interior.json"
    a, b = tmp_path / "a", tmp_path / "b"
    codes = [main(["run", str(cfg), "--out", str(a)]), main(["run", str(cfg), "--out", str(b)])]
    capsys.readouterr()
    ra = json.loads((a / "report.json").read_text())
    rb = json.loads((b / "report.json").read_text())
    ra.pop("timestamp"), rb.pop("timestamp")
    csv_a, csv_b = (a / "measure.csv").read_bytes(), (b / "measure.csv").read_bytes()
    ok = (codes == [0, 0] and ra == rb and csv_a == csv_b
          and csv_a == (GOLDEN / "example1_interior_measure.csv").read_bytes())
    verdict(11, "identical reports and byte-identical golden CSV across runs", ok, codes)
