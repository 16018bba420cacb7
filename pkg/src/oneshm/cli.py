"""Config-driven experiment runner.

    oneshm run CONFIG [--out DIR]
    oneshm validate CONFIG
    oneshm schema
    oneshm version

Exit status: 0 when every asserted check passes, 1 when a check fails, 2 on
configuration errors (reported as ``file:LINE: message``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .compensation import (QuadraticForm, compensation_check, example5_pipeline,
                           form_sign_on_characteristic, phi_dictionary, shell_samples)
from .config import (ConfigError, ExperimentConfig, build_family, build_psi, build_window, dump,
                     load_config, locate, schema_json)
from .grid import quadrature_mass, pointwise_mul
from .measures import (default_r_max, empirical_measure, fmt_number, h_projection, measure_csv,
                       oscillatory_index, pairing, sc_projection, sigma_inf_verdict)
from .operators import (MultiplierOp, commutation_decay_experiment, commutator_map,
                        compactness_probe, windowed_wave_probes)
from .sequences import Custom, center_sequence
from .shell import INTERIOR, SIGMA0, SIGMAINF
from .symbols import (Regime, _parse_matrix, apply_system, localisation_residual, measure_residual,
                      example5_system, rhs_condition, schedule_from_dict,
                      system_from_dict)

log = logging.getLogger("oneshm")


class Outputs:
    """Collects checks, results, CSV tables and plot data for one run."""

    def __init__(self):
        self.checks: dict[str, dict] = {}
        self.results: dict = {}
        self.tables: dict[str, str] = {}
        self.plots: dict[str, tuple[list[str], list[list[float]]]] = {}
        self.tolerances: dict[str, float] = {}

    def check(self, name: str, ok, **info):
        self.checks[name] = {"pass": None if ok is None else bool(ok), **info}

    @property
    def passed(self) -> bool:
        return all(c["pass"] is not False for c in self.checks.values())


def _params(cfg: ExperimentConfig) -> dict:
    return cfg.action_params or {}


def _table(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_number(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# --- actions ----------------------------------------------------------------

def _expected_cell(bins, omega, n, expect: dict) -> int:
    kind = expect["kind"]
    if kind == INTERIOR:
        if "eta" in expect:
            return bins.classify(np.asarray(expect["eta"], dtype=float))
        return bins.classify(omega(n) * np.asarray(expect["xi"], dtype=float))
    dbin = int(bins.direction_bins(np.asarray(expect["direction"], dtype=float)[None])[0])
    return bins.cell_id(kind, dbin)


def action_measure(cfg: ExperimentConfig, out: Outputs):
    p = _params(cfg)
    grid = cfg.build_grid()
    bins = cfg.build_bins()
    windows = cfg.build_windows(grid)
    fam = cfg.build_family(grid)
    omega = cfg.schedule("omega")
    tol = float(p.get("placement_tol", 0.99))
    out.tolerances.update(placement=tol, bookkeeping=1e-10, hermitian=1e-12, psd=1e-10,
                          mass_oracle=0.01)
    per_n = []
    em = None
    for n in cfg.n_list:
        em = empirical_measure(fam, windows, omega, n, bins)
        row = {"n": n, "omega": em.omega_used, "total": em.total(),
               "sigma0": em.kind_mass(SIGMA0), "interior": em.kind_mass(INTERIOR),
               "sigmainf": em.kind_mass(SIGMAINF), "bookkeeping": em.bookkeeping_error(),
               "hermitian_defect": em.hermitian_defect(), "min_eig": em.min_eigenvalue()}
        if "expect" in p:
            row["placement"] = em.fraction([_expected_cell(bins, omega, n, p["expect"])])
        per_n.append(row)
    out.results["per_n"] = per_n
    last = per_n[-1]
    if "expect" in p:
        out.check("placement", last["placement"] >= tol, value=last["placement"],
                  cell=bins.cell_info(_expected_cell(bins, omega, cfg.n_list[-1], p["expect"])))
    out.check("bookkeeping", max(r["bookkeeping"] for r in per_n) <= 1e-10)
    out.check("hermitian", max(r["hermitian_defect"] for r in per_n) <= 1e-12 * max(last["total"], 1))
    out.check("psd", min(r["min_eig"] for r in per_n) >= -1e-10 * max(last["total"], 1))
    if p.get("mass_oracle", True):
        u = fam.generate(cfg.n_list[-1])
        oracle = sum(quadrature_mass(pointwise_mul(w, u)) for w in windows)
        got = last["total"]
        rel = abs(got - oracle) / oracle if oracle > 0 else abs(got)
        out.check("mass_oracle", rel <= 0.01, measured=got, quadrature=oracle, rel_error=rel)
    out.tables["measure"] = measure_csv(em)
    out.plots["shell_mass"] = (["cell", "trace"],
                               [[c, float(v)] for c, v in enumerate(em.shell_traces())])
    out.plots["placement_vs_n"] = (["n", "placement"], [[r["n"], r.get("placement", 0.0)]
                                                        for r in per_n])


def action_project(cfg: ExperimentConfig, out: Outputs):
    p = _params(cfg)
    grid = cfg.build_grid()
    bins = cfg.build_bins()
    windows = cfg.build_windows(grid)
    fam = cfg.build_family(grid)
    omega = cfg.schedule("omega")
    n = cfg.n_list[-1]
    tol = float(p.get("placement_tol", 0.99))
    out.tolerances.update(placement=tol, schedule_invariance=1e-13)
    em = empirical_measure(fam, windows, omega, n, bins)
    hp = h_projection(em)
    sc = sc_projection(em)
    htr = hp.traces()
    out.results["h_projection"] = htr.tolist()
    out.results["sc"] = {"origin_mass": float(np.real(np.einsum("pii->", sc.origin_mass))),
                         "interior_mass": sc.total() - float(np.real(np.einsum("pii->", sc.origin_mass))),
                         "dropped_sigmainf": sc.dropped_mass}
    total = em.total()
    if "expect_h" in p:
        dirs = [int(bins.direction_bins(np.asarray(v, dtype=float)[None])[0]) for v in p["expect_h"]]
        frac = float(htr[sorted(set(dirs))].sum() / htr.sum()) if htr.sum() > 0 else 0.0
        out.check("h_placement", frac >= tol, value=frac, dir_bins=sorted(set(dirs)))
    if "expect_sc" in p:
        e = p["expect_sc"]
        if e == "origin":
            frac = sc.origin_fraction() * sc.total() / total if total > 0 else 0.0
            out.check("sc_origin_atom", frac >= tol, value=frac)
        elif e == "absent":
            frac = sc.total() / total if total > 0 else 0.0
            out.check("sc_absent", frac <= 1 - tol, value=frac)
        else:
            cell = bins.classify(np.asarray(e, dtype=float))
            frac = float(em.shell_traces()[cell] / total) if total > 0 else 0.0
            out.check("sc_atom", frac >= tol and bins.cell_info(cell)["kind"] == INTERIOR,
                      value=frac, cell=bins.cell_info(cell))
    if "alt_omega" in p:
        g = build_psi({"kind": "homogeneous", "axis": int(p.get("g_axis", 0))}, grid.dim)
        alt = schedule_from_dict(p["alt_omega"])
        a = pairing(fam, windows[0], windows[0], g, omega, cfg.n_list).values
        b = pairing(fam, windows[0], windows[0], g, alt, cfg.n_list).values
        scale = max(float(np.max(np.abs(x))) for x in a) or 1.0
        diff = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b)) / scale
        out.check("schedule_invariance", diff <= 1e-13, rel_diff=diff)
    out.plots["h_projection"] = (["dir_bin", "trace"], [[k, float(v)] for k, v in enumerate(htr)])


def action_oscillatory(cfg: ExperimentConfig, out: Outputs):
    p = _params(cfg)
    grid = cfg.build_grid()
    bins = cfg.build_bins()
    windows = cfg.build_windows(grid)
    fam = center_sequence(cfg.build_family(grid))
    omega = cfg.schedule("omega")
    tol = float(p.get("tol", 1e-6))
    r_list = p.get("r_list", [1.0, default_r_max(bins)])
    out.tolerances.update(oscillatory=tol)
    reports = [oscillatory_index(fam, w, omega, cfg.n_list, r_list, tol) for w in windows]
    limit = max(r.limit for r in reports)
    osc = limit <= tol
    sig_ok, sig_mass = sigma_inf_verdict(fam, windows, omega, cfg.n_list, bins, tol)
    out.results["oscillatory_index"] = [r.to_dict() for r in reports]
    out.results["sigma_inf_mass"] = sig_mass
    out.check("sigma_inf_agreement", osc == sig_ok, oscillatory=osc, sigma_inf_zero=sig_ok)
    if "expect_oscillatory" in p:
        out.check("expected_verdict", osc == bool(p["expect_oscillatory"]), oscillatory=osc)
    rows = []
    for i, r in enumerate(reports[0].r_list):
        for j, n in enumerate(reports[0].n_list):
            rows.append([r, n, float(reports[0].tails[i, j])])
    out.tables["tails"] = _table(["r", "n", "tail"], rows)
    out.plots["tail_vs_n"] = (["n", "tail_rmax"], [[n, float(reports[0].tails[-1, j])]
                                                   for j, n in enumerate(reports[0].n_list)])


def _system(cfg: ExperimentConfig):
    p = _params(cfg)
    if "system" not in p:
        raise ConfigError("action needs action_params.system", ("action_params",))
    spec = dict(p["system"])
    if "eps" not in spec:
        spec["eps"] = cfg.schedules.get("eps") or {"rule": "power", "p": 1.0}
    try:
        if spec.get("kind") == "example5":
            return example5_system(float(spec["a1"]), float(spec["a2"]),
                                   schedule_from_dict(spec["eps"]))
        return system_from_dict(spec, d=cfg.grid["d"])
    except (ValueError, KeyError) as e:
        raise ConfigError(f"system: {e}", ("action_params", "system")) from e


def action_localize(cfg: ExperimentConfig, out: Outputs):
    p = _params(cfg)
    grid = cfg.build_grid()
    bins = cfg.build_bins()
    windows = cfg.build_windows(grid)
    fam = cfg.build_family(grid)
    sys_ = _system(cfg)
    phi = build_window(grid, p.get("phi"))
    tol = float(p.get("tol", 1e-2))
    out.tolerances.update(localisation=tol, measure_residual=0.05)
    loc = localisation_residual(fam, sys_, phi, cfg.n_list, tol)
    if "forcing" in p:
        forcing = build_family(grid, p["forcing"], cfg.seed, cfg, ("action_params", "forcing"))
    else:
        forcing = Custom(grid, lambda n: apply_system(sys_, fam.generate(n), n), sys_.q,
                         label="manufactured")
    rhs = rhs_condition(forcing, phi, sys_, cfg.n_list)
    out.results["localisation"] = loc.to_dict()
    out.results["rhs_condition"] = rhs.to_dict()
    out.check("rhs_localisation_pair", loc.localised == rhs.satisfied, localised=loc.localised,
              rhs_satisfied=rhs.satisfied)
    if "expect_localised" in p:
        out.check("expected_verdict", loc.localised == bool(p["expect_localised"]))
    if fam.weakly_null:
        regime = Regime.parse(p.get("regime", "P1"))
        em = empirical_measure(fam, windows, sys_.eps, cfg.n_list[-1], bins)
        mres = measure_residual(em, sys_, regime, windows=windows)
        out.results["measure_residual"] = mres.to_dict()
        if p.get("expect_localised", True):
            out.check("measure_residual", mres.relative <= 0.05, relative=mres.relative)
    out.plots["residual_ratio"] = (["n", "ratio"], [[n, r] for n, r in zip(loc.n_list, loc.ratios)])


def action_commutator(cfg: ExperimentConfig, out: Outputs):
    p = _params(cfg)
    grid = cfg.build_grid()
    phi = build_window(grid, p.get("window", {"kind": "bump"}))
    psi = build_psi(p.get("psi", "gaussian"), grid.dim)
    omegas = [float(w) for w in p.get("omegas", [2.0**-k for k in range(2, 9)])]
    probes, iters = int(p.get("probes", 4)), int(p.get("iters", 50))
    out.tolerances.update(ratio=0.2, jitter=0.1)
    curve = commutation_decay_experiment(phi, psi, omegas, probes, iters, cfg.seed)
    out.results["curve"] = curve.to_dict()
    out.check("decay", curve.decaying == bool(p.get("expect_decay", True)),
              decaying=curve.decaying, ratio=curve.ratio)
    out.tables["norm_curve"] = _table(["omega", "norm"], [[w, v] for w, v in
                                                          zip(curve.xs, curve.norms)])
    out.plots["norm_curve"] = (["omega", "norm"], [[w, v] for w, v in zip(curve.xs, curve.norms)])
    if "probe" in p:
        pr = p["probe"]
        kpsi = build_psi(pr.get("psi", {"kind": "homogeneous"}), grid.dim)
        K = commutator_map(phi, MultiplierOp(kpsi, 1.0))
        probes_ = windowed_wave_probes(phi, pr.get("k", [1] * grid.dim), pr.get("freqs", [1, 2, 4, 8]))
        res = compactness_probe(K, probes_)
        out.results["compactness_probe"] = res.to_dict()
        out.check("compactness", res.decaying == bool(pr.get("expect_decay", True)),
                  ratio=res.ratio)


def action_compensate(cfg: ExperimentConfig, out: Outputs):
    p = _params(cfg)
    grid = cfg.build_grid()
    bins = cfg.build_bins()
    windows = cfg.build_windows(grid)
    fam = cfg.build_family(grid)
    sys_ = _system(cfg)
    if "Q" not in p:
        raise ConfigError("compensate needs action_params.Q", ("action_params",))
    Q = QuadraticForm(_parse_matrix(p["Q"]))
    regime = Regime.parse(p.get("regime", "P1"))
    tol = float(p.get("tol", 1e-2))
    out.tolerances.update(compensation=tol, form_zero=1e-10)
    sign = form_sign_on_characteristic(Q, sys_, regime, shell_samples(bins))
    out.results["form_sign"] = sign.to_dict()
    if "expect_verdict" in p:
        out.check("form_verdict", sign.verdict == p["expect_verdict"], verdict=sign.verdict)
    rep = compensation_check(Q, fam, sign, phi_dictionary(grid, windows), cfg.n_list, tol)
    out.results["compensation"] = rep.to_dict()
    if rep.passed is not None:
        expect = bool(p.get("expect_pass", True))
        out.check("compensation", rep.passed == expect, passed=rep.passed)


def action_example5(cfg: ExperimentConfig, out: Outputs):
    p = _params(cfg)
    for key in ("a1", "a2"):
        if key not in p:
            raise ConfigError(f"example5 needs action_params.{key}", ("action_params",))
        if float(p[key]) == 0.0:
            raise ConfigError(f"hypothesis violated: {key} must be nonzero everywhere "
                              f"(a1, a2 != 0)", ("action_params", key))
    grid = cfg.build_grid()
    if grid.dim != 2:
        raise ConfigError("example5 needs d = 2", ("grid", "d"))
    bins = cfg.build_bins()
    windows = cfg.build_windows(grid)
    eps = cfg.schedule("eps")
    omega = cfg.schedule("omega", required=False)
    forcing = cfg.build_family(grid, p.get("forcing", cfg.family), ("action_params", "forcing"))
    phi = build_window(grid, p.get("phi"))
    rep = example5_pipeline(float(p["a1"]), float(p["a2"]), eps, forcing, grid, bins, cfg.n_list,
                            windows, phi, omega)
    em = rep.pop("measure")
    out.tolerances.update(concentration=0.95, offdiag=1e-6, correlation=1e-3,
                          localisation=1e-2, measure_residual=0.05)
    for k in ("i", "ii", "iii", "iv", "v"):
        out.check(f"example5_{k}", rep["checks"][k]["pass"], **{kk: vv for kk, vv in
                                                                rep["checks"][k].items()
                                                                if kk != "pass"})
    out.results.update(rep)
    out.tables["measure"] = measure_csv(em)
    out.plots["correlation"] = (["n", "abs_u1u2"], [[n, v] for n, v in
                                                    zip(cfg.n_list, rep["checks"]["iv"]["values"])])


ACTIONS = {
    "measure": action_measure,
    "project": action_project,
    "oscillatory": action_oscillatory,
    "localize": action_localize,
    "commutator": action_commutator,
    "compensate": action_compensate,
    "example5": action_example5,
}


# --- driver -----------------------------------------------------------------

def execute(cfg: ExperimentConfig) -> Outputs:
    out = Outputs()
    ACTIONS[cfg.action](cfg, out)
    return out


def build_report(cfg: ExperimentConfig, out: Outputs, timestamp: str | None = None) -> dict:
    return {
        "oneshm_version": __version__,
        "config_version": cfg.version,
        "config_sha256": cfg.sha256,
        "timestamp": timestamp or datetime.now(timezone.utc).isoformat(),
        "seed": cfg.seed,
        "action": cfg.action,
        "tolerances": out.tolerances,
        "checks": out.checks,
        "passed": out.passed,
        "results": out.results,
    }


def write_outputs(cfg: ExperimentConfig, out: Outputs, out_dir: Path,
                  timestamp: str | None = None) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    formats = cfg.output.get("formats", ["json", "csv"])
    report = build_report(cfg, out, timestamp)
    if "json" in formats:
        (out_dir / "report.json").write_text(dump(report) + "\n")
    if "csv" in formats:
        for name, text in out.tables.items():
            (out_dir / f"{name}.csv").write_bytes(text.encode())
    if "plotdata" in formats:
        for name, (header, rows) in out.plots.items():
            lines = ["# " + " ".join(header)]
            lines += [" ".join(fmt_number(float(v)) for v in row) for row in rows]
            (out_dir / f"{name}.dat").write_bytes(("\n".join(lines) + "\n").encode())
    return report


def _config_error(path: str, text: str | None, err: Exception) -> int:
    if isinstance(err, json.JSONDecodeError):
        line, msg = err.lineno, f"invalid JSON: {err.msg}"
    elif isinstance(err, ConfigError):
        line, msg = (locate(text, err.path) if text else 1), str(err)
    else:
        line, msg = 1, str(err)
    print(f"{path}:{line}: {msg}", file=sys.stderr)
    return 2


def _load(path: str):
    text = None
    try:
        text = Path(path).read_text()
        cfg, _ = load_config(path)
        return cfg, text, None
    except (OSError, json.JSONDecodeError, ConfigError) as e:
        return None, text, e


def cmd_run(args) -> int:
    cfg, text, err = _load(args.config)
    if err is not None:
        return _config_error(args.config, text, err)
    try:
        out = execute(cfg)
    except ConfigError as e:
        return _config_error(args.config, text, e)
    except ValueError as e:
        # parameters that only fail at run time (aliasing, resolution, ...)
        return _config_error(args.config, text, ConfigError(str(e), ("family",)))
    out_dir = Path(args.out or cfg.output.get("dir", "out"))
    report = write_outputs(cfg, out, out_dir)
    for name, c in report["checks"].items():
        status = {True: "PASS", False: "FAIL", None: "INFO"}[c["pass"]]
        log.info("%s %s", status, name)
    print(f"{'PASS' if out.passed else 'FAIL'} {cfg.action} -> {out_dir / 'report.json'}")
    return 0 if out.passed else 1


def cmd_validate(args) -> int:
    cfg, text, err = _load(args.config)
    if err is None:
        try:
            grid = cfg.build_grid()
            cfg.build_bins()
            if cfg.family is not None:
                cfg.build_family(grid)
            if cfg.action == "example5":
                for key in ("a1", "a2"):
                    if float(_params(cfg).get(key, 1.0)) == 0.0:
                        raise ConfigError(f"hypothesis violated: {key} must be nonzero "
                                          f"everywhere (a1, a2 != 0)", ("action_params", key))
        except ConfigError as e:
            err = e
    if err is not None:
        return _config_error(args.config, text, err)
    print(f"{args.config}: ok")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="oneshm", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (overrides output.dir)")
    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    sub.add_parser("schema", help="print the config JSON schema")
    sub.add_parser("version", help="print the package version")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.cmd == "run":
        return cmd_run(args)
    if args.cmd == "validate":
        return cmd_validate(args)
    if args.cmd == "schema":
        print(schema_json())
        return 0
    print(__version__)
    return 0


if __name__ == "__main__":
    sys.exit(main())
