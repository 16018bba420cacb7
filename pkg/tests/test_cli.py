from __future__ import annotations

import json
from pathlib import Path

import pytest

from oneshm import __version__
from oneshm.cli import main
from oneshm.config import ConfigError, locate, parse_config

GOLDEN = Path(__file__).parent / "golden"


def _run(cfg, out, capsys):
    code = main(["run", str(cfg), "--out", str(out)])
    return code, capsys.readouterr()


def _strip(report: dict) -> dict:
    report = dict(report)
    report.pop("timestamp")
    return report


def test_example1_interior_passes(configs_dir, tmp_path, capsys):
    code, _ = _run(configs_dir / "example1_interior.json", tmp_path, capsys)
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["checks"]["placement"]["pass"] and rep["passed"]
    assert len(rep["config_sha256"]) == 64
    assert rep["tolerances"]["placement"] == 0.99
    assert (tmp_path / "shell_mass.dat").read_text().startswith("# cell trace\n")


def test_odd_points_exit_2(configs_dir, tmp_path, capsys):
    code, io = _run(configs_dir / "bad_odd_points.json", tmp_path, capsys)
    assert code == 2
    assert "points_per_axis must be even" in io.err
    assert io.err.startswith(f"{configs_dir / 'bad_odd_points.json'}:3:")


def test_example5_a1_zero_exit_2(configs_dir, tmp_path, capsys):
    code, io = _run(configs_dir / "bad_example5_a1_zero.json", tmp_path, capsys)
    assert code == 2
    assert "a1" in io.err and "nonzero" in io.err
    assert main(["validate", str(configs_dir / "bad_example5_a1_zero.json")]) == 2


def test_schema_violation_and_bad_json(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text('{\n  "version": "1.0",\n  "grid": {"d": 2, "N": 64},\n  "action": "dance"\n}\n')
    assert main(["run", str(p)]) == 2
    assert f"{p}:4:" in capsys.readouterr().err
    p.write_text('{"version": "1.0",\n "grid": }')
    assert main(["validate", str(p)]) == 2
    assert "invalid JSON" in capsys.readouterr().err
    p.write_text('{"version": "9.0", "grid": {"d": 1, "N": 8}, "action": "measure"}')
    assert main(["validate", str(p)]) == 2


def test_failing_check_exit_1(configs_dir, tmp_path, capsys):
    cfg = json.loads((configs_dir / "example1_interior.json").read_text())
    cfg["action_params"]["expect"] = {"kind": "sigma0", "direction": [1, 0]}
    p = tmp_path / "wrong.json"
    p.write_text(json.dumps(cfg))
    code, _ = _run(p, tmp_path / "out", capsys)
    assert code == 1


def test_determinism_and_golden_csv(configs_dir, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(configs_dir / "example1_interior.json", a, capsys)[0] == 0
    assert _run(configs_dir / "example1_interior.json", b, capsys)[0] == 0
    ra = json.loads((a / "report.json").read_text())
    rb = json.loads((b / "report.json").read_text())
    assert _strip(ra) == _strip(rb)
    assert (a / "measure.csv").read_bytes() == (b / "measure.csv").read_bytes()
    assert (a / "measure.csv").read_bytes() == (GOLDEN / "example1_interior_measure.csv").read_bytes()


def test_validate_schema_version(configs_dir, capsys):
    assert main(["validate", str(configs_dir / "example5.json")]) == 0
    capsys.readouterr()
    assert main(["schema"]) == 0
    out = capsys.readouterr().out
    assert json.loads(out)["title"] == "oneshm experiment"
    main(["version"])
    assert capsys.readouterr().out.strip() == __version__


def test_locate():
    text = '{\n  "grid": {\n    "N": 7\n  }\n}'
    assert locate(text, ("grid", "N")) == 3
    with pytest.raises(ConfigError) as e:
        parse_config('{"version": "1.0", "grid": {"d": 2, "N": 8}, "action": "measure", '
                     '"n_list": [8, 4]}')
    assert e.value.path == ("n_list",)


@pytest.mark.parametrize("name", ["commutator_gaussian", "commutator_homogeneous",
                                  "compensate_example5", "oscillatory_concentration",
                                  "project_example1", "example1_sigma0", "example1_sigmainf",
                                  "example5"])
def test_shipped_configs_pass(configs_dir, tmp_path, capsys, name):
    code, io = _run(configs_dir / f"{name}.json", tmp_path, capsys)
    assert code == 0, io.out + io.err
