"""Experiment configuration: JSON schema, dataclass and object builders."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .grid import PhysTestFn, TorusGrid, constant_window, partition_of_unity, raised_cosine_bump
from .sequences import (Concentration, Custom, ModulatedOscillation, PlaneWave, RelaxationSystem,
                        Scaled, ScaleSchedule, SequenceFamily, Stack, Sum, TwoScaleSum,
                        band_limited_real, zero_family)
from .shell import ShellBins, c0_lift, constant_lift, homogeneous_lift
from .symbols import schedule_from_dict, system_from_dict

SCHEMA_VERSION = "1.0"
SUPPORTED = ("1.0",)
ACTIONS = ("measure", "project", "oscillatory", "localize", "commutator", "compensate",
           "example5")


class ConfigError(ValueError):
    """Validation failure; ``path`` locates the offending key."""

    def __init__(self, msg: str, path: tuple = ()):
        super().__init__(msg)
        self.path = tuple(path)


_schedule = {
    "type": "object",
    "properties": {
        "rule": {"enum": ["power", "explicit"]},
        "p": {"type": "number"},
        "c": {"type": "number", "exclusiveMinimum": 0},
        "values": {"type": ["object", "array"]},
        "name": {"type": "string"},
    },
    "required": ["rule"],
    "additionalProperties": False,
}

_vector = {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 3}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "oneshm experiment",
    "type": "object",
    "properties": {
        "version": {"type": "string", "pattern": r"^\d+\.\d+(\.\d+)?$"},
        "grid": {
            "type": "object",
            "properties": {
                "d": {"type": "integer", "minimum": 1, "maximum": 3},
                "N": {"type": "integer", "minimum": 2},
                "period": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["d", "N"],
            "additionalProperties": False,
        },
        "family": {"$ref": "#/$defs/family"},
        "schedules": {
            "type": "object",
            "properties": {"omega": _schedule, "eps": _schedule},
            "additionalProperties": False,
        },
        "windows": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["constant", "partition"]},
                "per_axis": {"type": "integer", "minimum": 1},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "bins": {
            "type": "object",
            "properties": {
                "n_dir": {"type": "integer", "minimum": 2},
                "n_rad": {"type": "integer", "minimum": 1},
                "delta_boundary": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
            },
            "additionalProperties": False,
        },
        "n_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "action": {"enum": list(ACTIONS)},
        "action_params": {"type": "object"},
        "output": {
            "type": "object",
            "properties": {
                "dir": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["json", "csv", "plotdata"]},
                            "uniqueItems": True},
            },
            "additionalProperties": False,
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    },
    "required": ["version", "grid", "action"],
    "additionalProperties": False,
    "$defs": {
        "family": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["plane_wave", "two_scale_sum", "concentration", "modulated",
                                  "relaxation", "stack", "sum", "scaled", "zero", "random_real"]},
            },
            "required": ["kind"],
        },
    },
}


@dataclass
class ExperimentConfig:
    version: str
    grid: dict
    action: str
    family: dict | None = None
    schedules: dict = field(default_factory=dict)
    windows: dict = field(default_factory=lambda: {"kind": "constant"})
    bins: dict = field(default_factory=dict)
    n_list: list[int] = field(default_factory=lambda: [8, 16, 32, 64])
    action_params: dict = field(default_factory=dict)
    output: dict = field(default_factory=lambda: {"dir": "out", "formats": ["json", "csv"]})
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def sha256(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    # -- builders

    def build_grid(self) -> TorusGrid:
        g = self.grid
        if g["N"] % 2:
            raise ConfigError("points_per_axis must be even", ("grid", "N"))
        try:
            return TorusGrid(g["d"], g["N"], float(g.get("period", 1.0)))
        except ValueError as e:
            raise ConfigError(str(e), ("grid",)) from e

    def build_bins(self) -> ShellBins:
        b = self.bins
        try:
            return ShellBins(self.grid["d"], b.get("n_dir", 8), b.get("n_rad", 9),
                             b.get("delta_boundary", 0.05))
        except ValueError as e:
            raise ConfigError(str(e), ("bins",)) from e

    def build_windows(self, grid: TorusGrid) -> list[PhysTestFn]:
        w = self.windows
        if w["kind"] == "constant":
            return [constant_window(grid)]
        try:
            return partition_of_unity(grid, w.get("per_axis", 2))
        except ValueError as e:
            raise ConfigError(str(e), ("windows",)) from e

    def schedule(self, name: str, required: bool = True) -> ScaleSchedule | None:
        obj = self.schedules.get(name)
        if obj is None:
            if required:
                raise ConfigError(f"schedule {name!r} is required for action {self.action!r}",
                                  ("schedules",))
            return None
        try:
            return schedule_from_dict(obj)
        except (ValueError, KeyError) as e:
            raise ConfigError(str(e), ("schedules", name)) from e

    def build_family(self, grid: TorusGrid, spec: dict | None = None,
                     path: tuple = ("family",)) -> SequenceFamily:
        spec = self.family if spec is None else spec
        if spec is None:
            raise ConfigError(f"action {self.action!r} needs a family", ())
        try:
            return build_family(grid, spec, self.seed, self, path)
        except ConfigError:
            raise
        except (ValueError, KeyError, TypeError) as e:
            raise ConfigError(f"family: {e}", path) from e


def build_window(grid: TorusGrid, spec: dict | None) -> PhysTestFn | None:
    if not spec:
        return None
    kind = spec.get("kind", "bump")
    if kind == "constant":
        return constant_window(grid, spec.get("value", 1.0))
    if kind == "bump":
        center = spec.get("center", [0.5 * grid.period] * grid.dim)
        return raised_cosine_bump(grid, center, spec.get("power", 2), spec.get("scale", 1.0))
    raise ValueError(f"unknown window kind {kind!r}")


def build_family(grid: TorusGrid, spec: dict, seed: int = 0, cfg: ExperimentConfig | None = None,
                 path: tuple = ("family",)) -> SequenceFamily:
    kind = spec["kind"]
    vec = lambda key: tuple(int(v) for v in spec[key])  # noqa: E731
    if kind == "plane_wave":
        amp = schedule_from_dict(spec["amplitude"]) if "amplitude" in spec else None
        return PlaneWave(grid, vec("k"), float(spec.get("alpha", 1.0)),
                         float(spec.get("scale", 1.0)), amp, build_window(grid, spec.get("window")),
                         bool(spec.get("real", False)))
    if kind == "two_scale_sum":
        return TwoScaleSum(grid, float(spec["alpha"]), float(spec["beta"]), vec("k"), vec("s"))
    if kind == "concentration":
        return Concentration(grid, schedule_from_dict(spec["eps"]),
                             tuple(float(v) for v in spec["x0"]))
    if kind == "modulated":
        return ModulatedOscillation(grid, schedule_from_dict(spec["eps"]), vec("k"),
                                    build_window(grid, spec.get("window", {"kind": "bump"})))
    if kind == "relaxation":
        a = tuple(float(v) for v in spec["a"])
        if any(v == 0 for v in a):
            raise ConfigError("coefficients must satisfy a1 != 0 and a2 != 0 everywhere",
                              path + ("a",))
        eps = schedule_from_dict(spec["eps"]) if "eps" in spec else cfg.schedule("eps")
        forcing = build_family(grid, spec["forcing"], seed, cfg, path + ("forcing",))
        return RelaxationSystem(grid, a, eps, forcing)
    if kind == "stack":
        return Stack(tuple(build_family(grid, p, seed, cfg, path + ("parts", i))
                           for i, p in enumerate(spec["parts"])))
    if kind == "sum":
        return Sum(tuple(build_family(grid, p, seed, cfg, path + ("parts", i))
                         for i, p in enumerate(spec["parts"])))
    if kind == "scaled":
        return Scaled(build_family(grid, spec["base"], seed, cfg, path + ("base",)),
                      schedule_from_dict(spec["gamma"]))
    if kind == "zero":
        return zero_family(grid, int(spec.get("r", 1)))
    if kind == "random_real":
        band = spec.get("band")
        return Custom(grid, lambda n: band_limited_real(grid, seed * 1_000_003 + n, band),
                      label="random_real")
    raise ConfigError(f"unknown family kind {kind!r}", path + ("kind",))


def build_psi(spec: dict | str, dim: int):
    """Shell test functions referenced from configs."""
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec["kind"]
    if kind == "gaussian":
        return c0_lift(lambda x: np.exp(-np.sum(np.asarray(x) ** 2, axis=1)), dim, name="gauss")
    if kind == "homogeneous":
        axis = int(spec.get("axis", 0))
        return homogeneous_lift(lambda e: np.asarray(e)[:, axis] + 0j, dim, name=f"e{axis + 1}")
    if kind == "constant":
        return constant_lift(complex(spec.get("value", 1.0)), dim)
    raise ValueError(f"unknown psi kind {kind!r}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and schema-check; raises ``json.JSONDecodeError`` or :class:`ConfigError`."""
    raw = json.loads(text)
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, tuple(err.absolute_path))
    if raw["version"].rsplit(".", 1)[0] not in SUPPORTED and raw["version"] not in SUPPORTED:
        raise ConfigError(f"unsupported config version {raw['version']!r}", ("version",))
    keys = ExperimentConfig.__dataclass_fields__.keys()
    cfg = ExperimentConfig(**{k: v for k, v in raw.items() if k in keys}, raw=raw)
    if any(b <= a for a, b in zip(cfg.n_list, cfg.n_list[1:])):
        raise ConfigError("n_list must be increasing", ("n_list",))
    return cfg


def locate(text: str, path: tuple) -> int:
    """Best-effort 1-based line of the JSON key addressed by ``path``."""
    pos = 0
    for el in path:
        if isinstance(el, str):
            hit = text.find(f'"{el}"', pos)
            if hit < 0:
                break
            pos = hit
    return text.count("\n", 0, pos) + 1


def load_config(path: str | Path) -> tuple[ExperimentConfig, str]:
    text = Path(path).read_text()
    return parse_config(text), text


def schema_json() -> str:
    return json.dumps(SCHEMA, indent=2, sort_keys=True)


def dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default)


def _default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"cannot serialise {type(o).__name__}")
