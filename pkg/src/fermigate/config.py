"""Run configuration files: JSON validated against the bundled schema."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .dynamics import Model, PulseSchedule
from .lattice import Discretization, LatticeConfig, LatticeError
from .optimize import MULTIBAND_BOUNDS, TWO_BAND_BOUNDS
from .robustness import NoiseSpec


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the source file when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = f"{path or '<config>'}:{line}: " if line else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.line = line


def load_schema() -> dict:
    text = resources.files("fermigate").joinpath("schema/run_config.schema.json").read_text()
    return json.loads(text)


def _line_of(text: str, keys) -> int | None:
    """Best-effort line of the last key along a JSON path."""
    lines = text.splitlines()
    start = 0
    found = None
    for key in keys:
        if isinstance(key, int):
            continue
        needle = f'"{key}"'
        for i in range(start, len(lines)):
            if needle in lines[i]:
                found, start = i + 1, i
                break
    return found


DEFAULTS = {
    "model": {"kind": "multiband", "n_bands": 4},
    "pulse": {"duration": 0.1, "dt": 0.005, "a": 0.0, "pin_endpoints": True, "guess": "linear-ramp",
              "gate": "swap", "full_gate": False, "initial": "ud"},
    "optimize": {"tol": 1e-10, "max_iter": 500, "max_eval": 15000, "fd_step": 1e-6, "seed": 0,
                 "a_grid": [500.0, 3000.0, 26], "rounds": 2},
    "table": {"V_s": [2.0, 30.0], "V_l": [20.0, 50.0], "n": 100},
    "scan": {"V_s": [2.0, 30.0, 15], "V_l": [30.0, 30.0, 1], "a": 1000.0, "n_bands": 4},
    "noise": {"n_gates": 50, "sources": ["phase", "intensity", "interwell"], "a_deviations": [4, 8, 12, 16, 20]},
    "qsl": {},
}


@dataclass
class RunConfig:
    """Validated run configuration with defaults filled in."""

    raw: dict
    lattice: LatticeConfig
    disc: Discretization
    model: Model
    noise: NoiseSpec
    sections: dict = field(default_factory=dict)
    source: str | None = None

    @property
    def pulse(self) -> dict:
        return self.sections["pulse"]

    @property
    def optimize(self) -> dict:
        return self.sections["optimize"]

    def bounds(self) -> dict:
        default = TWO_BAND_BOUNDS if self.model.kind == "two-band" else MULTIBAND_BOUNDS
        given = self.pulse.get("bounds", {})
        return {k: tuple(given.get(k, default[k])) for k in ("V_s", "V_l")}

    def n_steps(self) -> int:
        p = self.pulse
        if "n_steps" in p:
            return int(p["n_steps"])
        if p["duration"] == 0:
            return 0
        n = int(round(p["duration"] / p["dt"]))
        if n < 1 or abs(n * p["dt"] - p["duration"]) > 1e-9 * p["duration"]:
            raise ConfigError("pulse.duration must be a multiple of pulse.dt", path=self.source)
        return n

    def guess_pulse(self) -> PulseSchedule:
        p = self.pulse
        b = self.bounds()
        n = self.n_steps()
        vl = p.get("V_l", 30.0 if self.model.kind == "two-band" else min(30.0, b["V_l"][1]))
        if n == 0:
            return PulseSchedule(0.0, np.zeros(0), np.zeros(0), p["a"], b)
        if p["guess"] == "constant":
            vs = p.get("V_s", b["V_s"][1])
            return PulseSchedule(p["duration"], np.full(n, float(vs)), np.full(n, float(vl)), p["a"], b)
        return PulseSchedule.linear_ramp(p["duration"], p["duration"] / n, b["V_s"], vl, p["a"], b)

    def digest(self) -> str:
        """Hash of the effective configuration (output directory excluded)."""
        data = {k: v for k, v in self.sections.items() if k != "output"}
        return hashlib.sha256(json.dumps(data, sort_keys=True, default=str).encode()).hexdigest()[:16]


def parse_config(data: dict, text: str | None = None, source: str | None = None) -> RunConfig:
    text = text if text is not None else json.dumps(data, indent=2)
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = [k for k in err.instance if k not in err.schema.get("properties", {})]
            path = path + extra[:1]
        loc = ".".join(str(p) for p in path) or "<root>"
        raise ConfigError(f"{loc}: {err.message}", _line_of(text, path), source)
    sections = copy.deepcopy(DEFAULTS)
    for key, value in data.items():
        if isinstance(value, dict):
            sections.setdefault(key, {}).update(value)
        else:
            sections[key] = value
    try:
        lattice = LatticeConfig(**data.get("lattice", {}))
        disc = Discretization(**data.get("discretization", {}))
        model = Model(**sections["model"])
        noise = NoiseSpec(**{k: (tuple(v) if k == "grid_shape" else v) for k, v in sections["noise"].items()
                             if k in NoiseSpec.__dataclass_fields__})
    except (LatticeError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path=source) from exc
    cfg = RunConfig(data, lattice, disc, model, noise, sections, source)
    b = cfg.bounds()
    for k, (lo, hi) in b.items():
        if lo > hi or lo < 0:
            raise ConfigError(f"pulse.bounds.{k} must be a non-empty non-negative interval",
                              _line_of(text, ["pulse", "bounds", k]), source)
    cfg.n_steps()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=str(path)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, str(path)) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", 1, str(path))
    return parse_config(data, text, str(path))


def default_config() -> RunConfig:
    return parse_config({})
