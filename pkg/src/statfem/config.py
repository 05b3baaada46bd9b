"""Scenario configuration: a sectioned ``key = value`` text format.

Every key is declared in ``SCHEMA``; unknown sections or keys are rejected,
and values are converted to their declared types on load.
"""

from __future__ import annotations

import configparser
import hashlib
import math
import os
from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Any, Optional

from .errors import ConfigError, StatFemError

REQUIRED = object()


@dataclass(frozen=True)
class Key:
    kind: str  # float | int | str | choice | floats | points
    default: Any = None
    choices: tuple = ()


SCHEMA = {
    "scenario": {
        "kind": Key("choice", REQUIRED, ("sdof", "bar1d", "plate2d", "custom")),
        "name": Key("str", ""),
    },
    "geometry": {
        "length": Key("float"),
        "n_elements": Key("int"),
        "lx": Key("float", 2.0),
        "ly": Key("float", 2.0),
        "radius": Key("float", 0.2),
        "center_x": Key("float", 1.0),
        "center_y": Key("float", 1.0),
        "n_cells": Key("int", 18),
        "n_ring": Key("int", 16),
        "n_layers": Key("int", 2),
        "mesh_file": Key("str"),
    },
    "material": {
        "law": Key("choice", REQUIRED, ("lognormal", "additive")),
        "base": Key("float", REQUIRED),
        "density": Key("float", REQUIRED),
        "sigma": Key("float", REQUIRED),
        "field": Key("choice", "matern", ("matern", "independent")),
        "nu": Key("float", 1.5),
        "length_scale": Key("float"),
        "true_coefficient": Key("float"),
    },
    "forcing": {
        "law": Key("choice", REQUIRED, ("sines", "triangular_pulse")),
        "amplitude": Key("float", REQUIRED),
        "frequencies": Key("floats"),
        "angular_frequencies": Key("floats"),
        "start": Key("float", 0.0),
        "rise": Key("float"),
        "fall": Key("float"),
        "load": Key("choice", REQUIRED, ("point", "edge", "body")),
        "point": Key("floats"),
        "edge_axis": Key("int", 0),
        "edge_value": Key("float"),
        "sigma_f": Key("float", REQUIRED),
        "noise": Key("choice", "point", ("point", "matern")),
        "nu_f": Key("float", 1.5),
        "l_f": Key("float"),
    },
    "damping": {
        "kind": Key("choice", "none", ("none", "mass_proportional", "rayleigh", "rayleigh_mesh")),
        "a0": Key("float"),
        "ratio": Key("float"),
        "frequency1": Key("float"),
        "frequency2": Key("float"),
    },
    "time": {
        "unit": Key("choice", "seconds", ("seconds", "period")),
        "period": Key("float"),
        "dt": Key("float", REQUIRED),
        "duration": Key("float", REQUIRED),
        "observation_every": Key("int", REQUIRED),
        "burn_in": Key("float", 0.0),
        "stop": Key("float"),
    },
    "sensors": {
        "coords": Key("points"),
        "line": Key("floats"),
        "sigma_e": Key("float"),
        "sigma_e_relative": Key("float"),
        "probes": Key("points"),
    },
    "seeds": {
        "truth": Key("int", 0),
        "noise": Key("int", 1),
        "mc": Key("int", 2),
    },
    "calibration": {
        "parameter": Key("choice", "sigma_f", ("sigma_f",)),
        "grid_min": Key("float"),
        "grid_max": Key("float"),
        "grid_points": Key("int", 20),
        "spacing": Key("choice", "log", ("log", "linear")),
        "prior_lower": Key("float"),
        "prior_upper": Key("float"),
        "update_material": Key("choice", "yes", ("yes", "no")),
    },
    "montecarlo": {
        "samples": Key("int", 1000),
    },
}


def _convert(section, name, key: Key, raw: str):
    where = f"{section}.{name}"
    raw = raw.strip()
    try:
        if key.kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        if key.kind == "int":
            return int(raw)
        if key.kind == "str":
            return raw
        if key.kind == "choice":
            if raw not in key.choices:
                raise ConfigError(f"must be one of {', '.join(key.choices)}, got {raw!r}", where)
            return raw
        if key.kind == "floats":
            return tuple(float(t) for t in raw.replace(",", " ").split())
        if key.kind == "points":
            pts = []
            for chunk in raw.split(";"):
                if chunk.strip():
                    pts.append(tuple(float(t) for t in chunk.replace(",", " ").split()))
            return tuple(pts)
    except ValueError:
        raise ConfigError(f"cannot read {raw!r} as {key.kind}", where) from None
    raise ConfigError(f"unknown value type {key.kind}", where)


def _format(key: Key, value) -> str:
    if key.kind == "float":
        return repr(float(value))
    if key.kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if key.kind == "points":
        return "; ".join(" ".join(repr(float(c)) for c in p) for p in value)
    return str(value)


@dataclass(frozen=True)
class ScenarioConfig:
    """Typed configuration values grouped by section; ``None`` marks an unset key."""

    values: dict
    base_dir: str = field(default=".", compare=False)

    def __getattr__(self, name):
        values = object.__getattribute__(self, "values")
        if name in values:
            return SimpleNamespace(**values[name])
        raise AttributeError(name)

    def replace(self, section: str, **updates) -> "ScenarioConfig":
        """Copy with some keys overridden; the result is validated again."""
        vals = {s: dict(kv) for s, kv in self.values.items()}
        for k, v in updates.items():
            if k not in SCHEMA[section]:
                raise ConfigError("unknown key", f"{section}.{k}")
            vals[section][k] = v
        cfg = ScenarioConfig(vals, self.base_dir)
        validate(cfg)
        return cfg

    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()[:16]


def parse_config(text: str, base_dir: str = ".", check_physics: bool = True) -> ScenarioConfig:
    """Parse and validate configuration text.

    ``check_physics`` also builds the mesh to check sensor placement and the
    explicit stability limit.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       comment_prefixes=("#",), empty_lines_in_values=False)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc.message.splitlines()[0]}") from None
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError("unknown section", section)
    for section, keys in SCHEMA.items():
        got = parser[section] if parser.has_section(section) else {}
        for name in got:
            if name not in keys:
                raise ConfigError("unknown key", f"{section}.{name}")
        sec = {}
        for name, key in keys.items():
            if name in got:
                sec[name] = _convert(section, name, key, got[name])
            elif key.default is REQUIRED:
                raise ConfigError("missing required key", f"{section}.{name}")
            else:
                sec[name] = key.default
        values[section] = sec
    cfg = ScenarioConfig(values, base_dir)
    validate(cfg, check_physics)
    return cfg


def load_config(path, check_physics: bool = True) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, os.path.dirname(os.path.abspath(path)), check_physics)


def serialize(cfg: ScenarioConfig) -> str:
    lines = []
    for section, keys in SCHEMA.items():
        body = [f"{name} = {_format(key, cfg.values[section][name])}"
                for name, key in keys.items() if cfg.values[section][name] is not None]
        if body:
            lines.append(f"[{section}]")
            lines.extend(body)
            lines.append("")
    return "\n".join(lines)


def _need(cfg, section, *names):
    for name in names:
        if cfg.values[section][name] is None:
            raise ConfigError(f"required for this {section} setup", f"{section}.{name}")


def _nonneg(cfg, section, *names):
    for name in names:
        v = cfg.values[section][name]
        if v is not None and v < 0:
            raise ConfigError(f"must be non-negative, got {v}", f"{section}.{name}")


def _positive(cfg, section, *names):
    for name in names:
        v = cfg.values[section][name]
        if v is not None and not v > 0:
            raise ConfigError(f"must be positive, got {v}", f"{section}.{name}")


def validate(cfg: ScenarioConfig, check_physics: bool = True) -> None:
    v = cfg.values
    kind = v["scenario"]["kind"]
    if kind == "bar1d":
        _need(cfg, "geometry", "length", "n_elements")
    if kind == "custom":
        _need(cfg, "geometry", "mesh_file")
    _positive(cfg, "geometry", "length", "n_elements", "lx", "ly", "radius", "n_cells", "n_ring")
    _positive(cfg, "material", "base", "density", "nu", "length_scale", "true_coefficient")
    _nonneg(cfg, "material", "sigma")
    if v["material"]["field"] == "matern" and kind != "sdof":
        _need(cfg, "material", "length_scale")
    f = v["forcing"]
    if f["law"] == "sines":
        if (f["frequencies"] is None) == (f["angular_frequencies"] is None):
            raise ConfigError("give exactly one of frequencies / angular_frequencies",
                              "forcing.frequencies")
    else:
        _need(cfg, "forcing", "rise", "fall")
        _positive(cfg, "forcing", "rise", "fall")
    if f["load"] == "point":
        _need(cfg, "forcing", "point")
    if f["load"] == "edge":
        _need(cfg, "forcing", "edge_value")
        if f["edge_axis"] not in (0, 1):
            raise ConfigError("must be 0 or 1", "forcing.edge_axis")
    if f["noise"] == "matern":
        _need(cfg, "forcing", "l_f")
        if f["load"] == "point":
            raise ConfigError("a point load cannot carry a correlated noise field", "forcing.noise")
    _nonneg(cfg, "forcing", "sigma_f")
    _positive(cfg, "forcing", "nu_f", "l_f")
    d = v["damping"]
    if d["kind"] == "mass_proportional":
        _need(cfg, "damping", "a0")
        _nonneg(cfg, "damping", "a0")
    elif d["kind"] == "rayleigh":
        _need(cfg, "damping", "ratio", "frequency1", "frequency2")
    elif d["kind"] == "rayleigh_mesh":
        _need(cfg, "damping", "ratio")
    _nonneg(cfg, "damping", "ratio")
    t = v["time"]
    _positive(cfg, "time", "dt", "duration", "observation_every", "period")
    _nonneg(cfg, "time", "burn_in")
    if t["unit"] == "period" and kind == "custom" and t["period"] is None:
        raise ConfigError("custom scenarios need an explicit period", "time.period")
    if t["stop"] is not None and t["stop"] < t["burn_in"]:
        raise ConfigError("stop time precedes burn-in", "time.stop")
    s = v["sensors"]
    if (s["coords"] is None) == (s["line"] is None):
        raise ConfigError("give exactly one of coords / line", "sensors.coords")
    if s["line"] is not None and len(s["line"]) != 5:
        raise ConfigError("line needs x0 y0 x1 y1 count", "sensors.line")
    if (s["sigma_e"] is None) == (s["sigma_e_relative"] is None):
        raise ConfigError("give exactly one of sigma_e / sigma_e_relative", "sensors.sigma_e")
    _nonneg(cfg, "sensors", "sigma_e")
    _positive(cfg, "sensors", "sigma_e_relative")
    c = v["calibration"]
    for lo, hi in (("grid_min", "grid_max"), ("prior_lower", "prior_upper")):
        if c[lo] is not None and c[hi] is not None and not c[lo] < c[hi]:
            raise ConfigError(f"{lo} must be below {hi}", f"calibration.{lo}")
    _nonneg(cfg, "calibration", "grid_min", "prior_lower")
    if c["spacing"] == "log" and c["grid_min"] is not None and not c["grid_min"] > 0:
        raise ConfigError("log spacing needs a positive lower end", "calibration.grid_min")
    _positive(cfg, "calibration", "grid_points")
    _positive(cfg, "montecarlo", "samples")
    if check_physics:
        from .scenarios import check_physics as _check
        try:
            _check(cfg)
        except ConfigError:
            raise
        except StatFemError as exc:
            raise ConfigError(str(exc)) from exc
