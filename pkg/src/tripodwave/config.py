"""Scenario configuration: JSON documents checked against a schema and
turned into grids, packets, paths and parameters.

Every quantity is in natural units (hbar = m = kappa = 1 by default);
SI conversion is display only.
"""
from __future__ import annotations

import copy
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from . import model, paths
from .grid import MAX_DX, GridSpec, SpinorField, gaussian_packet

VEC2 = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
POS = {"type": "number", "exclusiveMinimum": 0}

LEG = {
    "type": "object",
    "required": ["direction", "speed", "duration"],
    "properties": {"direction": VEC2, "speed": {"type": "number", "minimum": 0}, "duration": POS},
    "additionalProperties": False,
}

PATH_SCHEMA = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["polygon", "square", "triangle", "circle", "rest", "builtin"]},
        "legs": {"type": "array", "items": LEG, "minItems": 1},
        "start": VEC2,
        "ramp": {"type": "number", "minimum": 0},
        "side": POS,
        "speed": POS,
        "speeds": {"anyOf": [POS, {"type": "array", "items": POS, "minItems": 4, "maxItems": 4}]},
        "clockwise": {"type": "boolean"},
        "n_legs": {"type": "integer", "minimum": 1},
        "radius": POS,
        "sweep": {"type": "number"},
        "heading": {"type": "number"},
        "tangent_time": {"type": "number", "minimum": 0},
        "duration": POS,
        "name": {"type": "string"},
        "scale": {"enum": ["full", "test"]},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "tripodwave scenario",
    "type": "object",
    "required": ["name", "grid", "packet", "path", "time"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "units": {"type": "string"},
        "physics": {
            "type": "object",
            "properties": {
                "mass": POS, "k_r": POS, "xi": {"type": "number"}, "omega0": {"type": "number", "minimum": 0},
                "hbar": POS,
            },
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "required": ["nx", "nz", "lx", "lz"],
            "properties": {
                "nx": {"type": "integer"}, "nz": {"type": "integer"}, "lx": POS, "lz": POS,
                "max_dx": POS,
            },
            "additionalProperties": False,
        },
        "packet": {
            "type": "object",
            "required": ["sigma"],
            "properties": {
                "center": VEC2,
                "sigma": POS,
                "k0": VEC2,
                "dark": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 4},
                "internal": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 8},
            },
            "additionalProperties": False,
        },
        "path": PATH_SCHEMA,
        "time": {
            "type": "object",
            "required": ["dt"],
            "properties": {"dt": POS, "t_end": POS},
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {
                "snapshots": {"type": "integer", "minimum": 0},
                "series_every": {"type": "integer", "minimum": 1},
                "csv_stride": {"type": "integer", "minimum": 1},
                "records": {"enum": ["corners", "final"]},
            },
            "additionalProperties": False,
        },
        "analysis": {
            "type": "object",
            "properties": {
                "threshold_frac": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "method": {"enum": ["label", "watershed"]},
                "density": {"enum": ["total", "dark"]},
                "smooth": {"type": "number", "minimum": 0},
                "fit_circle": {"type": "boolean"},
                "tangent_heading": {"type": "boolean"},
                "tolerances": {"type": "object", "additionalProperties": {"type": "number"}},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "units": "natural: length 1/kappa, time m/(hbar kappa^2), velocity hbar kappa/m",
    "physics": {"omega0": 100.0},
    "packet": {"center": [0.0, 0.0], "k0": [0.0, 0.0]},
    "output": {"snapshots": 0, "series_every": 200, "csv_stride": 4, "records": "corners"},
    "analysis": {"threshold_frac": 0.05, "method": "label", "density": "total", "smooth": 0.0, "fit_circle": False,
                 "tangent_heading": False,
                 "tolerances": {"position_frac": 0.05, "weight_abs": 0.03}},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc: dict) -> dict:
    """Schema-check ``doc`` and return it merged over the defaults."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    return _merge(DEFAULTS, doc)


def load(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    return validate(doc)


def set_key(cfg: dict, dotted: str, value) -> dict:
    """Copy of ``cfg`` with a dotted key (e.g. ``time.dt``) replaced."""
    out = copy.deepcopy(cfg)
    node = out
    parts = dotted.split(".")
    for k in parts[:-1]:
        node = node.setdefault(k, {})
    node[parts[-1]] = value
    return out


def params(cfg: dict) -> model.PhysicalParams:
    return model.PhysicalParams(**{k: float(v) for k, v in cfg.get("physics", {}).items()})


def grid(cfg: dict) -> GridSpec:
    g = cfg["grid"]
    return GridSpec(int(g["nx"]), int(g["nz"]), float(g["lx"]), float(g["lz"]))


def max_dx(cfg: dict) -> float:
    return float(cfg["grid"].get("max_dx", MAX_DX))


def build_path(spec: dict) -> paths.BeamPath:
    kind = spec["type"]
    name = spec.get("name", kind)
    if kind == "polygon":
        legs = [(tuple(l["direction"]), l["speed"], l["duration"]) for l in spec["legs"]]
        return paths.polygon(legs, start=tuple(spec.get("start", (0.0, 0.0))), name=name,
                             ramp=spec.get("ramp", 0.0))
    if kind == "square":
        speeds = spec.get("speeds", spec.get("speed"))
        if speeds is None:
            raise ConfigError("square path needs 'speed' or 'speeds'")
        return paths.square(spec["side"], speeds, spec.get("clockwise", True), spec.get("n_legs", 4),
                            name=spec.get("name", ""))
    if kind == "triangle":
        return paths.triangle(spec["side"], spec["speed"], spec.get("clockwise", True), spec.get("n_legs", 3),
                              name=spec.get("name", ""))
    if kind == "circle":
        return paths.circle(spec["radius"], spec["speed"], spec.get("sweep", -2 * math.pi),
                            spec.get("heading", math.pi / 2), tuple(spec.get("start", (0.0, 0.0))),
                            spec.get("tangent_time", 0.0), name=name)
    if kind == "rest":
        return paths.rest(spec["duration"], tuple(spec.get("start", (0.0, 0.0))), name=name)
    if kind == "builtin":
        table = paths.builtin_scenarios(spec.get("scale", "full"))
        try:
            return table[spec["name"]]
        except KeyError:
            raise ConfigError(f"unknown builtin path {spec.get('name')!r}; choose from {sorted(table)}") from None
    raise ConfigError(f"unknown path type {kind!r}")


def dark_spinor(cfg: dict) -> np.ndarray | None:
    """Initial dark amplitudes (c1, c2) if the packet is given in the dark basis."""
    d = cfg["packet"].get("dark")
    if d is None:
        return None
    v = np.asarray(d, dtype=float)
    s = v[:2] + 1j * v[2:4] if len(v) == 4 else v.astype(complex)
    n = np.linalg.norm(s)
    if n == 0:
        raise ConfigError("packet.dark must be nonzero")
    return s / n


def initial_field(cfg: dict, p: model.PhysicalParams | None = None, g: GridSpec | None = None) -> SpinorField:
    """Gaussian packet from the config, in the dark basis (``dark``) or bare (``internal``)."""
    p = p or params(cfg)
    g = g or grid(cfg)
    pk = cfg["packet"]
    center = tuple(map(float, pk.get("center", (0.0, 0.0))))
    k0 = tuple(map(float, pk.get("k0", (0.0, 0.0))))
    sigma = float(pk["sigma"])
    if pk.get("dark") is not None and pk.get("internal") is not None:
        raise ConfigError("packet takes either 'dark' or 'internal', not both")
    if pk.get("internal") is not None:
        v = np.asarray(pk["internal"], dtype=float)
        spin = v[:4] + 1j * v[4:8] if len(v) == 8 else v.astype(complex)
        return gaussian_packet(g, center, sigma, k0, spin)
    s = dark_spinor(cfg)
    if s is None:
        s = np.array([1.0, 0.0], dtype=complex)
    # Envelope from the bare helper (it does the boundary checks), then dressed.
    base = gaussian_packet(g, center, sigma, k0, (1, 0, 0, 0))
    env = base.psi[0]
    d0 = tuple(map(float, paths_start(cfg)))
    f = model.field_from_dark(g, s[0] * env, s[1] * env, d0, p)
    f.psi /= math.sqrt(f.norm2())
    return f


def paths_start(cfg: dict):
    return paths.displacement_at(build_path(cfg["path"]), 0.0)


def t_end(cfg: dict, path: paths.BeamPath | None = None) -> float:
    path = path or build_path(cfg["path"])
    return float(cfg["time"].get("t_end", path.duration))


def dump(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)
