"""Flat ``key = value [unit]`` run configuration with mandatory units.

Grammar (one entry per line)::

    # comment
    key = value unit        physical quantity, e.g. ``sweep.stop = 160 mT``
    key = value             dimensionless number, integer, flag or word
    key = a, b, c           list (``;`` separates flip-flop pairs)

Physical quantities must carry a unit from the table in ``UNITS``; a bare
number for a dimensioned key is an error, as is an unknown key or unit.  All
values are stored in SI (tesla, Hz, rad, m, m^-3, Hz/T).
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import constants as const

UNITS = {
    "field": {"T": 1.0, "mT": 1e-3, "uT": 1e-6, "G": 1e-4},
    "freq": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "angle": {"rad": 1.0, "deg": math.pi / 180.0},
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6},
    "density": {"cm^-3": 1e6, "m^-3": 1.0},
    "gyro": {"Hz/T": 1.0, "MHz/T": 1e6, "GHz/T": 1e9},
}

COMPENSATION = ("none", "fixed", "tracking")
FIT_MODELS = ("nv_geometry", "gslac", "acoustic", "arc")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


# key -> (kind, default); kind is a dimension from UNITS or one of
# int, float, bool, str, list_str, list_int, pairs, flipflop, float_or_none
SCHEMA: dict[str, tuple[str, object]] = {
    "seed": ("int", 0),
    "sweep.start": ("field", 0.0),
    "sweep.stop": ("field", 0.16),
    "sweep.points": ("int", 321),
    "geometry.theta": ("angle", math.radians(const.THETA_MIS_DEG)),
    "geometry.phi": ("angle", math.radians(const.PHI_MIS_DEG)),
    "coil.side1": ("field", 0.0),
    "coil.side2": ("field", 0.0),
    "coil.compensation": ("str", "none"),
    "coil.compensate_at": ("field", 38e-3),
    "coil.main_scale": ("float", 1.0),
    "nv.d": ("freq", const.D_NV / const.TWO_PI),
    "nv.e": ("freq", 0.0),
    "nv.gamma_e": ("gyro", const.GAMMA_E / const.TWO_PI),
    "p1.gamma_n": ("gyro", const.GAMMA_N / const.TWO_PI),
    "p1.q": ("freq", const.Q_P1 / const.TWO_PI),
    "p1.a_par": ("freq", const.A_P1_PAR / const.TWO_PI),
    "p1.a_perp": ("freq", const.A_P1_PERP / const.TWO_PI),
    "lines.nv": ("bool", True),
    "lines.orientations": ("list_str", ["alpha"]),
    "lines.nv_pairs": ("pairs", [(-1, 0), (1, 0), (-1, 1)]),
    "lines.nv_fractions": ("list_int", []),
    "lines.gslac": ("bool", False),
    "lines.psi": ("angle", math.radians(0.8)),
    "lines.gslac_fractions": ("list_int", []),
    "lines.flip_flip": ("bool", False),
    "lines.flip_flop": ("flipflop", []),
    "lines.p1": ("bool", False),
    "lines.p1_order": ("int", 1),
    "lines.p1_orientations": ("list_str", ["alpha", "beta", "gamma", "delta"]),
    "acoustic.enabled": ("bool", False),
    "acoustic.f_a": ("freq", const.F_ACOUSTIC),
    "acoustic.n_max": ("int", 10),
    "acoustic.thickness": ("length", const.WAFER_THICKNESS),
    "arc.enabled": ("bool", False),
    "arc.f_arc": ("freq", const.F_ARC),
    "arc.b_arc": ("field", const.B_ARC),
    "arc.b_center": ("field", const.B_GSLAC),
    "arc.n": ("list_int", [1, 2, 3]),
    "map.freq_start": ("freq", 0.0),
    "map.freq_stop": ("freq", 4e9),
    "map.freq_points": ("int", 801),
    "map.linewidth": ("freq", 1e6),
    "map.clip": ("float_or_none", None),
    "map.noise": ("float", 0.0),
    "map.threshold": ("float", 0.2),
    "map.min_separation": ("int", 3),
    "fit.model": ("str", "nv_geometry"),
    "fit.free": ("list_str", ["theta", "phi"]),
    "fit.restarts": ("int", 8),
    "fit.bootstrap": ("int", 200),
    "fit.tolerance": ("freq", 20e6),
    "fit.exclusion": ("freq", 5e6),
    "fit.rounds": ("int", 2),
    "dipolar.rho": ("density", const.RHO_NV * 1e6),
    "dipolar.spin": ("float", 1.0),
    "dipolar.f_a": ("freq", 145e6),
    "dipolar.p1": ("float", 0.02),
    "dipolar.mc": ("bool", False),
    "dipolar.n_defects": ("int", 1000),
    "dipolar.trials": ("int", 1000),
}

# fit-model parameters: config name -> (model parameter, dimension)
FIT_PARAMETERS = {
    "theta": ("theta_deg", "angle"),
    "phi": ("phi_deg", "angle"),
    "d": ("d_hz", "freq"),
    "e": ("e_hz", "freq"),
    "coil1": ("coil1_t", "field"),
    "coil2": ("coil2_t", "field"),
    "main_scale": ("main_scale", "float"),
    "psi": ("psi_deg", "angle"),
    "f_a": ("f_a_hz", "freq"),
    "f_arc": ("f_arc_hz", "freq"),
    "b_arc": ("b_arc_t", "field"),
    "b_center": ("b_center_t", "field"),
}

# dynamic keys: width.<class> (freq), weight.<class> (float),
# fit.init.<param>, fit.lower.<param>, fit.upper.<param>
_DYNAMIC = re.compile(r"^(width|weight)\.([A-Za-z_][\w().,+\-|/]*)$|^fit\.(init|lower|upper)\.(\w+)$")
_NUMBER = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*(\S*)$")


def _quantity(key: str, text: str, dim: str) -> float:
    m = _NUMBER.match(text)
    if not m:
        raise ConfigError(f"{key}: cannot parse {text!r} as a number with unit")
    value, unit = float(m.group(1)), m.group(2)
    if dim == "float":
        if unit:
            raise ConfigError(f"{key}: dimensionless value takes no unit (got {unit!r})")
        return value
    if not unit:
        raise ConfigError(f"{key}: missing unit; expected one of {sorted(UNITS[dim])}")
    try:
        return value * UNITS[dim][unit]
    except KeyError:
        raise ConfigError(f"{key}: invalid unit {unit!r}; expected one of {sorted(UNITS[dim])}") from None


def _int(key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def _split(text: str, sep: str = ",") -> list[str]:
    return [t.strip() for t in text.split(sep) if t.strip()]


def _parse(key: str, kind: str, text: str):
    if kind in UNITS or kind == "float":
        return _quantity(key, text, kind)
    if kind == "float_or_none":
        return None if text.lower() == "none" else _quantity(key, text, "float")
    if kind == "int":
        return _int(key, text)
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {text!r}")
    if kind == "str":
        return text
    if kind == "list_str":
        return _split(text)
    if kind == "list_int":
        return [_int(key, t) for t in _split(text)]
    if kind == "pairs":
        # "-1:0, +1:0"
        out = []
        for item in _split(text):
            parts = item.split(":")
            if len(parts) != 2:
                raise ConfigError(f"{key}: level pair {item!r} must look like -1:0")
            out.append((_int(key, parts[0]), _int(key, parts[1])))
        return out
    if kind == "flipflop":
        # "nv_single/gamma/-1,1 - nv_single/alpha/-1,0; ..."
        out = []
        for item in _split(text, ";"):
            parts = [p.strip() for p in item.split(" - ")]
            if len(parts) != 2 or not all(parts):
                raise ConfigError(f"{key}: flip-flop entry {item!r} must be 'KEY_A - KEY_B'")
            out.append(tuple(parts))
        return out
    raise AssertionError(kind)


@dataclass
class RunConfig:
    values: dict
    widths: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    fit_init: dict = field(default_factory=dict)
    fit_lower: dict = field(default_factory=dict)
    fit_upper: dict = field(default_factory=dict)
    source: str = ""

    def __getitem__(self, key: str):
        return self.values[key]

    def canonical(self) -> dict:
        """JSON-ready dict of every resolved value (SI units)."""
        def clean(v):
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v
        return {
            "values": {k: clean(v) for k, v in sorted(self.values.items())},
            "width": dict(sorted(self.widths.items())),
            "weight": dict(sorted(self.weights.items())),
            "fit.init": dict(sorted(self.fit_init.items())),
            "fit.lower": dict(sorted(self.fit_lower.items())),
            "fit.upper": dict(sorted(self.fit_upper.items())),
        }

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _validate(cfg: RunConfig) -> None:
    v = cfg.values
    if v["coil.compensation"] not in COMPENSATION:
        raise ConfigError(f"coil.compensation: expected one of {COMPENSATION}")
    if v["fit.model"] not in FIT_MODELS:
        raise ConfigError(f"fit.model: expected one of {FIT_MODELS}")
    if v["sweep.points"] < 2 or not v["sweep.stop"] > v["sweep.start"]:
        raise ConfigError("sweep.points: need >= 2 points and sweep.stop > sweep.start")
    if v["map.freq_points"] < 3 or not v["map.freq_stop"] > v["map.freq_start"]:
        raise ConfigError("map.freq_points: need >= 3 points and map.freq_stop > map.freq_start")
    from .geometry import ORIENTATIONS

    for key in ("lines.orientations", "lines.p1_orientations"):
        bad = [o for o in v[key] if o not in ORIENTATIONS]
        if bad:
            raise ConfigError(f"{key}: unknown orientation(s) {bad}")
    for name in v["fit.free"]:
        if name not in FIT_PARAMETERS:
            raise ConfigError(f"fit.free: unknown parameter {name!r}")


def parse_config(text: str, source: str = "<string>", base: RunConfig | None = None) -> RunConfig:
    """Parse config text; entries override ``base`` (e.g. a preset) when given."""
    if base is None:
        values = {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in SCHEMA.items()}
        cfg = RunConfig(values, source=source)
    else:
        cfg = RunConfig(
            dict(base.values), dict(base.widths), dict(base.weights), dict(base.fit_init),
            dict(base.fit_lower), dict(base.fit_upper), f"{base.source}+{source}",
        )
        values = cfg.values
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, text_value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{key}: given twice ({source}:{lineno})")
        seen.add(key)
        if key in SCHEMA:
            values[key] = _parse(key, SCHEMA[key][0], text_value)
            continue
        m = _DYNAMIC.match(key)
        if not m:
            raise ConfigError(f"{key}: unknown key ({source}:{lineno})")
        if m.group(1) == "width":
            w = _quantity(key, text_value, "freq")
            if not w > 0:
                raise ConfigError(f"{key}: linewidth must be positive")
            cfg.widths[m.group(2)] = w
        elif m.group(1) == "weight":
            cfg.weights[m.group(2)] = _quantity(key, text_value, "float")
        else:
            which, name = m.group(3), m.group(4)
            if name not in FIT_PARAMETERS:
                raise ConfigError(f"{key}: unknown fit parameter {name!r}")
            getattr(cfg, f"fit_{which}")[name] = _quantity(key, text_value, FIT_PARAMETERS[name][1])
    _validate(cfg)
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path), base)


def preset_names() -> list[str]:
    root = resources.files("nvodmr") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def preset_text(name: str) -> str:
    path = resources.files("nvodmr") / "presets" / f"{name}.cfg"
    if not path.is_file():
        raise ConfigError(f"--preset: unknown preset {name!r}; available: {preset_names()}")
    return path.read_text()


def to_model_value(name: str, value: float) -> tuple[str, float]:
    """Config fit parameter (SI) -> (model parameter, model units)."""
    param, dim = FIT_PARAMETERS[name]
    if dim == "angle":
        return param, math.degrees(value)
    return param, value
