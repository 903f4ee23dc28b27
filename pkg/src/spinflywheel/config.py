"""Run configuration: INI-style key-value text, one section per module.

Units in files follow the lab conventions: keys ending in ``_mhz`` are
cyclic frequencies (omega = 2 pi x value x 1e6 rad/s), ``_nm`` lengths,
``_us`` times, ``_per_us`` rates, ``_amu`` atomic mass units.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from .constants import AMU, CA40_ION_MASS_AMU
from .engine import EngineConfig

TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


# section -> key -> (default, parser)
def _bool(v):
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_float(v):
    v = v.strip()
    return None if v.lower() in ("", "auto", "none") else float(v)


def _floats(v):
    return tuple(float(x) for x in v.replace(",", " ").split())


SCHEMA = {
    "engine": {
        "omega_t_mhz": ("1.4", float),
        "omega_z_mhz": ("13.0", float),
        "delta_s_mhz": ("2.73", float),
        "sw_period_nm": ("280.0", float),
        "mass_amu": (repr(CA40_ION_MASS_AMU), float),
        "s_hot": ("-0.084", float),
        "s_cold": ("-0.656", float),
        "pump_rate_per_us": ("auto", _opt_float),
        "pulse_fraction": ("0.4", float),
        "model": ("finite_rate", str),
        "linearized": ("false", _bool),
        "dim": ("128", int),
        "extra_heating_rate_per_us": ("0.0", float),
        "steps_per_period": ("400", int),
        "schedule_offset": ("0.0", float),
        "initial_nbar": ("0.0", float),
        "snapshots_per_period": ("20", int),
    },
    "tomography": {
        "n_rings": ("16", int),
        "base_angles": ("6", int),
        "shots": ("1000", int),
        "readout_dark_given_n0": ("0.0", float),
        "readout_bright_given_excited": ("0.0", float),
        "r_max": ("auto", _opt_float),
        "seed": ("1", int),
    },
    "fit": {
        "n_starts": ("4", int),
        "dim": ("64", int),
        "seed": ("0", int),
    },
    "sweep": {
        "t_he_us": ("3, 6, 9, 12, 15, 18", _floats),
    },
    "output": {
        "directory": ("out", str),
        "csv": ("true", _bool),
        "heatmaps": ("true", _bool),
        "curves": ("true", _bool),
    },
}

# sections that determine the numerical content of every artifact
HASHED_SECTIONS = ("engine", "tomography", "fit", "sweep")


@dataclass(frozen=True)
class RunConfig:
    engine: EngineConfig
    initial_nbar: float
    snapshots_per_period: int
    n_rings: int
    base_angles: int
    shots: int
    readout: tuple
    r_max: float | None
    tomo_seed: int
    n_starts: int
    fit_dim: int
    fit_seed: int
    t_he: tuple
    out_dir: Path
    emit_csv: bool = True
    emit_heatmaps: bool = True
    emit_curves: bool = True
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def t_he_seconds(self):
        return tuple(t * 1e-6 for t in self.t_he)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)

    def with_overrides(self, seed=None, out_dir=None) -> "RunConfig":
        raw = {s: dict(v) for s, v in self.raw.items()}
        if seed is not None:
            raw["tomography"]["seed"] = str(seed)
            raw["fit"]["seed"] = str(seed)
        if out_dir is not None:
            raw["output"]["directory"] = str(out_dir)
        return from_raw(raw)


def config_hash(raw: dict) -> str:
    """SHA-256 prefix over normalized values of the hashed sections."""
    parts = []
    for section in HASHED_SECTIONS:
        for key in sorted(SCHEMA[section]):
            parser = SCHEMA[section][key][1]
            parts.append(f"{section}.{key}={parser(raw[section][key])!r}")
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()[:16]


def _parse(raw, section, key):
    text = raw[section][key]
    try:
        return SCHEMA[section][key][1](text)
    except ValueError as exc:
        raise ConfigError(f"invalid value for [{section}] {key}: {text!r} ({exc})", f"{section}.{key}") from None


def from_raw(raw: dict) -> RunConfig:
    for section, keys in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", section)
        for key in keys:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key [{section}] {key}", f"{section}.{key}")
    full = {s: {k: d for k, (d, _) in keys.items()} for s, keys in SCHEMA.items()}
    for section, keys in raw.items():
        full[section].update(keys)
    p = {(s, k): _parse(full, s, k) for s in SCHEMA for k in SCHEMA[s]}

    rate = p["engine", "pump_rate_per_us"]
    try:
        eng = EngineConfig(
            omega_t=TWO_PI * p["engine", "omega_t_mhz"] * 1e6,
            omega_z=TWO_PI * p["engine", "omega_z_mhz"] * 1e6,
            delta_S=TWO_PI * p["engine", "delta_s_mhz"] * 1e6,
            k_SW=TWO_PI / (p["engine", "sw_period_nm"] * 1e-9),
            mass=p["engine", "mass_amu"] * AMU,
            s_hot=p["engine", "s_hot"],
            s_cold=p["engine", "s_cold"],
            pump_rate=None if rate is None else rate * 1e6,
            pulse_fraction=p["engine", "pulse_fraction"],
            model=p["engine", "model"],
            linearized=p["engine", "linearized"],
            dim=p["engine", "dim"],
            extra_heating_rate=p["engine", "extra_heating_rate_per_us"] * 1e6,
            steps_per_period=p["engine", "steps_per_period"],
            schedule_offset=p["engine", "schedule_offset"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [engine] section: {exc}", "engine") from None

    t_he = p["sweep", "t_he_us"]
    if not t_he or any(t <= 0 for t in t_he) or any(b <= a for a, b in zip(t_he, t_he[1:])):
        raise ConfigError("[sweep] t_he_us must be positive and strictly increasing", "sweep.t_he_us")
    if p["engine", "initial_nbar"] < 0:
        raise ConfigError("[engine] initial_nbar must be nonnegative", "engine.initial_nbar")
    if p["engine", "snapshots_per_period"] < 1:
        raise ConfigError("[engine] snapshots_per_period must be >= 1", "engine.snapshots_per_period")
    if p["tomography", "shots"] < 1:
        raise ConfigError("[tomography] shots must be >= 1", "tomography.shots")
    readout = (p["tomography", "readout_dark_given_n0"], p["tomography", "readout_bright_given_excited"])
    if not all(0.0 <= x <= 1.0 for x in readout):
        raise ConfigError("[tomography] readout probabilities must lie in [0, 1]", "tomography.readout")
    if p["fit", "n_starts"] < 1:
        raise ConfigError("[fit] n_starts must be >= 1", "fit.n_starts")

    return RunConfig(
        engine=eng,
        initial_nbar=p["engine", "initial_nbar"],
        snapshots_per_period=p["engine", "snapshots_per_period"],
        n_rings=p["tomography", "n_rings"],
        base_angles=p["tomography", "base_angles"],
        shots=p["tomography", "shots"],
        readout=readout,
        r_max=p["tomography", "r_max"],
        tomo_seed=p["tomography", "seed"],
        n_starts=p["fit", "n_starts"],
        fit_dim=p["fit", "dim"],
        fit_seed=p["fit", "seed"],
        t_he=t_he,
        out_dir=Path(p["output", "directory"]),
        emit_csv=p["output", "csv"],
        emit_heatmaps=p["output", "heatmaps"],
        emit_curves=p["output", "curves"],
        raw=full,
    )


def loads(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return from_raw({s: dict(cp[s]) for s in cp.sections()})


def load(path) -> RunConfig:
    return loads(Path(path).read_text())


def default_config_text() -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {d}" for k, (d, _) in keys.items())
        lines.append("")
    return "\n".join(lines)


__all__ = ["ConfigError", "RunConfig", "config_hash", "default_config_text", "load", "loads"]
