"""Run configuration: a YAML document with unit-suffixed keys.

Fields are given in the units named by their key (B_mT, B_AC_G, zeta_deg, ...)
and converted to the internal units (mT, rad, MHz, us) by ``RunConfig``.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import yaml

from .signal_synth import ACFieldVector, LineShapeParams
from .spin_core import PhysicalConstants, StaticField

NUMBER = "number"
NUMBER_LIST = "number_list"

# default value and type for every recognised key; None means "unset"
DEFAULTS = {
    "constants": {"D_MHz": 2870.0, "gamma_MHz_per_mT": 28.02495},
    "static_field": {"B_mT": 10.7, "theta_deg": 90.0},
    "ac_field": {"B_AC_G": 2.85, "zeta_deg": 21.6, "eta_deg": 38.8},
    "lineshape": {"fwhm_MHz": 8.0, "contrast_scale": 0.1, "exponent": 2.0},
    "grids": {
        "theta_start_deg": 0.0, "theta_stop_deg": 180.0, "theta_step_deg": 1.0,
        "freq_start_MHz": 2860.0, "freq_stop_MHz": 2960.0, "freq_step_MHz": 0.25,
        "time_start_us": 0.0, "time_stop_us": 6.0, "time_step_us": 0.01,
        "eta_list_deg": [float(x) for x in range(0, 181, 15)],
    },
    "spectrum": {"noise_sigma": 0.0, "fit": True},
    "rabi": {"transition": "0-", "T_R_us": 5.0, "a": 0.3, "c": 1.0, "noise_sigma": 0.0, "fit": True},
    "ratio": {"noise_frac": 0.0, "fit": True},
    "seed": 0,
}

_TYPES = {
    "rabi.transition": str,
    "spectrum.fit": bool, "rabi.fit": bool, "ratio.fit": bool,
    "seed": int,
    "grids.eta_list_deg": NUMBER_LIST,
}
_TRANSITIONS = ("0-", "0+", "-+")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


def _check_type(path, value):
    kind = _TYPES.get(path, NUMBER)
    if kind is NUMBER:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{path}: must be finite")
        return float(value)
    if kind is NUMBER_LIST:
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{path}: expected a non-empty list of numbers")
        return [_check_type(f"{path}[{i}]", v) for i, v in enumerate(value)]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if kind is not int and not isinstance(value, kind):
        raise ConfigError(f"{path}: expected {kind.__name__}, got {value!r}")
    return value


def _merge(base: dict, override: dict, prefix: str = ""):
    if not isinstance(override, dict):
        raise ConfigError(f"{prefix.rstrip('.') or '<root>'}: expected a mapping")
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"{path}: unknown key")
        if isinstance(base[key], dict):
            _merge(base[key], value, path + ".")
        else:
            base[key] = _check_type(path, value)


def resolve(document: dict | None) -> dict:
    """Defaults overlaid with ``document``, type-checked, in CLI units."""
    out = copy.deepcopy(DEFAULTS)
    if document:
        _merge(out, document)
    if out["rabi"]["transition"] not in _TRANSITIONS:
        raise ConfigError(f"rabi.transition: expected one of {_TRANSITIONS}")
    return out


def load(path=None, text: str | None = None) -> dict:
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
    try:
        doc = yaml.safe_load(text) if text else None
    except yaml.YAMLError as err:
        raise ConfigError(f"config is not valid YAML: {err}") from err
    return resolve(doc)


def _grid(start, stop, step, path):
    if not step > 0:
        raise ConfigError(f"grids.{path}_step: must be positive")
    if not stop > start:
        raise ConfigError(f"grids.{path}_stop: must exceed {path}_start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [start + i * step for i in range(n)]


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration in internal units."""

    resolved: dict  # CLI-unit document, echoed into outputs
    consts: PhysicalConstants
    field: StaticField
    ac: ACFieldVector
    lineshape: LineShapeParams
    seed: int

    @classmethod
    def from_resolved(cls, doc: dict, seed: int | None = None) -> "RunConfig":
        doc = copy.deepcopy(doc)
        if seed is not None:
            doc["seed"] = seed
        try:
            c = doc["constants"]
            consts = PhysicalConstants(c["D_MHz"], c["gamma_MHz_per_mT"])
        except ValueError as err:
            raise ConfigError(f"constants: {err}") from err
        s = doc["static_field"]
        theta = math.pi / 2 if s["theta_deg"] == 90.0 else math.radians(s["theta_deg"])
        try:
            field = StaticField(s["B_mT"], theta)
        except ValueError as err:
            raise ConfigError(f"static_field: {err}") from err
        a = doc["ac_field"]
        zeta = math.pi / 2 if a["zeta_deg"] == 90.0 else math.radians(a["zeta_deg"])
        try:
            ac = ACFieldVector(a["B_AC_G"] / 10.0, zeta, math.radians(a["eta_deg"]) % (2 * math.pi))
        except ValueError as err:
            raise ConfigError(f"ac_field: {err}") from err
        ls = doc["lineshape"]
        try:
            lineshape = LineShapeParams(ls["fwhm_MHz"], ls["contrast_scale"], ls["exponent"])
        except ValueError as err:
            raise ConfigError(f"lineshape: {err}") from err
        return cls(doc, consts, field, ac, lineshape, doc["seed"])

    @property
    def theta_grid_deg(self):
        g = self.resolved["grids"]
        return _grid(g["theta_start_deg"], g["theta_stop_deg"], g["theta_step_deg"], "theta")

    @property
    def freq_grid(self):
        g = self.resolved["grids"]
        return _grid(g["freq_start_MHz"], g["freq_stop_MHz"], g["freq_step_MHz"], "freq")

    @property
    def time_grid(self):
        g = self.resolved["grids"]
        return _grid(g["time_start_us"], g["time_stop_us"], g["time_step_us"], "time")

    @property
    def eta_grid_deg(self):
        return list(self.resolved["grids"]["eta_list_deg"])


MEASUREMENT_KEYS = {
    "R_0plus_MHz": True, "R_0minus_MHz": True, "R_minusplus_MHz": True, "ratio_rel": True,
    "sigma_0plus_MHz": False, "sigma_0minus_MHz": False, "sigma_minusplus_MHz": False,
    "sigma_ratio_rel": False, "B_mT": True, "theta_deg": True,
}


def load_measurements(path) -> dict:
    """Measurement document for ``invert``; every violation names its field."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read measurements {path}: {err}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"measurements are not valid YAML: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError("measurements: expected a mapping")
    out = {}
    for key in doc:
        if key not in MEASUREMENT_KEYS:
            raise ConfigError(f"{key}: unknown measurement field")
    for key, required in MEASUREMENT_KEYS.items():
        if key not in doc:
            if required:
                raise ConfigError(f"{key}: required measurement field is missing")
            out[key] = 0.0
            continue
        out[key] = _check_type(key, doc[key])
        if out[key] < 0 and key != "theta_deg":
            raise ConfigError(f"{key}: must be >= 0")
    if not out["ratio_rel"] > 0:
        raise ConfigError("ratio_rel: must be positive")
    return out
