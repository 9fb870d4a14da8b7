"""Run configuration: JSON schema, validation, environment overrides.

A run config is a single JSON document selecting the experiment kind and
carrying every module parameter as a named key.  Validation happens
before any simulation starts: unknown keys are rejected and every error
message carries the dotted key path.  Only the seed and the output
directory may be overridden from the environment (QRFFSIM_SEED,
QRFFSIM_OUT).
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from .errors import ConfigError

ENV_SEED = "QRFFSIM_SEED"
ENV_OUT = "QRFFSIM_OUT"

EXPERIMENTS = ("generate", "analyze", "battery", "calibrate", "sweep", "array")

_MISSING = object()


class _Field:
    def __init__(self, types, default=_MISSING, choices=None, required=False):
        self.types = types
        self.default = default
        self.choices = choices
        self.required = required


def _num(default=_MISSING, required=False):
    return _Field((int, float), default, required=required)


def _int(default=_MISSING, required=False):
    return _Field((int,), default, required=required)


def _str(default=_MISSING, choices=None, required=False):
    return _Field((str,), default, choices, required)


def _bool(default=_MISSING):
    return _Field((bool,), default)


def _numlist(default=_MISSING, required=False):
    return _Field(("numlist",), default, required=required)


def _strlist(default=_MISSING, required=False):
    return _Field(("strlist",), default, required=required)


_QRFF = {
    "f_bg": _num(required=True),
    "eta": _num(0.5),
    "t_r": _num(100e-12),
    "t_f": _num(100e-12),
    "phase": _num(0.0),
    "warmup": _Field((int, float, type(None)), None),
}

_DETECTOR = {
    "photon_rate": _num(required=True),
    "dark_rate": _num(0.0),
    "dead_time_hold": _num(4e-9),
    "dead_time_recharge": _num(4e-9),
    "afterpulse_prob": _num(0.0),
    "trap_lifetime": _num(25e-9),
}

_ARRAY = {
    "rows": _int(70),
    "cols": _int(32),
    "name": _str("custom"),
    "v_op": _num(33.3),
    "i_led": _num(2.0),
    "eta_global": _num(0.5),
    "f_bg": _num(5e6),
    "serializer_ratio": _int(70),
    "led_coupling": _num(2e7),
    "t_r": _num(100e-12),
    "t_f": _num(100e-12),
    "dead_time_hold": _num(4e-9),
    "dead_time_recharge": _num(4e-9),
    "afterpulse_prob": _num(0.0),
    "trap_lifetime": _num(25e-9),
}

_VARIATION = {
    "breakdown_mean": _num(32.5),
    "breakdown_sigma": _num(0.0),
    "dcr_median": _num(200.0),
    "dcr_sigma": _num(0.0),
    "hot_fraction": _num(0.0),
    "hot_multiplier": _num(100.0),
    "edge_sigma": _num(0.0),
    "eta_sigma": _num(0.0),
}

SCHEMA = {
    "experiment": _str(required=True, choices=EXPERIMENTS),
    "seed": _int(0),
    "out": _str("."),
    "format": _str("packed", choices=("packed", "ascii")),
    "threads": _int(1),
    "n_bits": _int(1_000_000),
    "qrff": _QRFF,
    "source": {"lambda_d": _num(required=True)},
    "detector": _DETECTOR,
    "analyze": {
        "input": _str(required=True),
        "max_lag": _int(3),
        "budget": {
            "bias_limit": _num(1e-3),
            "corr_limit": _num(1e-3),
            "entropy_floor": _num(0.997),
        },
    },
    "battery": {
        "inputs": _strlist(required=True),
        "alpha": _num(0.001),
        "split_bits": _int(required=True),
        "tests": _strlist(None),
        "block_len": _int(128),
        "m_serial": _Field((int, type(None)), None),
        "m_apen": _Field((int, type(None)), None),
    },
    "calibrate": {
        "target_sigma": _num(3e-4),
        "n_start": _int(1 << 17),
        "n_max": _int(1 << 25),
        "max_iter": _int(60),
    },
    "sweep": {
        "kind": _str("qrff", choices=("qrff", "array")),
        "parameter": _str(required=True),
        "values": _numlist(required=True),
        "n_bits": _int(1_000_000),
        "plot": _bool(False),
    },
    "array_run": {
        "mode": _str("bits", choices=("bits", "counts")),
        "metrics": _strlist(["bias", "a1"]),
        "n_bits": _int(100_000),
        "dump_channels": _bool(False),
        "plot": _bool(False),
    },
}

def _check_value(value, fld: _Field, path: str):
    if value is None and type(None) in fld.types:
        return value
    if "numlist" in fld.types:
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{path}: expected a list of numbers")
        return [float(v) for v in value]
    if "strlist" in fld.types:
        if value is None:
            return None
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{path}: expected a list of strings")
        return list(value)
    if bool in fld.types:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number, got a boolean")
    if not isinstance(value, tuple(t for t in fld.types if t is not type(None))):
        names = "/".join(getattr(t, "__name__", str(t)) for t in fld.types)
        raise ConfigError(f"{path}: expected {names}, got {type(value).__name__}")
    if fld.choices is not None and value not in fld.choices:
        raise ConfigError(f"{path}: must be one of {fld.choices}, got {value!r}")
    return value


def _validate_section(data: dict, schema: dict, path: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    out = {}
    for key, value in data.items():
        kpath = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"{kpath}: unknown key")
        spec = schema[key]
        if isinstance(spec, dict):
            out[key] = _validate_section(value, spec, kpath)
        else:
            out[key] = _check_value(value, spec, kpath)
    for key, spec in schema.items():
        if key in out:
            continue
        kpath = f"{path}.{key}" if path else key
        if isinstance(spec, dict):
            continue  # missing sub-sections are filled only when present
        if spec.required:
            raise ConfigError(f"{kpath}: required key missing")
        if spec.default is not _MISSING:
            out[key] = spec.default
    return out


def validate_config(raw: dict) -> dict:
    """Validate a raw config dict; returns a copy with defaults applied."""
    schema = dict(SCHEMA)
    schema["array"] = _ARRAY
    schema["variation"] = _VARIATION
    cfg = _validate_section(raw, schema, "")
    exp = cfg["experiment"]

    def _needs_single_qrff():
        if "qrff" not in cfg:
            raise ConfigError(f"experiment {exp!r} requires a 'qrff' section")
        if ("source" in cfg) == ("detector" in cfg):
            raise ConfigError(
                f"experiment {exp!r} requires exactly one of 'source' or 'detector'")

    if exp == "generate":
        if "array" not in cfg:
            _needs_single_qrff()
    elif exp == "calibrate":
        _needs_single_qrff()
    elif exp == "sweep":
        if "sweep" not in cfg:
            raise ConfigError("experiment 'sweep' requires a 'sweep' section")
        if cfg["sweep"]["kind"] == "qrff":
            _needs_single_qrff()
        elif "array" not in cfg:
            raise ConfigError("array sweep requires an 'array' section")
    elif exp == "analyze" and "analyze" not in cfg:
        raise ConfigError("experiment 'analyze' requires an 'analyze' section")
    elif exp == "battery" and "battery" not in cfg:
        raise ConfigError("experiment 'battery' requires a 'battery' section")
    elif exp == "array" and "array" not in cfg:
        raise ConfigError("experiment 'array' requires an 'array' section")
    return cfg


def apply_env_overrides(cfg: dict, env=os.environ) -> dict:
    """Override seed and output directory from the environment only."""
    out = dict(cfg)
    if ENV_SEED in env:
        try:
            out["seed"] = int(env[ENV_SEED])
        except ValueError as exc:
            raise ConfigError(f"{ENV_SEED} must be an integer") from exc
    if ENV_OUT in env:
        out["out"] = env[ENV_OUT]
    return out


def load_config(path) -> dict:
    """Read, parse, validate and env-override a JSON config file."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return apply_env_overrides(validate_config(raw))


def simulation_record(cfg: dict) -> dict:
    """The semantically meaningful subset of a config, used for digests.

    Output locations, formats and thread counts are excluded: they change
    where results go, not what bits are generated.
    """
    keys = ("experiment", "seed", "n_bits", "qrff", "source", "detector",
            "array", "variation", "sweep", "array_run", "calibrate")
    return {k: cfg[k] for k in keys if k in cfg}
