"""Run configuration: defaults, YAML files, environment and ``key=value`` overrides.

Precedence, lowest first: built-in defaults, the config file, environment
variables ``SQUIDQSD_<KEY>`` (nested keys joined by ``__``, e.g.
``SQUIDQSD_INTEGRATOR__DT``), then command-line ``--set`` overrides.
A bare override key such as ``dt`` is accepted when it names exactly one
nested setting.
"""

from __future__ import annotations

import copy
import math
import os
from dataclasses import replace

import yaml

from .ensemble import ClassifierConfig, EnsembleConfig
from .errors import ConfigError
from .model import CircuitParams, DuffingParams, DuffingSystem, SquidSystem, derive_dimensionless, scale_params
from .qsd import IntegratorConfig

ENV_PREFIX = "SQUIDQSD_"
# environment variables with this prefix that are not config keys
ENV_RESERVED = {"SQUIDQSD_MAX_WORKERS", "SQUIDQSD_FULL_ACCEPTANCE"}

DEFAULTS = {
    "model": "squid",
    "C": 1e-13,
    "L": 3e-10,
    "R": 100.0,
    "Id": 0.9e-6,
    "omega_d_ratio": 1.0,
    "phi_x": 0.5,
    "beta_squid": 2.0,
    # optional overrides of derived dimensionless groups (null = derived)
    "zeta": None,
    "phi_d": None,
    "duffing": {"beta": 0.25, "g": 0.3, "Gamma": 0.125},
    "mu": 0.2,
    "fock_dim": 30,
    "scale": {"a": 1.0, "b": 1.0},
    "initial_state": "displaced_vacuum",
    "initial_state_path": None,
    "seed": 0,
    "workers": None,
    "integrator": {
        "dt": 1e-3,
        "t_total": None,
        "periods": 10.0,
        "sample_stride": 100,
        "scheme": "rk4",
        "track_frame": True,
        "recentre_threshold": 0.5,
        "phase_gauge": True,
        "squeeze_threshold": None,  # null = model default
        "max_frame_stretch": 4.0,
        "occupancy_abort": 1e-3,
    },
    # ensemble run length and averaging window, in drive periods
    "ensemble": {
        "n_trajectories": 16,
        "periods": 100.0,
        "transient_periods": 50.0,
        "convergence_target": 0.01,
    },
    "classifier": {
        "threshold": 0.95,
        "rel_width": 0.05,
        "window_periods": 40,
        "observable": "x1",
    },
    "sweep": {
        "a_values": [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4],
        "beta_values": [0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0],
        "fock_dim": "auto",
        "duffing_fock_dim": 15,
        "classify": False,
        "checkpoint": None,
    },
}


def _leaf_paths(tree, prefix=()):
    for k, v in tree.items():
        if isinstance(v, dict):
            yield from _leaf_paths(v, prefix + (k,))
        else:
            yield prefix + (k,)


def _lookup_path(key: str) -> tuple:
    parts = tuple(key.split("."))
    node = DEFAULTS
    for i, part in enumerate(parts):
        if not isinstance(node, dict) or part not in node:
            break
        node = node[part]
    else:
        if isinstance(node, dict):
            raise ConfigError(f"config key {key!r} is a section, not a value")
        return parts
    matches = [p for p in _leaf_paths(DEFAULTS) if p[-1] == parts[-1] and len(parts) == 1]
    if len(matches) == 1:
        return matches[0]
    if len(matches) > 1:
        options = ", ".join(".".join(m) for m in matches)
        raise ConfigError(f"config key {key!r} is ambiguous; use one of: {options}")
    raise ConfigError(f"unknown config key {key!r}")


def _set(cfg: dict, path: tuple, value) -> None:
    node = cfg
    for part in path[:-1]:
        node = node[part]
    node[path[-1]] = value


def _merge(cfg: dict, tree: dict, prefix: str = "") -> None:
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            _merge(cfg, v, key + ".")
        else:
            _set(cfg, _lookup_path(key), v)


def parse_value(text: str):
    """Parse an override value with YAML scalar rules (``1e-3``, ``true``, ``[1, 2]``)."""
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value {text!r}: {exc}") from exc
    return _float_or_str(value)


def _float_or_str(value):
    # YAML 1.1 reads "1e-3" (no decimal point) as a string
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    if isinstance(value, list):
        return [_float_or_str(v) for v in value]
    if isinstance(value, dict):
        return {k: _float_or_str(v) for k, v in value.items()}
    return value


def load_config(path=None, overrides=(), environ=None) -> dict:
    """Resolve a full configuration dictionary with every default filled in."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                tree = _float_or_str(yaml.safe_load(fh) or {})
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
        if not isinstance(tree, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        _merge(cfg, tree)
    environ = os.environ if environ is None else environ
    for name in sorted(environ):
        if name.startswith(ENV_PREFIX) and name not in ENV_RESERVED:
            key = name[len(ENV_PREFIX):].lower().replace("__", ".")
            _set(cfg, _lookup_path(_canonical_case(key)), parse_value(environ[name]))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, _, text = item.partition("=")
        _set(cfg, _lookup_path(key.strip()), parse_value(text.strip()))
    validate_config(cfg)
    return cfg


def _canonical_case(key: str) -> str:
    # environment names are upper case; map back onto the mixed-case keys
    lower = {".".join(p).lower(): ".".join(p) for p in _leaf_paths(DEFAULTS)}
    lower.update({p[-1].lower(): p[-1] for p in _leaf_paths(DEFAULTS)})
    return lower.get(key, key)


def _positive(cfg, key, value, allow_none=False):
    if value is None and allow_none:
        return
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0 or not math.isfinite(value):
        raise ConfigError(f"{key}: expected a positive number, got {value!r}")


def validate_config(cfg: dict) -> None:
    """Check types and ranges; raise ConfigError naming the offending key."""
    if cfg["model"] not in ("squid", "duffing"):
        raise ConfigError(f"model: expected 'squid' or 'duffing', got {cfg['model']!r}")
    for key in ("C", "L", "R", "omega_d_ratio", "beta_squid"):
        _positive(cfg, key, cfg[key])
    if not isinstance(cfg["Id"], (int, float)) or cfg["Id"] < 0:
        raise ConfigError(f"Id: expected a non-negative number, got {cfg['Id']!r}")
    for key in ("zeta", "phi_d"):
        v = cfg[key]
        if v is not None and (not isinstance(v, (int, float)) or v < 0):
            raise ConfigError(f"{key}: expected null or a non-negative number, got {v!r}")
    for key in ("beta", "g", "Gamma"):
        v = cfg["duffing"][key]
        if not isinstance(v, (int, float)) or v < 0 or (key == "beta" and v == 0):
            raise ConfigError(f"duffing.{key}: invalid value {v!r}")
    if not isinstance(cfg["mu"], (int, float)):
        raise ConfigError(f"mu: expected a number, got {cfg['mu']!r}")
    if not isinstance(cfg["fock_dim"], int) or cfg["fock_dim"] < 2:
        raise ConfigError(f"fock_dim: expected an integer >= 2, got {cfg['fock_dim']!r}")
    _positive(cfg, "scale.a", cfg["scale"]["a"])
    _positive(cfg, "scale.b", cfg["scale"]["b"])
    if cfg["initial_state"] not in ("displaced_vacuum", "vacuum", "file"):
        raise ConfigError(f"initial_state: expected displaced_vacuum|vacuum|file, got {cfg['initial_state']!r}")
    if cfg["initial_state"] == "file" and not cfg["initial_state_path"]:
        raise ConfigError("initial_state_path: required when initial_state=file")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {cfg['seed']!r}")
    if cfg["workers"] is not None and (not isinstance(cfg["workers"], int) or cfg["workers"] < 1):
        raise ConfigError(f"workers: expected a positive integer, got {cfg['workers']!r}")
    sweep = cfg["sweep"]
    if sweep["fock_dim"] != "auto" and (not isinstance(sweep["fock_dim"], int) or sweep["fock_dim"] < 2):
        raise ConfigError(f"sweep.fock_dim: expected 'auto' or an integer >= 2, got {sweep['fock_dim']!r}")
    for key in ("a_values", "beta_values"):
        vals = sweep[key]
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"sweep.{key}: expected a non-empty list")
        for v in vals:
            _positive(cfg, f"sweep.{key}", v)
    # the dataclass constructors perform the remaining range checks
    for label, build in (("integrator", integrator_config), ("ensemble", ensemble_config),
                         ("classifier", classifier_config)):
        try:
            build(cfg)
        except ConfigError as exc:
            raise ConfigError(f"{label}: {exc}") from exc
        except TypeError as exc:
            raise ConfigError(f"{label}: {exc}") from exc


def circuit_params(cfg: dict) -> CircuitParams:
    base = CircuitParams.from_dimensionless(
        C=float(cfg["C"]), L=float(cfg["L"]), R=float(cfg["R"]), I_d=float(cfg["Id"]),
        beta_squid=float(cfg["beta_squid"]), omega_d_ratio=float(cfg["omega_d_ratio"]),
        phi_x=float(cfg["phi_x"]),
    )
    a, b = float(cfg["scale"]["a"]), float(cfg["scale"]["b"])
    if a == 1.0 and b == 1.0:
        return base
    return scale_params(base, a, b)


def normalized_params(cfg: dict, circuit: CircuitParams | None = None):
    np_ = derive_dimensionless(circuit or circuit_params(cfg))
    if cfg["zeta"] is not None:
        np_ = replace(np_, zeta=float(cfg["zeta"]))
    if cfg["phi_d"] is not None:
        np_ = replace(np_, phi_d=float(cfg["phi_d"]))
    return np_


def duffing_params(cfg: dict) -> DuffingParams:
    d = cfg["duffing"]
    return DuffingParams(beta=float(d["beta"]), g=float(d["g"]), Gamma=float(d["Gamma"]), mu=float(cfg["mu"]))


def build_system(cfg: dict, fock_dim: int | None = None):
    n = int(cfg["fock_dim"] if fock_dim is None else fock_dim)
    if cfg["model"] == "duffing":
        return DuffingSystem(duffing_params(cfg), fock_dim=n)
    circuit = circuit_params(cfg)
    return SquidSystem(params=normalized_params(cfg, circuit), fock_dim=n, mu=float(cfg["mu"]), circuit=circuit)


def integrator_config(cfg: dict) -> IntegratorConfig:
    ic = cfg["integrator"]
    t_total = ic["t_total"]
    if t_total is None:
        t_total = float(ic["periods"]) * drive_period(cfg)
    return IntegratorConfig(
        dt=float(ic["dt"]), t_total=float(t_total), sample_stride=ic["sample_stride"],
        scheme=ic["scheme"], track_frame=bool(ic["track_frame"]),
        recentre_threshold=float(ic["recentre_threshold"]), phase_gauge=bool(ic["phase_gauge"]),
        squeeze_threshold=None if ic["squeeze_threshold"] is None else float(ic["squeeze_threshold"]),
        max_frame_stretch=float(ic["max_frame_stretch"]),
        occupancy_abort=float(ic["occupancy_abort"]),
    )


def drive_period(cfg: dict) -> float:
    """Dimensionless drive period; scale changes leave it unchanged."""
    return 2.0 * math.pi / (1.0 if cfg["model"] == "duffing" else float(cfg["omega_d_ratio"]))


def ensemble_config(cfg: dict) -> EnsembleConfig:
    e = cfg["ensemble"]
    period = drive_period(cfg)
    return EnsembleConfig(n_trajectories=e["n_trajectories"], seed=int(cfg["seed"]),
                          t_total=float(e["periods"]) * period,
                          t_transient=float(e["transient_periods"]) * period,
                          convergence_target=float(e["convergence_target"]),
                          initial_state=cfg["initial_state"])


def classifier_config(cfg: dict) -> ClassifierConfig:
    c = cfg["classifier"]
    return ClassifierConfig(threshold=float(c["threshold"]), rel_width=float(c["rel_width"]),
                            window_periods=int(c["window_periods"]), observable=c["observable"])
