"""Run configuration: strict JSON schema, defaults, and a canonical hash.

Unknown keys are rejected so typos fail loudly; the hash is computed over the
fully merged configuration serialized with sorted keys, making it stable under
key reordering in the user's file.
"""

from __future__ import annotations

import copy
import hashlib
import json

from .errors import ConfigError

DEFAULTS: dict = {
    "seed": 0,
    "data": {
        "dims": [64, 64, 64],
        "n_grains": 110,
        "grain_radius": [5.0, 9.0],
        "inlet_axis": 0,
        "porosity_band": [0.1, 0.6],
        "base_speed": 0.2,
        "jump_positions": [],
        "jump_magnitude": 1.5,
        "front_start_frac": 0.15,
        "perturb_amp": 1.5,
        "n_tracers": 64,
        "n_frames": 80,
        "tracer_clearance": 1.5,
    },
    "preprocess": {
        "dt": 1.0,
        "q_jerk": 0.01,
        "r_meas": 0.25,
        "resample_factor": 0,
    },
    "gns": {
        "hidden": 128,
        "layers": 10,
        "radius": 32.0,
        "max_neighbors": 64,
        "patch_size": 32,
        "patch_pool": 2,
        "cnn_channels": [8, 16, 32],
        "lr": 5e-5,
        "weight_decay": 5e-4,
        "t_max": 200,
        "epochs": 600,
        "noise_std": 0.067,
    },
    "unet": {
        "n_in": 2,
        "base_channels": 16,
        "depth": 3,
        "lr": 1e-3,
        "weight_decay": 0.0,
        "epochs": 100,
        "batch_size": 2,
        "velocity_noise_std": 0.0,
    },
    "rollout": {
        "steps": 30,
        "pool_factor": 8,
        "boundary_ratio": 1.0,
        "dilation_radius": 1,
    },
    "eval": {
        "jump_halo": 1,
    },
    "ablate": {
        "variants": ["no-geometry", "no-velocity"],
    },
}

_SCALAR_TYPES = (int, float, str, bool)


def _merge(defaults: dict, user: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {here}")
        base = defaults[key]
        if isinstance(base, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here}: expected an object")
            out[key] = _merge(base, value, here)
        elif isinstance(base, list):
            if not isinstance(value, list):
                raise ConfigError(f"{here}: expected a list")
            out[key] = copy.deepcopy(value)
        else:
            if not isinstance(value, _SCALAR_TYPES):
                raise ConfigError(f"{here}: expected a scalar")
            out[key] = value
    return out


def load_config(path) -> dict:
    """Parse, validate against the defaults schema, and merge."""
    try:
        with open(path) as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return _merge(DEFAULTS, user, "")


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def scenario_config_from(cfg: dict):
    from .synthdata import ScenarioConfig

    d = cfg["data"]
    return ScenarioConfig(
        dims=tuple(d["dims"]),
        n_grains=d["n_grains"],
        grain_radius=tuple(d["grain_radius"]),
        inlet_axis=d["inlet_axis"],
        porosity_band=tuple(d["porosity_band"]),
        base_speed=d["base_speed"],
        jump_positions=tuple(d["jump_positions"]),
        jump_magnitude=d["jump_magnitude"],
        front_start_frac=d["front_start_frac"],
        perturb_amp=d["perturb_amp"],
        n_tracers=d["n_tracers"],
        n_frames=d["n_frames"],
        tracer_clearance=d["tracer_clearance"],
        seed=cfg["seed"],
    )
