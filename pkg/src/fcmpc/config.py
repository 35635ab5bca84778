"""Sectioned key-value configuration for the command-line pipeline.

The file format is INI. Every key has a default derived from the
package's own dataclass defaults, so an empty file is a valid config.
Unknown sections or keys are rejected rather than ignored; values are
re-validated through the same dataclass constructors the library uses,
so a config cannot smuggle in states the API would refuse.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace

from .mpc import MPCParams
from .plant import DEFAULT_GAS, DEFAULT_NOISE_STD, DEFAULT_STACK, GasParams, StackParams

__all__ = ["ConfigError", "Config", "load_config", "default_config"]


class ConfigError(ValueError):
    """Bad config file: unknown keys, unparsable or invalid values."""


@dataclass(frozen=True)
class Config:
    stack: StackParams
    gas: GasParams
    n_train: int
    n_test: int
    restarts: int
    maxiter: int
    gtol: float
    mpc: MPCParams
    noise_std: tuple
    seed_data_train: int
    seed_data_test: int
    seed_hyperopt: int
    seed_simulate: int
    scenario: str
    out_dir: str

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("sample counts must be positive")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if self.maxiter < 1:
            raise ConfigError("maxiter must be >= 1")
        if self.gtol <= 0.0:
            raise ConfigError("gtol must be positive")
        if any(s < 0.0 for s in self.noise_std):
            raise ConfigError("noise stds must be nonnegative")
        if self.scenario not in ("step", "ramp"):
            raise ConfigError("scenario must be 'step' or 'ramp'")
        if not self.out_dir:
            raise ConfigError("out_dir must be nonempty")


def default_config() -> Config:
    return Config(
        stack=DEFAULT_STACK, gas=DEFAULT_GAS,
        n_train=1000, n_test=300,
        restarts=2, maxiter=200, gtol=1e-5,
        mpc=MPCParams(),
        noise_std=DEFAULT_NOISE_STD,
        seed_data_train=1001, seed_data_test=2002,
        seed_hyperopt=3003, seed_simulate=4004,
        scenario="step", out_dir="out",
    )


# Mapping of INI keys onto dataclass fields. [plant] and [gas] keys are
# the lowercased dataclass field names; the rest are listed explicitly.
_PLANT_KEYS = {f.name.lower(): f.name for f in fields(StackParams)}
_PLANT_INT = {"n_cell"}
_GAS_KEYS = {f.name.lower(): f.name for f in fields(GasParams)}

_MPC_SCALARS = {
    "horizon_pred": int, "horizon_ctrl": int,
    "q_track": float, "slack_penalty": float, "tighten_alpha": float,
    "v_ref": float, "p_limit": float, "p_margin": float,
}
_MPC_PAIRS = {
    # ini key -> (field, slot); slot None sets both entries
    "r_move_h2": ("r_move", 0), "r_move_air": ("r_move", 1),
    "du_min": ("du_min", None), "du_max": ("du_max", None),
    "q_h2_min": ("u_min", 0), "q_h2_max": ("u_max", 0),
    "q_air_min": ("u_min", 1), "q_air_max": ("u_max", 1),
}

_SIMPLE = {
    "sampling": {"n_train": ("n_train", int), "n_test": ("n_test", int)},
    "training": {"restarts": ("restarts", int), "maxiter": ("maxiter", int),
                 "gtol": ("gtol", float)},
    "noise": {"v_std": (0, float), "p_std": (1, float)},
    "seeds": {"data_train": ("seed_data_train", int),
              "data_test": ("seed_data_test", int),
              "hyperopt": ("seed_hyperopt", int),
              "simulate": ("seed_simulate", int)},
    "run": {"scenario": ("scenario", str), "out": ("out_dir", str)},
}

_SECTIONS = ("plant", "gas", "sampling", "training", "mpc", "noise", "seeds",
             "run")


def _parse(section, key, raw, typ):
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def load_config(path=None) -> Config:
    """Read an INI file on top of the defaults; None loads pure defaults."""
    cfg = default_config()
    if path is None:
        return cfg

    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None

    # Collect every override first, then construct the dataclasses once
    # at the end, so validation sees the finished value set and not some
    # half-merged intermediate.
    plant_over, gas_over, mpc_over, simple = {}, {}, {}, {}
    noise = list(cfg.noise_std)

    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if section == "plant":
                if key not in _PLANT_KEYS:
                    raise ConfigError(f"unknown key [plant] {key}")
                typ = int if key in _PLANT_INT else float
                plant_over[_PLANT_KEYS[key]] = _parse(section, key, raw, typ)
            elif section == "gas":
                if key not in _GAS_KEYS:
                    raise ConfigError(f"unknown key [gas] {key}")
                gas_over[_GAS_KEYS[key]] = _parse(section, key, raw, float)
            elif section == "mpc":
                if key in _MPC_SCALARS:
                    mpc_over[key] = _parse(section, key, raw, _MPC_SCALARS[key])
                elif key in _MPC_PAIRS:
                    field, slot = _MPC_PAIRS[key]
                    val = _parse(section, key, raw, float)
                    pair = list(mpc_over.get(field, getattr(cfg.mpc, field)))
                    if slot is None:
                        pair = [val, val]
                    else:
                        pair[slot] = val
                    mpc_over[field] = tuple(pair)
                else:
                    raise ConfigError(f"unknown key [mpc] {key}")
            elif section == "noise":
                if key not in _SIMPLE["noise"]:
                    raise ConfigError(f"unknown key [noise] {key}")
                slot, typ = _SIMPLE["noise"][key]
                noise[slot] = _parse(section, key, raw, typ)
            else:
                table = _SIMPLE[section]
                if key not in table:
                    raise ConfigError(f"unknown key [{section}] {key}")
                attr, typ = table[key]
                simple[attr] = _parse(section, key, raw, typ)

    try:
        return replace(
            cfg,
            stack=replace(cfg.stack, **plant_over) if plant_over else cfg.stack,
            gas=replace(cfg.gas, **gas_over) if gas_over else cfg.gas,
            mpc=replace(cfg.mpc, **mpc_over) if mpc_over else cfg.mpc,
            noise_std=tuple(noise),
            **simple,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        # dataclass validators reject out-of-range values
        raise ConfigError(str(exc)) from None
