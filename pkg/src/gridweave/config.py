"""Experiment configuration: JSON schema, validation and object construction."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import jsonschema

from .agents import TrainConfig
from .core import BatteryParams, ConfigError, HouseholdConfig
from .datagen import GridSourceModel, config_hash
from .env import EnvConfig

_NUM = {"type": "number"}
_NONNEG = {"type": "number", "minimum": 0}

BATTERY_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "capacity": _NONNEG,
        "efficiency": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "soc_min": {"type": "number", "minimum": 0, "maximum": 1},
        "soc_max": {"type": "number", "minimum": 0, "maximum": 1},
        "p_charge_max": _NONNEG,
        "p_discharge_max": _NONNEG,
        "sell_price": _NONNEG,
        "buy_price": _NONNEG,
    },
}

HOUSEHOLD_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["id"],
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "profile_type": {"enum": ["family", "business", "teenagers"]},
        "profile_peak_load": _NONNEG,
        "pv_peak_pv_gen": _NONNEG,
        "battery_random_soc_0": {"type": "boolean"},
        "battery": BATTERY_SCHEMA,
        "position": _NUM,
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["env"],
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "env": {
            "type": "object",
            "additionalProperties": False,
            "required": ["microgrids"],
            "properties": {
                "microgrids": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "array", "minItems": 1, "items": HOUSEHOLD_SCHEMA},
                },
                "horizon": {"type": "integer", "minimum": 1},
                "mode": {"enum": ["economic", "literal"]},
                "noise_enabled": {"type": "boolean"},
                "temperature_enabled": {"type": "boolean"},
                "spread_m": {"type": "number", "minimum": 0, "maximum": 1},
                "spread_h": {"type": "number", "minimum": 0, "maximum": 1},
                "n_actions": {"type": "integer", "minimum": 2},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nuclear_price": _NONNEG,
                "gas_price": _NONNEG,
                "nuclear_emission": _NONNEG,
                "gas_emission": _NONNEG,
                "nuclear_capacity": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "nuclear_capacity_fraction": {"type": "number", "exclusiveMinimum": 0},
                "buyback_ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "algo": {"enum": ["pg", "a2c"]},
                "n_actions": {"type": "integer", "minimum": 2},
                "lr_actor": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "lr_critic": {"type": "number", "exclusiveMinimum": 0},
                "hidden": {"type": "integer", "minimum": 1},
                "gamma": {"type": "number", "minimum": 0, "maximum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "rollout_steps": {"type": "integer", "minimum": 1},
                "training_steps": {"type": "integer", "minimum": 0},
                "entropy_coef": _NONNEG,
                "full_return": {"type": "boolean"},
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"soc_levels": {"type": "integer", "minimum": 2}},
        },
        "evaluation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"episodes": {"type": "integer", "minimum": 1}},
        },
    },
}

BUNDLED = ("train", "eval", "test")


@dataclass
class ExperimentConfig:
    raw: dict
    env: EnvConfig
    grid: GridSourceModel
    train: TrainConfig
    soc_levels: int
    eval_episodes: int
    seed: int
    output_dir: str | None

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def with_overrides(self, **env_overrides) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        raw["env"].update({k: v for k, v in env_overrides.items() if v is not None})
        return from_dict(raw)


def _household(d: dict) -> HouseholdConfig:
    d = dict(d)
    battery = BatteryParams(**d.pop("battery", {}))
    return HouseholdConfig(battery=battery, **d)


def from_dict(raw: dict) -> ExperimentConfig:
    """Validate ``raw`` and build the typed configuration objects."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    envd = dict(raw["env"])
    grid = GridSourceModel(**raw.get("grid", {}))
    microgrids = [[_household(h) for h in mg] for mg in envd.pop("microgrids")]
    seed = int(raw.get("seed", 0))
    env = EnvConfig(microgrids=microgrids, grid=grid, seed=seed, **envd)
    traind = dict(raw.get("train", {}))
    traind.setdefault("n_actions", env.n_actions)
    traind.setdefault("rollout_steps", env.horizon)
    try:
        train = TrainConfig(**traind)
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None
    return ExperimentConfig(
        raw=raw,
        env=env,
        grid=grid,
        train=train,
        soc_levels=int(raw.get("oracle", {}).get("soc_levels", 201)),
        eval_episodes=int(raw.get("evaluation", {}).get("episodes", 10)),
        seed=seed,
        output_dir=raw.get("output_dir"),
    )


def load(path: str | Path) -> ExperimentConfig:
    """Load a config file, or one of the bundled names ``train``/``eval``/``test``."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        text = resources.files("gridweave.configs").joinpath(f"{path}.json").read_text()
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(raw)


def train_config_dict(tc: TrainConfig) -> dict:
    return {f.name: getattr(tc, f.name) for f in fields(tc)}
