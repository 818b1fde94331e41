"""Seeded synthesis of household demand, PV output and grid price/emission signals."""
from __future__ import annotations

import csv
import hashlib
import json
import zlib
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ConfigError, HouseholdConfig, ProfileType

HOURS = 24

# Normalised hourly shapes (peak exactly 1.0), hour 0 = midnight.
BASE_CURVES: dict[ProfileType, tuple[float, ...]] = {
    # morning (7-9) and early-afternoon (13-15) peaks
    ProfileType.FAMILY: (
        0.30, 0.25, 0.20, 0.20, 0.20, 0.30, 0.50, 0.90, 1.00, 0.90, 0.60, 0.50,
        0.60, 0.85, 0.95, 0.85, 0.60, 0.55, 0.60, 0.60, 0.55, 0.50, 0.40, 0.35,
    ),
    # high use in the middle of the day (10-16)
    ProfileType.BUSINESS: (
        0.20, 0.20, 0.20, 0.20, 0.20, 0.25, 0.30, 0.40, 0.60, 0.80, 0.95, 1.00,
        0.95, 0.90, 0.95, 0.90, 0.80, 0.60, 0.40, 0.30, 0.25, 0.20, 0.20, 0.20,
    ),
    # late afternoon through early morning (17-02)
    ProfileType.TEENAGERS: (
        0.90, 0.80, 0.70, 0.40, 0.30, 0.20, 0.20, 0.20, 0.25, 0.30, 0.30, 0.35,
        0.40, 0.40, 0.45, 0.50, 0.60, 0.80, 0.90, 0.95, 1.00, 1.00, 0.95, 0.90,
    ),
}

LOAD_NOISE_VAR = 0.01
PV_NOISE_VAR = 0.1
PV_START_HOUR = 5
PV_DAYLIGHT_HOURS = 14
TEMPERATURE_SWING = 0.10

# substream tags
_LOAD, _PV, _TEMP, _SOC = 1, 2, 3, 4


@dataclass(frozen=True)
class ProfileShape:
    profile_type: ProfileType
    base_curve: np.ndarray


@dataclass(frozen=True)
class GridSourceModel:
    nuclear_price: float = 0.2
    gas_price: float = 0.6
    nuclear_emission: float = 0.05
    gas_emission: float = 0.5
    nuclear_capacity: float | None = None  # None: 60% of the peak reference demand
    nuclear_capacity_fraction: float = 0.6
    buyback_ratio: float = 0.5

    def __post_init__(self) -> None:
        if self.gas_price <= self.nuclear_price:
            raise ConfigError("gas_price must exceed nuclear_price")
        if self.gas_emission <= self.nuclear_emission:
            raise ConfigError("gas_emission must exceed nuclear_emission")
        if min(self.nuclear_price, self.nuclear_emission) < 0:
            raise ConfigError("grid prices and emissions must be non-negative")
        if not 0.0 < self.buyback_ratio < 1.0:
            raise ConfigError("buyback_ratio must be in (0, 1)")
        if self.nuclear_capacity is not None and self.nuclear_capacity <= 0:
            raise ConfigError("nuclear_capacity must be positive")

    def resolve_capacity(self, reference_demand: np.ndarray) -> float:
        if self.nuclear_capacity is not None:
            return float(self.nuclear_capacity)
        peak = float(np.max(reference_demand, initial=0.0))
        cap = self.nuclear_capacity_fraction * peak
        # an idle grid still needs a positive capacity; nuclear then covers everything
        return cap if cap > 0 else 1.0


@dataclass
class EpisodeData:
    """Series for one episode. ``load``/``pv`` are ``(H, T)``; grid series ``(T,)``."""

    household_ids: list[str]
    load: np.ndarray
    pv: np.ndarray
    r_sd: np.ndarray
    r_bd: np.ndarray
    c: np.ndarray
    seed: int

    @property
    def horizon(self) -> int:
        return self.load.shape[1]


def substream(seed: int, household_id: str, tag: int) -> np.random.Generator:
    """Independent generator per (seed, household, series)."""
    key = zlib.crc32(household_id.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key, tag))))


def base_profile(profile_type: ProfileType | str, horizon: int = HOURS) -> ProfileShape:
    ptype = ProfileType(profile_type)
    daily = np.asarray(BASE_CURVES[ptype])
    return ProfileShape(ptype, daily[np.arange(horizon) % HOURS])


def temperature_factor(rng: np.random.Generator, horizon: int = HOURS) -> np.ndarray:
    """Daily multiplicative demand scaling within +-10%, warmest mid-afternoon."""
    hours = np.arange(horizon) % HOURS
    offset = rng.normal(0.0, 0.3)
    temp = np.clip(np.sin(2 * np.pi * (hours - 9) / HOURS) + offset, -1.0, 1.0)
    return 1.0 + TEMPERATURE_SWING * temp


def gen_load(shape: ProfileShape, peak_load: float, rng: np.random.Generator | None,
             noise_enabled: bool = True, temperature: np.ndarray | None = None) -> np.ndarray:
    if peak_load < 0:
        raise ConfigError("peak_load must be >= 0")
    load = peak_load * shape.base_curve
    if temperature is not None:
        load = load * temperature
    if noise_enabled:
        load = load + rng.normal(0.0, np.sqrt(LOAD_NOISE_VAR), size=load.shape)
    return np.maximum(load, 0.0)


def pv_curve(horizon: int = HOURS) -> np.ndarray:
    hours = np.arange(horizon) % HOURS
    curve = np.sin(np.pi * (hours - PV_START_HOUR) / PV_DAYLIGHT_HOURS)
    daylight = (hours >= PV_START_HOUR) & (hours <= PV_START_HOUR + PV_DAYLIGHT_HOURS)
    return np.where(daylight, np.maximum(curve, 0.0), 0.0)


def gen_pv(pv_peak: float, rng: np.random.Generator | None, noise_enabled: bool = True,
           horizon: int = HOURS) -> np.ndarray:
    """Shifted half-sine from 05:00 to 19:00; cloud noise only in daylight."""
    if pv_peak < 0:
        raise ConfigError("pv_peak must be >= 0")
    curve = pv_curve(horizon)
    if noise_enabled:
        noise = rng.normal(0.0, np.sqrt(PV_NOISE_VAR), size=curve.shape)
        curve = np.where(curve > 0, curve + noise, 0.0)
    return np.maximum(pv_peak * curve, 0.0)


def reference_demand(households: Sequence[HouseholdConfig], horizon: int = HOURS) -> np.ndarray:
    """Expected aggregate net draw of all households with no batteries and no noise."""
    total = np.zeros(horizon)
    for hh in households:
        total += hh.profile_peak_load * base_profile(hh.profile_type, horizon).base_curve
        total -= hh.pv_peak_pv_gen * pv_curve(horizon)
    return np.maximum(total, 0.0)


def gen_grid_signals(model: GridSourceModel, demand: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Merit-order blend: nuclear first, gas covers the remainder."""
    demand = np.asarray(demand, dtype=float)
    if np.any(demand < 0):
        raise ConfigError("reference demand must be non-negative")
    cap = model.resolve_capacity(demand)
    if cap <= 0:
        raise ConfigError("nuclear_capacity must be positive")
    share = np.ones_like(demand)
    over = demand > cap
    share[over] = cap / demand[over]
    r_sd = share * model.nuclear_price + (1 - share) * model.gas_price
    c = share * model.nuclear_emission + (1 - share) * model.gas_emission
    return r_sd, model.buyback_ratio * r_sd, c


def generate_episode(households: Sequence[HouseholdConfig], grid: GridSourceModel, seed: int,
                     horizon: int = HOURS, noise_enabled: bool = True,
                     temperature_enabled: bool = False) -> EpisodeData:
    ids = [hh.id for hh in households]
    if len(set(ids)) != len(ids):
        raise ConfigError("household ids must be unique")
    load = np.empty((len(households), horizon))
    pv = np.empty((len(households), horizon))
    for i, hh in enumerate(households):
        shape = base_profile(hh.profile_type, horizon)
        temp = (temperature_factor(substream(seed, hh.id, _TEMP), horizon)
                if temperature_enabled else None)
        load[i] = gen_load(shape, hh.profile_peak_load, substream(seed, hh.id, _LOAD),
                           noise_enabled, temp)
        pv[i] = gen_pv(hh.pv_peak_pv_gen, substream(seed, hh.id, _PV), noise_enabled, horizon)
    r_sd, r_bd, c = gen_grid_signals(grid, reference_demand(households, horizon))
    return EpisodeData(ids, load, pv, r_sd, r_bd, c, int(seed))


def initial_soc(hh: HouseholdConfig, seed: int) -> float:
    b = hh.battery
    if not hh.battery_random_soc_0:
        return b.soc_mid
    return float(substream(seed, hh.id, _SOC).uniform(b.soc_min, b.soc_max))


def _write_series(path: Path, values: np.ndarray) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "value"])
        for t, v in enumerate(values):
            writer.writerow([t, repr(float(v))])


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_episode_bundle(data: EpisodeData, out: Path, config: dict | None = None) -> list[Path]:
    """One CSV per series plus ``manifest.json``; returns the written paths."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, hid in enumerate(data.household_ids):
        for name, arr in (("load", data.load[i]), ("pv", data.pv[i])):
            p = out / f"{name}_{hid}.csv"
            _write_series(p, arr)
            written.append(p)
    for name in ("r_sd", "r_bd", "c"):
        p = out / f"{name}.csv"
        _write_series(p, getattr(data, name))
        written.append(p)
    manifest = {
        "seed": data.seed,
        "horizon": data.horizon,
        "households": data.household_ids,
        "config_hash": config_hash(config) if config is not None else None,
        "files": [p.name for p in written],
    }
    mp = out / "manifest.json"
    mp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(mp)
    return written


def grid_model_dict(model: GridSourceModel) -> dict:
    return asdict(model)
