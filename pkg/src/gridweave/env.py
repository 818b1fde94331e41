"""Episodic microgrid environment.

:class:`BatchEnv` steps ``B`` independent episodes of one configuration in
lock-step using flat ``(B, H)`` arrays; it is what training and the oracle
use. :class:`MicrogridEnv` wraps a single episode and hands back the rich
per-layer balances.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .core import (
    PROFILE_ORDER,
    BatteryParams,
    ConfigError,
    CostMode,
    DistributorBalance,
    EnergyBalance,
    HouseholdConfig,
    MicrogridBalance,
    PriceSet,
    aggregate_distributor,
    aggregate_microgrid,
    battery_step_array,
    distributor_cost,
    microgrid_cost,
)
from .datagen import GridSourceModel, generate_episode, gen_grid_signals, initial_soc, reference_demand
from .market import price_policy_distributor, price_policy_microgrid

N_ACTIONS = 40
OBS_DIM = 18

TRACE_COLUMNS = (
    "t", "microgrid_id", "household_id", "load", "pv", "batt_power", "soc", "net",
    "imp1", "imp2", "imp3", "exp1", "exp2", "exp3", "reward", "cost_price", "cost_emission",
)


@dataclass
class EnvConfig:
    microgrids: list[list[HouseholdConfig]]
    horizon: int = 24
    mode: CostMode = CostMode.ECONOMIC
    noise_enabled: bool = True
    temperature_enabled: bool = False
    spread_m: float = 0.5
    spread_h: float = 0.5
    grid: GridSourceModel = field(default_factory=GridSourceModel)
    n_actions: int = N_ACTIONS
    seed: int = 0

    def __post_init__(self) -> None:
        self.mode = CostMode(self.mode)
        if not self.microgrids:
            raise ConfigError("need at least one microgrid")
        for i, mg in enumerate(self.microgrids):
            if not mg:
                raise ConfigError(f"microgrid {i} has no households")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        for s in (self.spread_m, self.spread_h):
            if not 0.0 <= s <= 1.0:
                raise ConfigError("price spreads must be in [0, 1]")
        ids = [hh.id for hh in self.households]
        if len(set(ids)) != len(ids):
            raise ConfigError("household ids must be unique across microgrids")

    @property
    def households(self) -> list[HouseholdConfig]:
        return [hh for mg in self.microgrids for hh in mg]


@dataclass(frozen=True)
class PriceSchedule:
    """Per-step prices, identical for every microgrid under the rule-based policies."""

    r_sd: np.ndarray
    r_bd: np.ndarray
    c: np.ndarray
    r_sm: np.ndarray
    r_bm: np.ndarray
    r_sh: np.ndarray
    r_bh: np.ndarray

    def at(self, t: int) -> PriceSet:
        return PriceSet(float(self.r_sh[t]), float(self.r_bh[t]), float(self.r_sm[t]),
                        float(self.r_bm[t]), float(self.r_sd[t]), float(self.r_bd[t]),
                        float(self.c[t]))


def price_schedule(config: EnvConfig) -> PriceSchedule:
    r_sd, r_bd, c = gen_grid_signals(config.grid, reference_demand(config.households, config.horizon))
    r_sm, r_bm = price_policy_distributor(r_sd, r_bd, c, config.spread_m)
    r_sh, r_bh = price_policy_microgrid(r_sm, r_bm, config.spread_h)
    return PriceSchedule(r_sd, r_bd, c, r_sm, r_bm, r_sh, r_bh)


def channel_costs(chan: np.ndarray, net: np.ndarray, prices: PriceSchedule, t: int,
                  mode: CostMode = CostMode.ECONOMIC) -> tuple[np.ndarray, np.ndarray]:
    """Household price and emission cost for channel splits at step ``t``."""
    paid = (chan[..., 2] * prices.r_sd[t] + chan[..., 1] * prices.r_sm[t]
            + chan[..., 0] * prices.r_sh[t])
    revenue = (chan[..., 5] * prices.r_bd[t] + chan[..., 4] * prices.r_bm[t]
               + chan[..., 3] * prices.r_bh[t])
    if mode is CostMode.ECONOMIC:
        revenue = -revenue
    shortage = net >= 0
    price = np.where(shortage, paid, revenue)
    emission = np.where(shortage, chan[..., 2] * prices.c[t], 0.0)
    return price, emission


class Fleet:
    """Flat per-household arrays derived from an :class:`EnvConfig`."""

    def __init__(self, config: EnvConfig):
        hhs = config.households
        self.households = hhs
        self.ids = [hh.id for hh in hhs]
        self.n = len(hhs)
        self.n_microgrids = len(config.microgrids)
        mg, pos = [], []
        for m, members in enumerate(config.microgrids):
            for j, hh in enumerate(members):
                mg.append(m)
                pos.append(float(j) if hh.position is None else float(hh.position))
        self.microgrid = np.asarray(mg, dtype=np.int64)
        self.position = np.asarray(pos)
        bats = [hh.battery for hh in hhs]
        for name in ("capacity", "efficiency", "soc_min", "soc_max", "p_charge_max", "p_discharge_max"):
            setattr(self, name, np.asarray([getattr(b, name) for b in bats], dtype=float))
        self.actionable = np.flatnonzero(self.capacity > 0)
        self.static_obs = np.asarray([
            [float(hh.profile_type is p) for p in PROFILE_ORDER]
            + [hh.profile_peak_load, hh.pv_peak_pv_gen, hh.battery.capacity,
               hh.battery.p_charge_max, hh.battery.p_discharge_max]
            for hh in hhs
        ])
        peak = np.asarray([hh.profile_peak_load for hh in hhs])
        scale = config.grid.gas_price + config.grid.gas_emission
        # reward normaliser; zero-load households fall back to unit peak
        self.reward_scale = np.where(peak > 0, peak, 1.0) * scale
        grid_n = config.n_actions
        self.commands = np.stack([
            np.linspace(-self.p_discharge_max[h], self.p_charge_max[h], grid_n) for h in range(self.n)
        ])


@dataclass
class StepArrays:
    t: int
    e_load: np.ndarray
    e_pv: np.ndarray
    e_batt: np.ndarray
    soc: np.ndarray
    net: np.ndarray
    channels: np.ndarray
    cost_price: np.ndarray
    cost_emission: np.ndarray
    reward: np.ndarray
    local_volume: np.ndarray
    inter_volume: np.ndarray
    done: bool


class BatchEnv:
    """Lock-step simulation of ``B`` episodes (one per seed)."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.fleet = Fleet(config)
        self.prices = price_schedule(config)
        self.t = 0
        self.batch = 0

    @property
    def n_actionable(self) -> int:
        return len(self.fleet.actionable)

    def load_episodes(self, seeds: Sequence[int]) -> None:
        cfg = self.config
        eps = [generate_episode(cfg.households, cfg.grid, int(s), cfg.horizon,
                                cfg.noise_enabled, cfg.temperature_enabled) for s in seeds]
        self.seeds = [int(s) for s in seeds]
        self.load = np.stack([e.load for e in eps])
        self.pv = np.stack([e.pv for e in eps])
        self.soc0 = np.asarray([[initial_soc(hh, s) for hh in cfg.households] for s in seeds])

    def reset(self, seeds: Sequence[int], soc0: np.ndarray | None = None) -> np.ndarray:
        """Start one episode per seed; returns ``(B, A, OBS_DIM)`` observations."""
        self.load_episodes(seeds)
        if soc0 is not None:
            self.soc0 = np.broadcast_to(np.asarray(soc0, float), self.soc0.shape).copy()
        self.batch = len(self.seeds)
        self.soc = self.soc0.copy()
        self.t = 0
        return self.observe()[:, self.fleet.actionable]

    def observe(self) -> np.ndarray:
        B, H, cfg, p = self.batch, self.fleet.n, self.config, self.prices
        t = min(self.t, cfg.horizon - 1)
        hour = 2 * np.pi * (self.t % 24) / 24
        obs = np.empty((B, H, OBS_DIM))
        obs[..., 0] = np.sin(hour)
        obs[..., 1] = np.cos(hour)
        obs[..., 2] = self.load[:, :, t]
        obs[..., 3] = self.pv[:, :, t]
        obs[..., 4] = self.soc
        obs[..., 5] = p.r_sd[t]
        obs[..., 6] = p.r_bd[t]
        obs[..., 7] = p.c[t]
        obs[..., 8] = p.r_sh[t]
        obs[..., 9] = p.r_bh[t]
        obs[..., 10:] = self.fleet.static_obs
        return obs

    def commands_for(self, actions: np.ndarray) -> np.ndarray:
        """Map ``(B, A)`` action indices to ``(B, H)`` commands (passive houses get 0)."""
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.batch, self.n_actionable):
            raise ValueError(f"expected actions of shape {(self.batch, self.n_actionable)}, "
                             f"got {actions.shape}")
        if actions.size and (actions.min() < 0 or actions.max() >= self.config.n_actions):
            raise IndexError("action index out of range")
        cmds = np.zeros((self.batch, self.fleet.n))
        act = self.fleet.actionable
        cmds[:, act] = self.fleet.commands[act, actions]
        return cmds

    def step(self, actions: np.ndarray) -> StepArrays:
        return self.step_commands(self.commands_for(actions))

    def step_commands(self, commands: np.ndarray) -> StepArrays:
        if self.t >= self.config.horizon:
            raise RuntimeError("episode finished; call reset()")
        f, t = self.fleet, self.t
        new_soc, e_batt, _ = battery_step_array(self.soc, f.capacity, f.efficiency, f.soc_min,
                                                f.soc_max, f.p_charge_max, f.p_discharge_max,
                                                commands)
        load, pv = self.load[:, :, t], self.pv[:, :, t]
        net = load - pv + e_batt
        chan, local_vol, inter_vol = kernels.clear_markets(net, f.microgrid, f.position,
                                                           f.n_microgrids)
        price, emission = channel_costs(chan, net, self.prices, t, self.config.mode)
        # the learning signal is always the economic cost; literal mode only changes reporting
        econ = price if self.config.mode is CostMode.ECONOMIC else np.where(net >= 0, price, -price)
        reward = -(econ + emission) / f.reward_scale
        self.soc = new_soc
        self.t += 1
        return StepArrays(t, load, pv, e_batt, new_soc, net, chan, price, emission, reward,
                          local_vol, inter_vol, self.t >= self.config.horizon)


@dataclass(frozen=True)
class HouseholdStep:
    id: str
    observation: np.ndarray
    reward: float
    balance: EnergyBalance
    soc: float
    cost_price: float
    cost_emission: float


@dataclass(frozen=True)
class StepResult:
    t: int
    households: list[HouseholdStep]
    microgrids: list[MicrogridBalance]
    prices: list[PriceSet]
    microgrid_costs: list[float]
    distributor: DistributorBalance
    distributor_cost: float
    local_volume: np.ndarray
    inter_volume: float
    done: bool

    @property
    def rewards(self) -> np.ndarray:
        return np.asarray([h.reward for h in self.households])


class MicrogridEnv:
    """Single-episode environment with reset/step semantics."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self._batch = BatchEnv(config)
        self.fleet = self._batch.fleet
        self.trace: list[dict] = []

    @property
    def actionable_ids(self) -> list[str]:
        return [self.fleet.ids[h] for h in self.fleet.actionable]

    @property
    def soc(self) -> np.ndarray:
        return self._batch.soc[0].copy()

    @property
    def t(self) -> int:
        return self._batch.t

    @property
    def prices(self) -> PriceSchedule:
        return self._batch.prices

    def reset(self, seed: int | None = None, soc0: np.ndarray | None = None) -> list[np.ndarray]:
        """Observations of the actionable households, in configuration order."""
        seed = self.config.seed if seed is None else seed
        obs = self._batch.reset([seed], soc0)
        self.trace = []
        return list(obs[0])

    def step(self, actions: Sequence[int]) -> StepResult:
        return self._wrap(self._batch.step(np.asarray(actions, dtype=np.int64)[None, :]))

    def step_commands(self, commands: Sequence[float]) -> StepResult:
        return self._wrap(self._batch.step_commands(np.asarray(commands, dtype=float)[None, :]))

    def _wrap(self, s: StepArrays) -> StepResult:
        f, cfg = self.fleet, self.config
        obs = self._batch.observe()[0]
        balances = []
        households = []
        for h in range(f.n):
            c = s.channels[0, h]
            bal = EnergyBalance.from_channels(float(s.e_load[0, h]), float(s.e_pv[0, h]),
                                              float(s.e_batt[0, h]), c[:3].tolist(), c[3:].tolist())
            balances.append(bal)
            households.append(HouseholdStep(f.ids[h], obs[h], float(s.reward[0, h]), bal,
                                            float(s.soc[0, h]), float(s.cost_price[0, h]),
                                            float(s.cost_emission[0, h])))
            self.trace.append({
                "t": s.t, "microgrid_id": int(f.microgrid[h]), "household_id": f.ids[h],
                "load": bal.e_load, "pv": bal.e_pv, "batt_power": bal.e_batt,
                "soc": float(s.soc[0, h]), "net": bal.e_net,
                "imp1": bal.imp1, "imp2": bal.imp2, "imp3": bal.imp3,
                "exp1": bal.exp1, "exp2": bal.exp2, "exp3": bal.exp3,
                "reward": float(s.reward[0, h]), "cost_price": float(s.cost_price[0, h]),
                "cost_emission": float(s.cost_emission[0, h]),
            })
        ps = self.prices.at(s.t)
        mgs = [aggregate_microgrid([balances[h] for h in range(f.n) if f.microgrid[h] == m])
               for m in range(f.n_microgrids)]
        dist = aggregate_distributor(mgs)
        return StepResult(
            t=s.t,
            households=households,
            microgrids=mgs,
            prices=[ps] * f.n_microgrids,
            microgrid_costs=[microgrid_cost(b, ps, cfg.mode) for b in mgs],
            distributor=dist,
            distributor_cost=distributor_cost(dist, ps, cfg.mode),
            local_volume=s.local_volume[0],
            inter_volume=float(s.inter_volume[0]),
            done=s.done,
        )

    def write_trace(self, path: str | Path) -> Path:
        return write_trace(path, self.trace)


def write_trace(path: str | Path, rows: Sequence[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def single_battery_config(battery: BatteryParams | None = None, **hh) -> EnvConfig:
    """Convenience: one microgrid holding one household."""
    house = HouseholdConfig(id=hh.pop("id", "h0"), battery=battery or BatteryParams(), **hh)
    return EnvConfig(microgrids=[[house]])
