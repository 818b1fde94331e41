"""Exact optimal battery dispatch by backward dynamic programming.

Each household is optimised on its own against exogenous prices, with every
other household held at zero battery action. Stage costs go through the same
market clearing and cost code as the environment, so a plan replayed in the
environment reproduces its cost.

SoC is discretised on an evenly spaced lattice over ``[soc_min, soc_max]``.
Each grid command is applied with :func:`battery_step_array` and the result
is snapped toward the starting level, so the applied move never exceeds the
requested one. The effective command that lands exactly on the lattice point
is what the plan stores.

``moves="lattice"`` instead allows every lattice target within the power
limits. That solves the discretised problem without the action grid, and its
optimum cannot get worse when a lattice is refined into a nested finer one.
"""
from __future__ import annotations

import csv
import itertools
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .core import BatteryParams, CostMode, battery_step_array
from .env import BatchEnv, EnvConfig, PriceSchedule, channel_costs

CostFn = Callable[[int, np.ndarray], "tuple[np.ndarray, np.ndarray]"]

BRUTE_FORCE_MAX_T = 6
BRUTE_FORCE_MAX_ACTIONS = 8


@dataclass
class Lattice:
    socs: np.ndarray          # (K,)
    knext: np.ndarray         # (K, A)
    command: np.ndarray       # (K, A) effective command landing on knext
    e_batt: np.ndarray        # (K, A)
    e_values: np.ndarray      # (U,) distinct e_batt values
    eidx: np.ndarray          # (K, A) index into e_values

    def index_of(self, soc: float) -> int:
        k = int(np.argmin(np.abs(self.socs - soc)))
        if abs(self.socs[k] - soc) > 1e-12:
            warnings.warn(f"initial SoC {soc} is not on the lattice; snapped to {self.socs[k]}",
                          stacklevel=3)
        return k


def build_lattice(battery: BatteryParams, soc_levels: int, commands: np.ndarray) -> Lattice:
    if soc_levels < 2:
        raise ValueError("soc_levels must be >= 2")
    b = battery
    socs = np.linspace(b.soc_min, b.soc_max, soc_levels)
    step = (b.soc_max - b.soc_min) / (soc_levels - 1)
    k = np.arange(soc_levels)[:, None]
    cmds = np.broadcast_to(np.asarray(commands, float)[None, :], (soc_levels, len(commands)))

    raw, _, _ = battery_step_array(socs[:, None], b.capacity, b.efficiency, b.soc_min,
                                   b.soc_max, b.p_charge_max, b.p_discharge_max, cmds)
    move = (raw - socs[:, None]) / step
    # snap toward the current level; the slack absorbs rounding in ``move``
    steps = np.where(move >= 0, np.floor(move + 1e-9), -np.floor(-move + 1e-9)).astype(np.int64)
    knext = np.clip(k + steps, 0, soc_levels - 1)
    dsoc = socs[knext] - socs[:, None]
    eff_cmd = np.where(dsoc > 0, dsoc / b.efficiency, dsoc)
    if b.capacity <= 0:
        knext = np.broadcast_to(k, knext.shape).copy()
        eff_cmd = np.zeros_like(eff_cmd)
    _, e_batt, _ = battery_step_array(socs[:, None], b.capacity, b.efficiency, b.soc_min,
                                      b.soc_max, b.p_charge_max, b.p_discharge_max, eff_cmd)
    e_values, eidx = np.unique(e_batt, return_inverse=True)
    return Lattice(socs, knext, eff_cmd, e_batt, e_values, eidx.reshape(e_batt.shape))


def build_full_lattice(battery: BatteryParams, soc_levels: int) -> Lattice:
    """Lattice whose actions are the target levels themselves.

    Action ``j`` from level ``k`` moves to level ``j`` when the required
    command respects the power limits; otherwise it idles.
    """
    if soc_levels < 2:
        raise ValueError("soc_levels must be >= 2")
    b = battery
    socs = np.linspace(b.soc_min, b.soc_max, soc_levels)
    k = np.arange(soc_levels)[:, None]
    j = np.broadcast_to(np.arange(soc_levels)[None, :], (soc_levels, soc_levels))
    dsoc = socs[j] - socs[k]
    cmd = np.where(dsoc > 0, dsoc / b.efficiency, dsoc)
    ok = (cmd <= b.p_charge_max + 1e-12) & (cmd >= -b.p_discharge_max - 1e-12) & (b.capacity > 0)
    knext = np.where(ok, j, k).astype(np.int64)
    cmd = np.where(ok, cmd, 0.0)
    _, e_batt, _ = battery_step_array(socs[:, None], b.capacity, b.efficiency, b.soc_min,
                                      b.soc_max, b.p_charge_max, b.p_discharge_max, cmd)
    e_values, eidx = np.unique(e_batt, return_inverse=True)
    return Lattice(socs, knext, cmd, e_batt, e_values, eidx.reshape(e_batt.shape))


def _lattice_for(battery: BatteryParams, soc_levels: int, commands, n_actions: int,
                 moves: str) -> Lattice:
    if moves == "lattice":
        return build_full_lattice(battery, soc_levels)
    if moves != "grid":
        raise ValueError(f"moves must be 'grid' or 'lattice', got {moves!r}")
    if commands is None:
        commands = command_set(battery, n_actions)
    return build_lattice(battery, soc_levels, commands)


@dataclass
class HouseholdProblem:
    household_id: str
    battery: BatteryParams
    soc0: float
    horizon: int
    cost_fn: CostFn  # (t, e_batt values) -> (price, emission) arrays

    def stage_table(self, lattice: Lattice) -> tuple[np.ndarray, np.ndarray]:
        price = np.empty((self.horizon, len(lattice.e_values)))
        emission = np.empty_like(price)
        for t in range(self.horizon):
            price[t], emission[t] = self.cost_fn(t, lattice.e_values)
        return price, emission


@dataclass
class DispatchPlan:
    household_id: str
    commands: np.ndarray
    soc: np.ndarray
    stage_cost_price: np.ndarray
    stage_cost_emission: np.ndarray
    value: float  # optimal scalar cost as accumulated by the solver

    @property
    def cost_price(self) -> float:
        return float(np.sum(self.stage_cost_price))

    @property
    def cost_emission(self) -> float:
        return float(np.sum(self.stage_cost_emission))

    @property
    def cost(self) -> float:
        return self.cost_price + self.cost_emission

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "command", "soc", "stage_cost_price", "stage_cost_emission"])
            for t in range(len(self.commands)):
                w.writerow([t, repr(float(self.commands[t])), repr(float(self.soc[t])),
                            repr(float(self.stage_cost_price[t])),
                            repr(float(self.stage_cost_emission[t]))])
        return path


def _plan_from_actions(problem, lattice, k0, actions, price, emission, value) -> DispatchPlan:
    T = problem.horizon
    cmds, socs = np.zeros(T), np.zeros(T + 1)
    sp, se = np.zeros(T), np.zeros(T)
    k = k0
    socs[0] = lattice.socs[k]
    for t, a in enumerate(actions):
        u = lattice.eidx[k, a]
        cmds[t] = lattice.command[k, a]
        sp[t], se[t] = price[t, u], emission[t, u]
        k = lattice.knext[k, a]
        socs[t + 1] = lattice.socs[k]
    return DispatchPlan(problem.household_id, cmds, socs, sp, se, float(value))


def command_set(battery: BatteryParams, n_actions: int = 40) -> np.ndarray:
    """The agents' action grid plus an explicit idle command."""
    grid = np.linspace(-battery.p_discharge_max, battery.p_charge_max, n_actions)
    if np.any(grid == 0.0):
        return grid
    return np.sort(np.append(grid, 0.0))


def optimal_dispatch_dp(problem: HouseholdProblem, soc_levels: int = 201,
                        commands: np.ndarray | None = None, n_actions: int = 40,
                        moves: str = "grid") -> DispatchPlan:
    """Cost-minimal plan on the SoC lattice via backward induction.

    ``commands`` defaults to :func:`command_set`, so doing nothing is always
    feasible and the optimum never exceeds the no-battery cost.
    """
    lattice = _lattice_for(problem.battery, soc_levels, commands, n_actions, moves)
    price, emission = problem.stage_table(lattice)
    value, policy = kernels.dp_backward(price + emission, lattice.eidx, lattice.knext)
    k0 = lattice.index_of(problem.soc0)
    actions, k = [], k0
    for t in range(problem.horizon):
        a = int(policy[t, k])
        actions.append(a)
        k = lattice.knext[k, a]
    return _plan_from_actions(problem, lattice, k0, actions, price, emission, value[0, k0])


def brute_force_dispatch(problem: HouseholdProblem, soc_levels: int,
                         commands: np.ndarray | None = None, moves: str = "grid") -> DispatchPlan:
    """Exhaustive minimum over all action sequences; small instances only."""
    T = problem.horizon
    if moves == "grid" and commands is None:
        raise ValueError("grid moves need an explicit command list")
    A = soc_levels if moves == "lattice" else len(commands)
    if T > BRUTE_FORCE_MAX_T or A > BRUTE_FORCE_MAX_ACTIONS:
        raise ValueError(f"instance too large to enumerate (T={T}, actions={A}); "
                         f"limits are T<={BRUTE_FORCE_MAX_T}, actions<={BRUTE_FORCE_MAX_ACTIONS}")
    lattice = _lattice_for(problem.battery, soc_levels, commands, 0, moves)
    price, emission = problem.stage_table(lattice)
    stage = price + emission
    k0 = lattice.index_of(problem.soc0)
    best, best_seq = np.inf, None
    for seq in itertools.product(range(A), repeat=T):
        k, path = k0, []
        for t, a in enumerate(seq):
            path.append(stage[t, lattice.eidx[k, a]])
            k = lattice.knext[k, a]
        total = 0.0
        for c in reversed(path):  # same association order as backward induction
            total = c + total
        if total < best:
            best, best_seq = total, seq
    return _plan_from_actions(problem, lattice, k0, best_seq, price, emission, best)


def isolated_cost_fn(load: np.ndarray, pv: np.ndarray, prices: PriceSchedule,
                     mode: CostMode = CostMode.ECONOMIC) -> CostFn:
    """Stage costs for a household with no market peers (everything via the grid)."""
    return market_cost_fn(np.asarray(load)[None, :], np.asarray(pv)[None, :], 0,
                          np.zeros(1, np.int64), np.zeros(1), 1, prices, mode)


def market_cost_fn(load: np.ndarray, pv: np.ndarray, h: int, microgrid: np.ndarray,
                   position: np.ndarray, n_microgrids: int, prices: PriceSchedule,
                   mode: CostMode = CostMode.ECONOMIC) -> CostFn:
    """Stage costs for household ``h`` with every other household at zero action.

    ``load``/``pv`` are ``(H, T)``.
    """
    base_net = load - pv

    def cost(t: int, e_batt: np.ndarray):
        e_batt = np.asarray(e_batt, float)
        net = np.repeat(base_net[:, t][None, :], len(e_batt), axis=0)
        net[:, h] = load[h, t] - pv[h, t] + e_batt
        chan, _, _ = kernels.clear_markets(net, microgrid, position, n_microgrids)
        p, e = channel_costs(chan[:, h], net[:, h], prices, t, mode)
        return p, e

    return cost


def problems_for_episode(env: BatchEnv, b: int = 0) -> list[HouseholdProblem]:
    """One problem per actionable household of loaded episode ``b``."""
    f = env.fleet
    out = []
    for h in f.actionable:
        fn = market_cost_fn(env.load[b], env.pv[b], int(h), f.microgrid, f.position,
                            f.n_microgrids, env.prices, CostMode.ECONOMIC)
        out.append(HouseholdProblem(f.ids[h], f.households[h].battery, float(env.soc0[b, h]),
                                    env.config.horizon, fn))
    return out


def no_battery_costs(config: EnvConfig, seeds: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-episode, per-household ``(price, emission, reward)`` totals with zero battery action."""
    env = BatchEnv(config)
    env.reset(seeds)
    zeros = np.zeros((len(seeds), env.fleet.n))
    price = np.zeros_like(zeros)
    emission = np.zeros_like(zeros)
    reward = np.zeros_like(zeros)
    for _ in range(config.horizon):
        s = env.step_commands(zeros)
        price += s.cost_price
        emission += s.cost_emission
        reward += s.reward
    return price, emission, reward


def replay_plan(config: EnvConfig, seed: int, plan: DispatchPlan,
                mode: CostMode = CostMode.ECONOMIC) -> tuple[float, float]:
    """Run ``plan`` in the environment (others idle); returns the household's costs.

    Costs are measured in ``mode``; the default matches the plan's own objective.
    The episode starts from ``plan.soc[0]``, which differs from the drawn
    initial SoC only when that draw was off the lattice and got snapped.
    """
    env = BatchEnv(replace(config, mode=CostMode(mode)))
    env.reset([seed])
    h = env.fleet.ids.index(plan.household_id)
    env.soc[0, h] = plan.soc[0]
    price = emission = 0.0
    for t in range(config.horizon):
        cmds = np.zeros((1, env.fleet.n))
        cmds[0, h] = plan.commands[t]
        s = env.step_commands(cmds)
        price += float(s.cost_price[0, h])
        emission += float(s.cost_emission[0, h])
    return price, emission


def solve_episode(config: EnvConfig, seed: int, soc_levels: int = 201,
                  threads: int = 1, moves: str = "grid") -> list[DispatchPlan]:
    env = BatchEnv(config)
    env.reset([seed])
    problems = problems_for_episode(env)
    solve = lambda p: optimal_dispatch_dp(p, soc_levels, n_actions=config.n_actions,  # noqa: E731
                                          moves=moves)
    if threads > 1 and len(problems) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(solve, problems))
    return [solve(p) for p in problems]


def oracle_costs(config: EnvConfig, seeds: Sequence[int], soc_levels: int = 201,
                 threads: int = 1, moves: str = "grid"
                 ) -> tuple[np.ndarray, np.ndarray, list[list[DispatchPlan]]]:
    """Per-episode, per-household oracle ``(price, emission)`` plus the plans.

    Passive households keep their no-battery cost.
    """
    price, emission, _ = no_battery_costs(config, seeds)
    ids = [hh.id for hh in config.households]
    plans = []
    for i, seed in enumerate(seeds):
        ep = solve_episode(config, seed, soc_levels, threads, moves)
        for plan in ep:
            h = ids.index(plan.household_id)
            if config.mode is CostMode.ECONOMIC:
                price[i, h], emission[i, h] = plan.cost_price, plan.cost_emission
            else:
                price[i, h], emission[i, h] = replay_plan(config, seed, plan, config.mode)
        plans.append(ep)
    return price, emission, plans


def score(policy_cost: float, baseline_cost: float) -> float:
    """Relative change against the no-battery baseline; negative is better."""
    if baseline_cost == 0:
        return 0.0
    return (policy_cost - baseline_cost) / abs(baseline_cost)


@dataclass
class ScoreReport:
    households: dict[str, dict[str, float]]
    microgrids: list[dict[str, float]]
    distributor: dict[str, float]
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"households": self.households, "microgrids": self.microgrids,
                "distributor": self.distributor, **self.extra}

    def write_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def score_report(config: EnvConfig, price: np.ndarray, emission: np.ndarray,
                 base_price: np.ndarray, base_emission: np.ndarray) -> ScoreReport:
    """Build a report from per-household totals (arrays of shape ``(H,)``).

    Upper levels average their member households' scores.
    """
    households = {}
    ids = [hh.id for hh in config.households]
    for h, hid in enumerate(ids):
        households[hid] = {
            "price_score": score(price[h], base_price[h]),
            "emission_score": score(emission[h], base_emission[h]),
            "cost_price": float(price[h]),
            "cost_emission": float(emission[h]),
            "baseline_cost_price": float(base_price[h]),
            "baseline_cost_emission": float(base_emission[h]),
        }

    def summary(members: list[str]) -> dict[str, float]:
        rows = [households[m] for m in members]
        return {
            "price_score": float(np.mean([r["price_score"] for r in rows])),
            "emission_score": float(np.mean([r["emission_score"] for r in rows])),
            "cost_price": float(sum(r["cost_price"] for r in rows)),
            "cost_emission": float(sum(r["cost_emission"] for r in rows)),
        }

    microgrids = [summary([hh.id for hh in mg]) for mg in config.microgrids]
    return ScoreReport(households, microgrids, summary(ids))
