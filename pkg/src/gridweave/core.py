"""Domain types and energy accounting for the household, microgrid and
distributor layers.

Everything here is a pure function of its inputs. Sign conventions:

* ``e_batt > 0`` is energy drawn from the meter to charge the battery,
  ``e_batt < 0`` is energy the battery supplies at the meter.
* ``e_net = e_load - e_pv + e_batt``; ``e_net >= 0`` is the shortage state,
  ``e_net < 0`` the surplus state.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration (bad bounds, empty microgrid, ...)."""


class CostMode(str, enum.Enum):
    ECONOMIC = "economic"
    LITERAL = "literal"


class ProfileType(str, enum.Enum):
    FAMILY = "family"
    BUSINESS = "business"
    TEENAGERS = "teenagers"


PROFILE_ORDER = (ProfileType.FAMILY, ProfileType.BUSINESS, ProfileType.TEENAGERS)


@dataclass(frozen=True)
class BatteryParams:
    capacity: float = 1.0
    efficiency: float = 1.0
    soc_min: float = 0.1
    soc_max: float = 0.9
    p_charge_max: float = 0.8
    p_discharge_max: float = 0.8
    # carried for completeness; no objective prices battery cells
    sell_price: float = 0.0
    buy_price: float = 0.0

    def __post_init__(self) -> None:
        if self.capacity < 0:
            raise ConfigError(f"battery capacity must be >= 0, got {self.capacity}")
        if not 0.0 < self.efficiency <= 1.0:
            raise ConfigError(f"battery efficiency must be in (0, 1], got {self.efficiency}")
        if not 0.0 <= self.soc_min < self.soc_max <= 1.0:
            raise ConfigError(
                f"need 0 <= soc_min < soc_max <= 1, got [{self.soc_min}, {self.soc_max}]"
            )
        if self.p_charge_max < 0 or self.p_discharge_max < 0:
            raise ConfigError("battery power limits must be >= 0")

    @property
    def soc_mid(self) -> float:
        return 0.5 * (self.soc_min + self.soc_max)

    @property
    def actionable(self) -> bool:
        return self.capacity > 0


@dataclass(frozen=True)
class BatteryState:
    soc: float


@dataclass(frozen=True)
class HouseholdConfig:
    id: str
    profile_type: ProfileType = ProfileType.FAMILY
    profile_peak_load: float = 1.0
    pv_peak_pv_gen: float = 0.0
    battery: BatteryParams = field(default_factory=BatteryParams)
    battery_random_soc_0: bool = False
    position: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "profile_type", ProfileType(self.profile_type))
        if self.profile_peak_load < 0:
            raise ConfigError(f"{self.id}: profile_peak_load must be >= 0")
        if self.pv_peak_pv_gen < 0:
            raise ConfigError(f"{self.id}: pv_peak_pv_gen must be >= 0")


@dataclass(frozen=True)
class EnergyBalance:
    e_load: float = 0.0
    e_pv: float = 0.0
    e_batt: float = 0.0
    e_shortage: float = 0.0
    e_surplus: float = 0.0
    e_net: float = 0.0
    imp1: float = 0.0
    imp2: float = 0.0
    imp3: float = 0.0
    exp1: float = 0.0
    exp2: float = 0.0
    exp3: float = 0.0

    @classmethod
    def from_channels(
        cls,
        e_load: float,
        e_pv: float,
        e_batt: float,
        imports: Sequence[float],
        exports: Sequence[float],
    ) -> "EnergyBalance":
        net = household_net(e_load, e_pv, e_batt)
        return cls(
            e_load=e_load,
            e_pv=e_pv,
            e_batt=e_batt,
            e_shortage=max(net, 0.0),
            e_surplus=max(-net, 0.0),
            e_net=net,
            imp1=imports[0],
            imp2=imports[1],
            imp3=imports[2],
            exp1=exports[0],
            exp2=exports[1],
            exp3=exports[2],
        )

    def violations(self, atol: float = 1e-9) -> list[str]:
        """Return the accounting identities this balance breaks (empty if none)."""
        out = []
        if abs(self.e_shortage - (self.imp1 + self.imp2 + self.imp3)) > atol:
            out.append("shortage != imp1 + imp2 + imp3")
        if abs(self.e_surplus - (self.exp1 + self.exp2 + self.exp3)) > atol:
            out.append("surplus != exp1 + exp2 + exp3")
        if abs(self.e_net - (self.e_shortage - self.e_surplus)) > atol:
            out.append("net != shortage - surplus")
        if abs(self.e_net - (self.e_load - self.e_pv + self.e_batt)) > atol:
            out.append("net != load - pv + batt")
        if self.e_shortage < 0 or self.e_surplus < 0:
            out.append("negative shortage/surplus")
        if self.e_shortage * self.e_surplus != 0:
            out.append("shortage and surplus both nonzero")
        return out


@dataclass(frozen=True)
class PriceSet:
    r_sh: float
    r_bh: float
    r_sm: float
    r_bm: float
    r_sd: float
    r_bd: float
    c_t: float

    def __post_init__(self) -> None:
        for name in ("r_sh", "r_bh", "r_sm", "r_bm", "r_sd", "r_bd", "c_t"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def ordering_ok(self, atol: float = 1e-12) -> bool:
        chain = (self.r_bd, self.r_bm, self.r_bh, self.r_sh, self.r_sm, self.r_sd + self.c_t)
        return all(a <= b + atol for a, b in zip(chain, chain[1:]))


@dataclass(frozen=True)
class MicrogridBalance:
    e_shortage: float = 0.0
    e_surplus: float = 0.0
    e_net: float = 0.0
    imp2: float = 0.0
    imp3: float = 0.0
    exp2: float = 0.0
    exp3: float = 0.0


@dataclass(frozen=True)
class DistributorBalance:
    e_shortage: float = 0.0
    e_surplus: float = 0.0
    e_net: float = 0.0
    imp3: float = 0.0
    exp3: float = 0.0


@dataclass(frozen=True)
class BatteryStepResult:
    state: BatteryState
    e_batt: float
    projected: float  # |requested - applied| command, in capacity fractions


def battery_step_array(soc, capacity, efficiency, soc_min, soc_max, p_charge_max,
                       p_discharge_max, command):
    """Vectorised battery transition over broadcastable arrays.

    Returns ``(new_soc, e_batt, applied_command)``. The command is the
    internal-energy move as a fraction of capacity; it is first clipped to the
    power limits, then to the SoC window. One step is one hour.
    """
    soc = np.asarray(soc, dtype=float)
    capacity = np.asarray(capacity, dtype=float)
    efficiency = np.asarray(efficiency, dtype=float)
    cmd = np.clip(np.asarray(command, dtype=float), -np.asarray(p_discharge_max, float),
                  np.asarray(p_charge_max, float))
    charging = cmd > 0

    stored = np.minimum(cmd * capacity * efficiency,
                        np.maximum(soc_max - soc, 0.0) * capacity)
    stored = np.where(charging, stored, 0.0)

    released = np.minimum(-cmd * capacity * efficiency,
                          np.maximum(soc - soc_min, 0.0) * capacity * efficiency)
    released = np.where(charging | (cmd == 0), 0.0, released)

    has_cap = capacity > 0
    safe_cap = np.where(has_cap, capacity, 1.0)
    delta_soc = np.where(has_cap, (stored - released / efficiency) / safe_cap, 0.0)
    new_soc = np.clip(soc + delta_soc, soc_min, soc_max)
    new_soc = np.where(has_cap, new_soc, soc)
    e_batt = np.where(has_cap, stored / efficiency - released, 0.0)
    applied = np.where(has_cap, delta_soc / np.where(charging, efficiency, 1.0), 0.0)
    return new_soc, e_batt, applied


def battery_step(state: BatteryState, params: BatteryParams, command: float) -> BatteryStepResult:
    """Apply one signed command, projecting infeasible requests onto the feasible set."""
    new_soc, e_batt, applied = battery_step_array(
        state.soc, params.capacity, params.efficiency, params.soc_min, params.soc_max,
        params.p_charge_max, params.p_discharge_max, command,
    )
    return BatteryStepResult(BatteryState(float(new_soc)), float(e_batt),
                             abs(float(command) - float(applied)))


def household_net(e_load: float, e_pv: float, e_batt: float) -> float:
    return e_load - e_pv + e_batt


def household_cost(balance: EnergyBalance, prices: PriceSet,
                   mode: CostMode | str = CostMode.ECONOMIC) -> tuple[float, float]:
    """Return ``(cost_price, cost_emission)`` for one household and step.

    The scalar objective is ``cost_price + cost_emission``. In economic mode
    export revenue enters as a negative cost; literal mode keeps it positive.
    """
    mode = CostMode(mode)
    if balance.e_net >= 0:
        price = balance.imp3 * prices.r_sd + balance.imp2 * prices.r_sm + balance.imp1 * prices.r_sh
        return price, balance.imp3 * prices.c_t
    revenue = balance.exp3 * prices.r_bd + balance.exp2 * prices.r_bm + balance.exp1 * prices.r_bh
    return (revenue if mode is CostMode.LITERAL else -revenue), 0.0


def aggregate_microgrid(balances: Sequence[EnergyBalance]) -> MicrogridBalance:
    imp2 = sum(b.imp2 for b in balances)
    imp3 = sum(b.imp3 for b in balances)
    exp2 = sum(b.exp2 for b in balances)
    exp3 = sum(b.exp3 for b in balances)
    shortage, surplus = imp2 + imp3, exp2 + exp3
    return MicrogridBalance(shortage, surplus, shortage - surplus, imp2, imp3, exp2, exp3)


def microgrid_cost(balance: MicrogridBalance, prices: PriceSet,
                   mode: CostMode | str = CostMode.ECONOMIC) -> float:
    mode = CostMode(mode)
    if balance.e_net >= 0:
        return balance.imp3 * (prices.r_sd + prices.c_t) + balance.imp2 * prices.r_sm
    revenue = balance.exp3 * prices.r_bd + balance.exp2 * prices.r_bm
    return revenue if mode is CostMode.LITERAL else -revenue


def aggregate_distributor(balances: Sequence[MicrogridBalance]) -> DistributorBalance:
    imp3 = sum(b.imp3 for b in balances)
    exp3 = sum(b.exp3 for b in balances)
    return DistributorBalance(imp3, exp3, imp3 - exp3, imp3, exp3)


def distributor_cost(balance: DistributorBalance, prices: PriceSet,
                     mode: CostMode | str = CostMode.ECONOMIC) -> float:
    mode = CostMode(mode)
    if balance.e_net >= 0:
        return balance.imp3 * (prices.r_sd + prices.c_t)
    revenue = balance.exp3 * prices.r_bd
    return revenue if mode is CostMode.LITERAL else -revenue


def action_grid(battery: BatteryParams, n_actions: int = 40) -> np.ndarray:
    """Evenly spaced commands from ``-p_discharge_max`` to ``+p_charge_max``."""
    if n_actions < 2:
        raise ValueError("need at least two actions")
    return np.linspace(-battery.p_discharge_max, battery.p_charge_max, n_actions)


def action_to_power(index: int, battery: BatteryParams, n_actions: int = 40) -> float:
    if not 0 <= index < n_actions:
        raise IndexError(f"action index {index} outside [0, {n_actions})")
    span = battery.p_charge_max + battery.p_discharge_max
    return -battery.p_discharge_max + index * span / (n_actions - 1)
