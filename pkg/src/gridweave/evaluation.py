"""Scoring of learned policies and the oracle against the no-battery baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agents import Mlp, rollout
from .env import BatchEnv, EnvConfig, Fleet
from .oracle import ScoreReport, no_battery_costs, oracle_costs, score_report


def evaluation_seeds(seed: int, episodes: int) -> list[int]:
    """Episode seeds for scoring; disjoint from the training stream by construction."""
    return [int(s) for s in np.random.SeedSequence([seed, 0xE7A1]).generate_state(episodes)]


@dataclass
class Evaluation:
    """Per-episode, per-household totals, each ``(E, H)``."""

    price: np.ndarray
    emission: np.ndarray
    reward: np.ndarray
    base_price: np.ndarray
    base_emission: np.ndarray

    @property
    def mean_scalar_cost(self) -> float:
        """Scalar cost per household-episode."""
        return float((self.price + self.emission).mean())

    @property
    def mean_baseline_cost(self) -> float:
        return float((self.base_price + self.base_emission).mean())

    @property
    def mean_reward(self) -> float:
        return float(self.reward.mean())

    def report(self, config: EnvConfig) -> ScoreReport:
        rep = score_report(config, self.price.sum(0), self.emission.sum(0),
                           self.base_price.sum(0), self.base_emission.sum(0))
        rep.extra = {
            "episodes": int(self.price.shape[0]),
            "mean_scalar_cost": self.mean_scalar_cost,
            "mean_baseline_scalar_cost": self.mean_baseline_cost,
            "mean_episode_reward": self.mean_reward,
        }
        return rep


def evaluate_policy(config: EnvConfig, actor: Mlp, seeds: list[int]) -> Evaluation:
    """Greedy (argmax) rollout of the shared actor on every seed."""
    env = BatchEnv(config)
    ro = rollout(env, actor, seeds, None, greedy=True)
    bp, be, _ = no_battery_costs(config, seeds)
    return Evaluation(ro.cost_price, ro.cost_emission, ro.reward, bp, be)


def evaluate_oracle(config: EnvConfig, seeds: list[int], soc_levels: int = 201,
                    threads: int = 1):
    """Oracle costs on ``seeds``; returns the :class:`Evaluation` and the plans."""
    price, emission, plans = oracle_costs(config, seeds, soc_levels, threads)
    bp, be, reward = no_battery_costs(config, seeds)
    fleet = Fleet(config)
    for i, episode in enumerate(plans):
        for plan in episode:
            h = fleet.ids.index(plan.household_id)
            reward[i, h] = -plan.cost / fleet.reward_scale[h]
    return Evaluation(price, emission, reward, bp, be), plans


def evaluate_baseline(config: EnvConfig, seeds: list[int]) -> Evaluation:
    bp, be, br = no_battery_costs(config, seeds)
    return Evaluation(bp, be, br, bp, be)
