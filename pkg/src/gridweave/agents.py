"""Shared-parameter policy-gradient and advantage actor-critic agents.

The networks are single-hidden-layer tanh MLPs with hand-written backprop in
numpy. One actor (and one critic for A2C) serves every actionable household;
households differ only through their observations.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import action_to_power  # noqa: F401  re-exported for callers
from .env import OBS_DIM, BatchEnv, EnvConfig

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "gridweave-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    algo: str = "a2c"
    n_actions: int = 40
    lr_actor: float | None = None  # None: 0.00381 for PG, 0.00245 for A2C
    lr_critic: float = 0.001
    hidden: int = 128
    gamma: float = 1.0
    batch_size: int = 32
    rollout_steps: int = 24
    training_steps: int = 2000
    entropy_coef: float = 0.0
    full_return: bool = False  # weight every log-prob by the whole-episode return

    def __post_init__(self) -> None:
        if self.algo not in ("pg", "a2c"):
            raise ValueError(f"unknown algo {self.algo!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        for name in ("n_actions", "hidden", "batch_size", "rollout_steps", "lr_critic"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.training_steps < 0:
            raise ValueError("training_steps must be >= 0")
        if self.lr_actor is not None and self.lr_actor <= 0:
            raise ValueError("lr_actor must be positive")

    @property
    def actor_lr(self) -> float:
        if self.lr_actor is not None:
            return self.lr_actor
        return 0.00381 if self.algo == "pg" else 0.00245


@dataclass
class Mlp:
    """``x -> tanh(x W1 + b1) W2 + b2``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    NAMES = ("w1", "b1", "w2", "b2")

    @classmethod
    def init(cls, n_in: int, n_out: int, hidden: int, rng: np.random.Generator) -> "Mlp":
        # uniform(+-1/sqrt(fan_in)) for weights and biases
        l1, l2 = 1 / np.sqrt(n_in), 1 / np.sqrt(hidden)
        return cls(rng.uniform(-l1, l1, (n_in, hidden)), rng.uniform(-l1, l1, hidden),
                   rng.uniform(-l2, l2, (hidden, n_out)), rng.uniform(-l2, l2, n_out))

    @classmethod
    def zeros(cls, n_in: int, n_out: int, hidden: int) -> "Mlp":
        return cls(np.zeros((n_in, hidden)), np.zeros(hidden), np.zeros((hidden, n_out)),
                   np.zeros(n_out))

    @property
    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    @property
    def n_in(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "Mlp":
        return Mlp(*(p.copy() for p in self.params))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if x.shape[-1] != self.n_in:
            raise ValueError(f"observation has {x.shape[-1]} features, network expects {self.n_in}")
        h = np.tanh(x @ self.w1 + self.b1)
        return h @ self.w2 + self.b2, h

    def backward(self, x: np.ndarray, h: np.ndarray, dout: np.ndarray) -> "Mlp":
        """Gradient of ``sum(dout * out)`` with respect to each parameter."""
        dh = (dout @ self.w2.T) * (1 - h * h)
        return Mlp(x.T @ dh, dh.sum(axis=0), h.T @ dout, dout.sum(axis=0))

    def step(self, grad: "Mlp", lr: float) -> "Mlp":
        return Mlp(*(p + lr * g for p, g in zip(self.params, grad.params)))

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def with_flat(self, vec: np.ndarray) -> "Mlp":
        out, i = [], 0
        for p in self.params:
            out.append(np.asarray(vec[i:i + p.size], dtype=float).reshape(p.shape))
            i += p.size
        return Mlp(*out)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def policy_forward(actor: Mlp, obs: np.ndarray) -> np.ndarray:
    """Action probabilities for one observation or a batch."""
    logits, _ = actor.forward(np.asarray(obs, dtype=float))
    return softmax(logits)


def compute_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted reward-to-go along the last axis."""
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    acc = np.zeros(rewards.shape[:-1])
    for t in range(rewards.shape[-1] - 1, -1, -1):
        acc = rewards[..., t] + gamma * acc
        out[..., t] = acc
    return out


@dataclass
class Batch:
    """Flattened trajectories: ``obs (N, T, D)``, ``actions (N, T)``, ``rewards (N, T)``.

    ``episodes`` is the gradient normaliser. Agents share one parameter
    vector, so an episode contributes the sum of its agents' terms and the
    batch averages over episodes. It defaults to ``N`` (one agent per episode).
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    episodes: int | None = None

    def __post_init__(self) -> None:
        n, t = self.actions.shape
        if self.obs.shape[:2] != (n, t) or self.rewards.shape != (n, t):
            raise ValueError("trajectory arrays have inconsistent shapes")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("non-finite rewards")

    @property
    def n(self) -> int:
        return self.actions.shape[0]

    @property
    def norm(self) -> int:
        return self.episodes or self.n


def _weights(batch: Batch, gamma: float, full_return: bool) -> np.ndarray:
    ret = compute_returns(batch.rewards, gamma)
    if full_return:
        return np.repeat(ret[:, :1], ret.shape[1], axis=1)
    return ret


def policy_gradient(actor: Mlp, batch: Batch, weights: np.ndarray,
                    entropy_coef: float = 0.0) -> Mlp:
    """Gradient of ``1/E sum_i sum_t log pi(a|s) * weight (+ entropy bonus)``.

    ``E`` is ``batch.norm``; ``i`` runs over all agent trajectories.
    """
    n, T, d = batch.obs.shape
    x = batch.obs.reshape(n * T, d)
    logits, h = actor.forward(x)
    p = softmax(logits)
    dlogits = -p
    dlogits[np.arange(n * T), batch.actions.ravel()] += 1.0
    dlogits *= weights.reshape(-1, 1)
    if entropy_coef:
        logp = np.log(np.clip(p, 1e-300, None))
        ent = -(p * logp).sum(axis=1, keepdims=True)
        dlogits += entropy_coef * (-p * (logp + ent))
    grad = actor.backward(x, h, dlogits / batch.norm)
    _check_finite(grad)
    return grad


def policy_objective(actor: Mlp, batch: Batch, weights: np.ndarray) -> float:
    n, T, d = batch.obs.shape
    logits, _ = actor.forward(batch.obs.reshape(n * T, d))
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    picked = logp[np.arange(n * T), batch.actions.ravel()]
    return float(np.sum(picked * weights.ravel()) / batch.norm)


def critic_loss(critic: Mlp, batch: Batch, targets: np.ndarray) -> float:
    n, T, d = batch.obs.shape
    v, _ = critic.forward(batch.obs.reshape(n * T, d))
    return float(np.sum((v[:, 0] - targets.ravel()) ** 2) / n)


def critic_gradient(critic: Mlp, batch: Batch, targets: np.ndarray) -> Mlp:
    """Gradient of ``1/N sum_i sum_t (V(s_t) - G_t)^2`` over all ``N`` trajectories.

    Unlike the actor, the critic averages over agents too; summing them made
    the regression step large enough to diverge.
    """
    n, T, d = batch.obs.shape
    x = batch.obs.reshape(n * T, d)
    v, h = critic.forward(x)
    dv = 2.0 * (v - targets.reshape(-1, 1)) / n
    grad = critic.backward(x, h, dv)
    _check_finite(grad)
    return grad


def _require_nonempty(batch: Batch) -> None:
    if batch.n == 0:
        raise ValueError("empty batch")


def _check_finite(grad: Mlp) -> None:
    for name, g in zip(Mlp.NAMES, grad.params):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in {name}")


def pg_update(actor: Mlp, batch: Batch, lr: float, gamma: float = 1.0,
              full_return: bool = False, entropy_coef: float = 0.0) -> Mlp:
    _require_nonempty(batch)
    grad = policy_gradient(actor, batch, _weights(batch, gamma, full_return), entropy_coef)
    return actor.step(grad, lr)


def advantages(critic: Mlp, batch: Batch, gamma: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """``(A_t, G_t)`` with the empirical return standing in for Q."""
    ret = compute_returns(batch.rewards, gamma)
    n, T, d = batch.obs.shape
    v, _ = critic.forward(batch.obs.reshape(n * T, d))
    return ret - v.reshape(n, T), ret


def a2c_update(actor: Mlp, critic: Mlp, batch: Batch, lr_actor: float, lr_critic: float,
               gamma: float = 1.0, entropy_coef: float = 0.0) -> tuple[Mlp, Mlp]:
    _require_nonempty(batch)
    adv, ret = advantages(critic, batch, gamma)
    g_actor = policy_gradient(actor, batch, adv, entropy_coef)
    g_critic = critic_gradient(critic, batch, ret)
    return actor.step(g_actor, lr_actor), critic.step(g_critic, -lr_critic)


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1] + (1,))
    return np.minimum((cdf < u * cdf[..., -1:]).sum(axis=-1), probs.shape[-1] - 1)


def episode_seeds(seed: int, iteration: int, count: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence([seed, iteration]).generate_state(count)]


@dataclass
class Rollout:
    batch: Batch
    cost_price: np.ndarray     # (B, H) episode totals
    cost_emission: np.ndarray  # (B, H)
    reward: np.ndarray         # (B, H)


def rollout(env: BatchEnv, actor: Mlp, seeds: Sequence[int], rng: np.random.Generator | None,
            greedy: bool = False) -> Rollout:
    """Play one episode per seed with the shared actor."""
    obs = env.reset(seeds)
    B, A = obs.shape[:2]
    T = env.config.horizon
    H = env.fleet.n
    obs_buf = np.empty((B, A, T, OBS_DIM))
    act_buf = np.empty((B, A, T), dtype=np.int64)
    rew_buf = np.empty((B, A, T))
    price = np.zeros((B, H))
    emission = np.zeros((B, H))
    reward = np.zeros((B, H))
    for t in range(T):
        obs_buf[:, :, t] = obs
        if A:
            probs = policy_forward(actor, obs.reshape(B * A, -1))
            acts = probs.argmax(axis=1) if greedy else sample_actions(probs, rng)
            acts = acts.reshape(B, A)
        else:
            acts = np.zeros((B, 0), dtype=np.int64)
        act_buf[:, :, t] = acts
        s = env.step(acts)
        rew_buf[:, :, t] = s.reward[:, env.fleet.actionable]
        price += s.cost_price
        emission += s.cost_emission
        reward += s.reward
        obs = env.observe()[:, env.fleet.actionable]
    batch = Batch(obs_buf.reshape(B * A, T, OBS_DIM), act_buf.reshape(B * A, T),
                  rew_buf.reshape(B * A, T), episodes=B)
    return Rollout(batch, price, emission, reward)


@dataclass
class CurvePoint:
    iteration: int
    mean_reward: float
    mean_cost_price: float
    mean_cost_emission: float


@dataclass
class TrainResult:
    actor: Mlp
    critic: Mlp | None
    curve: list[CurvePoint] = field(default_factory=list)
    config: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0


def init_networks(config: TrainConfig, seed: int) -> tuple[Mlp, Mlp | None]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11CE]))
    actor = Mlp.init(OBS_DIM, config.n_actions, config.hidden, rng)
    critic = Mlp.init(OBS_DIM, 1, config.hidden, rng) if config.algo == "a2c" else None
    return actor, critic


def train(env_config: EnvConfig, config: TrainConfig, seed: int = 0,
          progress: Callable[[CurvePoint], None] | None = None) -> TrainResult:
    if config.n_actions != env_config.n_actions:
        raise ValueError("TrainConfig.n_actions must match the environment's action count")
    if config.rollout_steps != env_config.horizon:
        raise ValueError("rollout_steps must equal the episode horizon")
    env = BatchEnv(env_config)
    if env.n_actionable == 0:
        raise ValueError("no actionable households to train")
    actor, critic = init_networks(config, seed)
    sample_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A3]))
    result = TrainResult(actor, critic, [], config, seed)
    for it in range(config.training_steps):
        ro = rollout(env, actor, episode_seeds(seed, it, config.batch_size), sample_rng)
        if config.algo == "pg":
            actor = pg_update(actor, ro.batch, config.actor_lr, config.gamma,
                              config.full_return, config.entropy_coef)
        else:
            actor, critic = a2c_update(actor, critic, ro.batch, config.actor_lr,
                                       config.lr_critic, config.gamma, config.entropy_coef)
        point = CurvePoint(it, float(ro.batch.rewards.sum(axis=1).mean()),
                           float(ro.cost_price.mean()), float(ro.cost_emission.mean()))
        result.curve.append(point)
        if progress is not None:
            progress(point)
    result.actor, result.critic = actor, critic
    return result


def write_curve(path: str | Path, curve: Sequence[CurvePoint]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "mean_reward", "mean_cost_price", "mean_cost_emission"])
        for p in curve:
            w.writerow([p.iteration, repr(p.mean_reward), repr(p.mean_cost_price),
                        repr(p.mean_cost_emission)])
    return path


def _net_to_json(net: Mlp) -> list[dict]:
    return [{"name": n, "shape": list(p.shape), "data": [float(v) for v in p.ravel()]}
            for n, p in zip(Mlp.NAMES, net.params)]


def _net_from_json(layers: list[dict]) -> Mlp:
    by_name = {l["name"]: np.asarray(l["data"], dtype=float).reshape(l["shape"]) for l in layers}
    return Mlp(*(by_name[n] for n in Mlp.NAMES))


def save_checkpoint(path: str | Path, result: TrainResult) -> Path:
    path = Path(path)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "obs_dim": OBS_DIM,
        "seed": result.seed,
        "train_config": asdict(result.config),
        "actor": _net_to_json(result.actor),
        "critic": _net_to_json(result.critic) if result.critic is not None else None,
    }
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")
    return path


def load_checkpoint(path: str | Path) -> TrainResult:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a gridweave checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    if doc.get("obs_dim") != OBS_DIM:
        raise ValueError(f"checkpoint observation size {doc.get('obs_dim')} != {OBS_DIM}")
    critic = _net_from_json(doc["critic"]) if doc.get("critic") else None
    return TrainResult(_net_from_json(doc["actor"]), critic, [],
                       TrainConfig(**doc["train_config"]), int(doc["seed"]))
