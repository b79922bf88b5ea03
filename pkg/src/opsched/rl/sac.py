"""Soft actor-critic with a tanh-squashed Gaussian policy over a single action in [0, 1]."""
from __future__ import annotations

import copy
import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..cost import HardwareProfile
from ..graph import ModelGraph
from ..nn import tensor as T
from ..nn.checkpoint import load_params, save_params
from ..nn.layers import MLP, Module
from ..nn.optim import Adam
from ..nn.tensor import Tensor
from ..plan import SchedulePlan
from ..sim import simulate
from .buffer import ReplayBuffer
from .env import STATE_DIM, SchedulingEnv

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_LOG_2PI = math.log(2.0 * math.pi)
_TANH_EPS = 1e-6


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class SacConfig:
    hidden: int = 64
    lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 0.005
    batch: int = 64
    buffer_capacity: int = 100_000
    warmup: int = 500
    init_alpha: float = 0.2
    target_entropy: float = -1.0
    eval_every: int = 10    # episodes between deterministic-plan evaluations
    eps_pin: float = 0.15       # pinning margin used while training (see README)
    sticky_prob: float = 0.2    # share of behaviour episodes that mostly hold one action
    sticky_hold: float = 0.9    # per-step probability of keeping the held action


class Policy(Module):
    def __init__(self, state_dim: int, hidden: int, rng):
        super().__init__()
        self.net = self.module("net", MLP([state_dim, hidden, hidden, 2], rng))

    def __call__(self, s):
        out = self.net(s)
        mean = out[:, 0:1]
        log_std = T.clamp(out[:, 1:2], LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std


class Critic(Module):
    def __init__(self, state_dim: int, hidden: int, rng):
        super().__init__()
        self.net = self.module("net", MLP([state_dim + 1, hidden, hidden, 1], rng))

    def __call__(self, s, a):
        return self.net(T.concat([T._t(s), T._t(a)], axis=-1))


def squash(u):
    """Gaussian pre-activation -> action in [0, 1]."""
    return (np.tanh(u) + 1.0) / 2.0


def squashed_log_prob(u: Tensor, mean: Tensor, log_std: Tensor, jac_scale: float = 1.0) -> Tensor:
    """log density of tanh(u) with u ~ N(mean, std); ``jac_scale=0.5`` gives the density of (tanh(u) + 1) / 2."""
    z = (u - mean) * T.exp(-log_std)
    gauss = -0.5 * T.square(z) - log_std - 0.5 * _LOG_2PI
    th = T.tanh(u)
    jac = T.log((1.0 - T.square(th)) * jac_scale + _TANH_EPS)
    return gauss - jac


def critic_target(r, done, q1_next, q2_next, logp_next, gamma: float, alpha: float) -> np.ndarray:
    return r + gamma * (1.0 - done) * (np.minimum(q1_next, q2_next) - alpha * logp_next)


def soft_update(target: Module, source: Module, tau: float) -> None:
    for t, s in zip(target.parameters(), source.parameters()):
        t.data = (1.0 - tau) * t.data + tau * s.data


class SacAgent:
    def __init__(self, state_dim: int = STATE_DIM, config: Optional[SacConfig] = None, seed: int = 0):
        self.config = config or SacConfig()
        c = self.config
        self.rng = np.random.default_rng([seed, 0x5AC])
        init = np.random.default_rng([seed, 1])
        self.policy = Policy(state_dim, c.hidden, init)
        self.q1 = Critic(state_dim, c.hidden, init)
        self.q2 = Critic(state_dim, c.hidden, init)
        self.q1_target = self.q1.clone()
        self.q2_target = self.q2.clone()
        self.log_alpha = Tensor(np.array(math.log(c.init_alpha)), requires_grad=True, name="log_alpha")
        self.pi_opt = Adam(self.policy.parameters(), lr=c.lr)
        self.q_opt = Adam(self.q1.parameters() + self.q2.parameters(), lr=c.lr)
        self.alpha_opt = Adam([self.log_alpha], lr=c.lr)
        self.updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data))

    # --- acting -------------------------------------------------------------
    def _dist(self, s: np.ndarray):
        mean, log_std = self.policy(Tensor(np.atleast_2d(s)))
        return mean.data, log_std.data

    def act(self, s: np.ndarray, deterministic: bool = False) -> float:
        mean, log_std = self._dist(s)
        u = mean if deterministic else mean + np.exp(log_std) * self.rng.standard_normal(mean.shape)
        return float(squash(u)[0, 0])

    def sample_actions(self, s: np.ndarray):
        """Stochastic actions and their log-probabilities (no graph)."""
        mean, log_std = self._dist(s)
        u = mean + np.exp(log_std) * self.rng.standard_normal(mean.shape)
        logp = squashed_log_prob(Tensor(u), Tensor(mean), Tensor(log_std)).data
        return squash(u), logp

    # --- learning -----------------------------------------------------------
    def update(self, batch) -> dict:
        c = self.config
        s, a, r, s2, d = batch
        alpha = self.alpha
        a2, logp2 = self.sample_actions(s2)
        q1n = self.q1_target(s2, a2).data
        q2n = self.q2_target(s2, a2).data
        y = critic_target(r, d, q1n, q2n, logp2, c.gamma, alpha)

        self.q_opt.zero_grad()
        q_loss = T.mean(T.square(self.q1(s, a) - y)) + T.mean(T.square(self.q2(s, a) - y))
        q_loss.backward()
        self.q_opt.step()

        self.pi_opt.zero_grad()
        mean, log_std = self.policy(Tensor(s))
        eps = self.rng.standard_normal(mean.shape)
        u = mean + T.exp(log_std) * eps
        logp = squashed_log_prob(u, mean, log_std)
        act = (T.tanh(u) + 1.0) * 0.5
        q_pi = T.minimum(self.q1(s, act), self.q2(s, act))
        pi_loss = T.mean(alpha * logp - q_pi)
        pi_loss.backward()
        self.pi_opt.step()

        self.alpha_opt.zero_grad()
        gap = float(np.mean(logp.data + c.target_entropy))
        alpha_loss = -(self.log_alpha * gap)
        alpha_loss.backward()
        self.alpha_opt.step()

        soft_update(self.q1_target, self.q1, c.tau)
        soft_update(self.q2_target, self.q2, c.tau)
        self.updates += 1
        out = {"q_loss": q_loss.item(), "pi_loss": pi_loss.item(), "alpha_loss": alpha_loss.item(),
               "alpha": self.alpha, "entropy": -float(np.mean(logp.data))}
        if not all(math.isfinite(v) for v in out.values()):
            raise TrainingDiverged(f"non-finite SAC loss after {self.updates} updates: {out}")
        return out

    # --- persistence ----------------------------------------------------------
    def modules(self) -> dict[str, Module]:
        return {"policy": self.policy, "q1": self.q1, "q2": self.q2,
                "q1_target": self.q1_target, "q2_target": self.q2_target}

    def params(self) -> dict[str, Tensor]:
        out = {}
        for prefix, mod in self.modules().items():
            for name, p in mod.named_parameters().items():
                out[f"{prefix}.{name}"] = p
        out["log_alpha"] = self.log_alpha
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, p in self.params().items():
            p.data = snap[k].copy()

    def save(self, path) -> None:
        save_params(path, self.snapshot(), extra={"updates": self.updates, "alpha": self.alpha})

    def load(self, path) -> None:
        values, extra = load_params(path)
        for k, p in self.params().items():
            p.data = values[k]
        self.updates = int(extra.get("updates", 0))


def sac_update(agent: SacAgent, buffer: ReplayBuffer, batch: int) -> dict:
    if len(buffer) < batch:
        raise ValueError(f"buffer holds {len(buffer)} < {batch} transitions")
    return agent.update(buffer.sample(batch))


@dataclass
class EpisodeRecord:
    episode: int
    ret: float
    latency: float
    alpha: float
    policy_entropy: float


@dataclass
class TrainResult:
    plan: SchedulePlan
    curve: list[EpisodeRecord]
    agent: SacAgent
    best_latency: float
    seconds: float
    episodes: int

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "return", "latency", "alpha", "policy_entropy"])
        for e in self.curve:
            w.writerow([e.episode, repr(e.ret), repr(e.latency), repr(e.alpha), repr(e.policy_entropy)])
        return buf.getvalue()


def rollout(env: SchedulingEnv, agent: SacAgent, deterministic: bool, buffer: Optional[ReplayBuffer] = None,
            held: Optional[float] = None, hold_p: float = 0.0):
    """One episode. With ``held`` set, each step keeps that action with probability ``hold_p``."""
    s = env.reset()
    ret = 0.0
    done = False
    while not done:
        if held is not None and agent.rng.random() < hold_p:
            a = held
        else:
            a = agent.act(s, deterministic)
        s2, r, done, _ = env.step(a)
        if buffer is not None:
            buffer.add(s, a, r, s2, done)
        ret += r
        s = s2
    return ret


def train_sac(graph: ModelGraph, profile: HardwareProfile, episodes: int = 300, seed: int = 0,
              config: Optional[SacConfig] = None, batch: float = 1, env_kwargs: Optional[dict] = None,
              target_latency: Optional[float] = None) -> TrainResult:
    """Train on one graph; returns the best deterministic plan seen during periodic evaluation.

    ``target_latency`` allows stopping early once the deterministic plan reaches it.
    """
    config = config or SacConfig()
    env_kwargs = {"eps_pin": config.eps_pin, **(env_kwargs or {})}
    env = SchedulingEnv(graph, profile, batch, **env_kwargs)
    agent = SacAgent(STATE_DIM, config, seed)
    buf = ReplayBuffer(STATE_DIM, config.buffer_capacity, seed)
    curve: list[EpisodeRecord] = []
    best_plan, best_lat = None, math.inf
    t0 = time.perf_counter()
    last_good = agent.snapshot()
    done_eps = 0
    diag = {"alpha": agent.alpha, "entropy": float("nan")}

    def evaluate():
        nonlocal best_plan, best_lat
        rollout(env, agent, deterministic=True)
        lat = env.sim.makespan
        if lat < best_lat:
            best_lat, best_plan = lat, env.plan("sac")

    for ep in range(episodes):
        held = None
        if agent.rng.random() < config.sticky_prob:
            k = agent.rng.integers(3)
            held = (0.0, 1.0, float(agent.rng.random()))[k]
        ret = rollout(env, agent, deterministic=False, buffer=buf, held=held, hold_p=config.sticky_hold)
        lat = env.sim.makespan
        if len(buf) >= max(config.warmup, config.batch):
            try:
                for _ in range(env.n_steps):
                    diag = sac_update(agent, buf, config.batch)
            except TrainingDiverged:
                agent.restore(last_good)
                raise
            last_good = agent.snapshot() if (ep + 1) % 50 == 0 else last_good
        curve.append(EpisodeRecord(ep, ret, lat, agent.alpha, diag.get("entropy", float("nan"))))
        done_eps = ep + 1
        if (ep + 1) % config.eval_every == 0 or ep == episodes - 1:
            evaluate()
            if target_latency is not None and best_lat <= target_latency:
                break
    plan = SchedulePlan(best_plan.placements, "sac", seed=seed, episodes=done_eps)
    return TrainResult(plan, curve, agent, best_lat, time.perf_counter() - t0, done_eps)
