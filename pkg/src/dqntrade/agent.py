"""DQN training: epsilon-greedy exploration, prioritized replay, target
network and Adam updates on the dueling Q-network.

Action indices 0, 1, 2 encode positions -1, 0, +1 everywhere in the package.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .env import CostModel, TradingEnv
from .errors import ConfigError
from .features import StatePanel
from .nn import AdamState, DQNModel, MlpSpec, QNetwork, adam_step
from .replay import ReplayBuffer
from .rng import make_rng

ACTIONS = (-1, 0, 1)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    gamma: float = 0.94
    batch_size: int = 128
    buffer_size: int = 30000
    exploration_fraction: float = 0.25
    exploration_initial_eps: float = 1.0
    exploration_final_eps: float = 0.02
    learning_starts: int = 100
    target_network_update_freq: int = 500
    prioritized_replay: bool = True
    priority_alpha: float = 0.6
    priority_beta0: float = 0.4
    priority_eps: float = 1e-6
    total_timesteps: int | None = None
    epochs: int = 20
    train_freq: int = 1
    double_q: bool = False
    hidden: tuple = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")
        if self.batch_size < 1 or self.batch_size > self.buffer_size:
            raise ConfigError("need 1 <= batch_size <= buffer_size")
        if not 0.0 < self.exploration_fraction <= 1.0:
            raise ConfigError("exploration_fraction must be in (0, 1]")
        for name in ("exploration_initial_eps", "exploration_final_eps"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.learning_rate <= 0 or self.train_freq < 1 or self.target_network_update_freq < 1:
            raise ConfigError("learning_rate, train_freq and target_network_update_freq must be positive")
        if self.total_timesteps is not None and self.total_timesteps < 0:
            raise ConfigError("total_timesteps must be >= 0")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def resolve_timesteps(self, sources: Sequence[StatePanel]) -> int:
        if self.total_timesteps is not None:
            return int(self.total_timesteps)
        return self.epochs * sum(p.n_steps for p in sources)


def epsilon_at(step: int, config: TrainConfig, total_timesteps: int) -> float:
    """Linear anneal from the initial to the final rate over
    ``exploration_fraction * total_timesteps`` steps, then constant."""
    horizon = config.exploration_fraction * total_timesteps
    start, end = config.exploration_initial_eps, config.exploration_final_eps
    if horizon <= 0:
        return end
    if step >= horizon:
        return end
    return start + (step / horizon) * (end - start)


def beta_at(step: int, config: TrainConfig, total_timesteps: int) -> float:
    if total_timesteps <= 0:
        return 1.0
    frac = min(1.0, step / total_timesteps)
    return config.priority_beta0 + frac * (1.0 - config.priority_beta0)


def select_action(q, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy action index; argmax ties go to the lowest index."""
    if rng.random() < eps:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))


def td_target(reward, next_q_target, next_q_online, done, gamma: float, double_q: bool = False):
    """r + gamma * max_a Q_target(s', a), or the double-Q variant that picks the
    action with the online network. Works on scalars or batches."""
    next_q_target = np.asarray(next_q_target, dtype=float)
    if double_q:
        best = np.argmax(np.asarray(next_q_online, dtype=float), axis=-1)
        boot = np.take_along_axis(next_q_target, np.expand_dims(best, -1), -1)[..., 0]
    else:
        boot = next_q_target.max(axis=-1)
    return np.asarray(reward, dtype=float) + gamma * (1.0 - np.asarray(done, dtype=float)) * boot


def act_greedy(net: QNetwork, obs) -> int:
    """Greedy position in {-1, 0, +1} for one observation."""
    return ACTIONS[int(np.argmax(net.q_values(obs)))]


def greedy_positions(net: QNetwork, states: np.ndarray) -> np.ndarray:
    """Greedy positions for a batch of observations (same tie rule)."""
    q = net.q_values(np.asarray(states, dtype=float))
    return np.asarray(ACTIONS)[np.argmax(q, axis=1)]


class DQNAgent:
    def __init__(self, input_dim: int, config: TrainConfig = TrainConfig(), model: DQNModel | None = None):
        self.config = config
        spec = MlpSpec(input_dim, config.hidden, len(ACTIONS))
        self.model = model.copy() if model is not None else DQNModel.create(spec, make_rng(config.seed, 0))
        if self.model.spec != spec:
            raise ConfigError(f"model spec {self.model.spec} does not match {spec}")
        self.adam = AdamState.zeros_like({"flat": self.model.online.flat})
        self.buffer = ReplayBuffer(config.buffer_size, input_dim, config.priority_alpha, config.prioritized_replay)
        self.rng = make_rng(config.seed, 1)
        self.num_timesteps = 0

    @property
    def online(self) -> QNetwork:
        return self.model.online

    @property
    def target(self) -> QNetwork:
        return self.model.target

    def compute_gradients(self, batch) -> tuple[float, np.ndarray]:
        """Loss mean(w * delta^2) over the taken actions and its gradient,
        left in ``online.grad_flat``; returns (loss, delta)."""
        cfg = self.config
        q_next_target = self.target.q_values(batch.next_states)
        q_next_online = self.online.q_values(batch.next_states) if cfg.double_q else None
        targets = td_target(batch.rewards, q_next_target, q_next_online, batch.dones, cfg.gamma, cfg.double_q)

        q, cache = self.online.forward(batch.states)
        rows = np.arange(len(targets))
        delta = q[rows, batch.actions] - targets
        loss = float(np.mean(batch.weights * delta**2))
        dq = np.zeros_like(q)
        dq[rows, batch.actions] = 2.0 * batch.weights * delta / len(targets)
        self.online.backward(cache, dq)
        return loss, delta

    def train_step(self, beta: float = 1.0) -> float | None:
        """One gradient step on a replay batch; ``None`` if the buffer is not
        ready."""
        cfg = self.config
        batch = self.buffer.sample(cfg.batch_size, beta, self.rng)
        if batch is None:
            return None
        loss, delta = self.compute_gradients(batch)
        adam_step({"flat": self.online.flat}, {"flat": self.online.grad_flat}, self.adam, cfg.learning_rate)
        self.buffer.update_priorities(batch.indices, np.abs(delta) + cfg.priority_eps)
        return loss


@dataclass
class TrainingLog:
    step: list = field(default_factory=list)
    eps: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    episode_return: list = field(default_factory=list)

    def __len__(self):
        return len(self.step)

    def write_csv(self, out: str | Path) -> Path:
        out = Path(out)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "eps", "loss", "episode_return"])
            for row in zip(self.step, self.eps, self.loss, self.episode_return):
                w.writerow([row[0]] + [f"{x:.10g}" for x in row[1:]])
        return out


@dataclass
class FitResult:
    model: DQNModel
    log: TrainingLog
    total_timesteps: int
    target_updates: list = field(default_factory=list)


def fit(
    sources: StatePanel | Sequence[StatePanel],
    config: TrainConfig = TrainConfig(),
    cost: CostModel = CostModel(),
    init_model: DQNModel | None = None,
    callback: Callable[[DQNAgent, int], None] | None = None,
) -> FitResult:
    """Train on one or more panels, cycling through them one full episode at a
    time until ``total_timesteps`` environment steps have been taken.

    ``callback(agent, step)`` runs after every environment step.
    """
    if isinstance(sources, StatePanel):
        sources = [sources]
    sources = [p for p in sources if p.n_steps >= 1]
    if not sources:
        raise ConfigError("no training episodes: every source panel is shorter than 2 dates")
    dims = {p.state_dim for p in sources}
    if len(dims) != 1:
        raise ConfigError(f"training panels disagree on state dimension: {sorted(dims)}")

    total = config.resolve_timesteps(sources)
    agent = DQNAgent(dims.pop(), config, init_model)
    log = TrainingLog()
    updates = []
    envs = [TradingEnv(p, cost) for p in sources]
    episode = 0
    while agent.num_timesteps < total:
        env = envs[episode % len(envs)]
        episode += 1
        obs = env.reset()
        growth = 1.0
        while not env.done and agent.num_timesteps < total:
            step = agent.num_timesteps
            eps = epsilon_at(step, config, total)
            a = select_action(agent.online.q_values(obs), eps, agent.rng)
            res = env.step(ACTIONS[a])
            agent.buffer.push(obs, a, res.reward, res.next_state, res.done)
            obs = res.next_state
            growth *= 1.0 + res.reward
            agent.num_timesteps = step = step + 1

            loss = math.nan
            if step >= config.learning_starts and step % config.train_freq == 0:
                out = agent.train_step(beta_at(step, config, total))
                loss = math.nan if out is None else out
            if step >= config.learning_starts and step % config.target_network_update_freq == 0:
                agent.model.hard_update_target()
                updates.append(step)
            log.step.append(step)
            log.eps.append(eps)
            log.loss.append(loss)
            log.episode_return.append(growth - 1.0 if env.done else math.nan)
            if callback is not None:
                callback(agent, step)
    return FitResult(agent.model, log, total, updates)


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["hidden"] = list(config.hidden)
    return d
