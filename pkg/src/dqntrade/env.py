"""Single-asset trading MDP over a StatePanel.

Positions are -1 (short), 0 (flat) or +1 (long), held over [t, t+1). The
reward is position times next-day simple return, minus a proportional cost on
turnover |new - old| and a fixed cost whenever the position changes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DqnTradeError
from .features import StatePanel

POSITIONS = (-1, 0, 1)


class EpisodeDone(DqnTradeError, RuntimeError):
    """``step`` was called on a finished episode."""


@dataclass(frozen=True)
class CostModel:
    proportional: float = 1e-4
    fixed: float = 0.0

    def __post_init__(self):
        if self.proportional < 0 or self.fixed < 0:
            raise ConfigError("transaction costs must be >= 0")

    def cost(self, old: int, new: int) -> float:
        if new == old:
            return 0.0
        return self.proportional * abs(new - old) + self.fixed


ZERO_COST = CostModel(0.0, 0.0)


@dataclass
class StepResult:
    next_state: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class TradingEnv:
    def __init__(self, panel: StatePanel, cost: CostModel = CostModel(), trace: bool = False):
        self.panel = panel
        self.cost_model = cost
        self.trace = trace
        self.log: list[tuple] = []
        self.t = 0
        self.end = 0
        self.position = 0
        self.done = True

    def reset(self, start: int = 0, end: int | None = None, position: int = 0) -> np.ndarray:
        """Start an episode at panel position ``start``; the last decision is
        made at ``end - 1`` (default: the day before the final panel date)."""
        n = len(self.panel)
        end = n - 1 if end is None else end
        if not (0 <= start < end <= n - 1):
            raise ConfigError(f"invalid episode [{start}, {end}] for a panel of {n} dates")
        if position not in POSITIONS:
            raise ConfigError(f"position must be one of {POSITIONS}")
        self.t, self.end, self.position, self.done = start, end, position, False
        self.log = []
        return self.panel.states[start]

    @property
    def observation(self) -> np.ndarray:
        return self.panel.states[self.t]

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EpisodeDone("episode finished; call reset()")
        if action not in POSITIONS:
            raise ValueError(f"action {action!r} not in {POSITIONS}")
        p = self.panel.prices
        gross = action * (p[self.t + 1] / p[self.t] - 1.0)
        cost = self.cost_model.cost(self.position, action)
        if self.trace:
            self.log.append((self.panel.dates[self.t], action, gross, cost, gross - cost))
        self.position = action
        self.t += 1
        self.done = self.t >= self.end
        return StepResult(
            self.panel.states[self.t],
            gross - cost,
            self.done,
            {"gross": gross, "cost": cost, "position": action},
        )

    def write_trace(self, out: str | Path) -> Path:
        out = Path(out)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "action", "gross", "cost", "net"])
            for d, a, g, c, r in self.log:
                w.writerow([d, a, f"{g:.10g}", f"{c:.10g}", f"{r:.10g}"])
        return out


def episode_return(rewards) -> float:
    """Compounded return prod(1 + r) - 1."""
    return float(np.prod(1.0 + np.asarray(rewards, dtype=float)) - 1.0)
