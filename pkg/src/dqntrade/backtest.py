"""Experiment drivers: walk-forward backtests on one panel, training on many
simulated paths, and the Sharpe-histogram study over simulated regimes.

Throughout, a "day" is a tradable step: a panel with N dates has N - 1 days.
Day ``t`` holds the position chosen at ``dates[t]`` until ``dates[t + 1]``;
reported series are indexed by the date on which the day's return is realized.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .agent import FitResult, TrainConfig, fit, greedy_positions
from .env import CostModel
from .errors import ConfigError
from .features import FeatureConfig, StatePanel, build_state_panel
from .metrics import MetricsReport, compute_metrics
from .nn import DQNModel
from .rng import derive_seed, make_rng
from .sim import DT, TABLE1_GBM, TABLE1_VG, table1_regime_model, simulate

MODES = ("rolling_fixed", "expanding")
STUDY_REGIMES = ("up", "no", "down", "switch")


@dataclass(frozen=True)
class WalkForwardPlan:
    mode: str = "rolling_fixed"
    train_window: int = 1260
    test_window: int = 1260
    retrain_every: int = 63
    warm_start: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if min(self.train_window, self.test_window, self.retrain_every) < 1:
            raise ConfigError("walk-forward windows must be positive")

    def segments(self, n_days: int) -> list[tuple[int, int, int]]:
        """(train_start, cutoff, test_end) per segment, in days.

        Training uses days [train_start, cutoff); the model then trades days
        [cutoff, test_end). Test spans tile [train_window, n_days) exactly.
        """
        if n_days <= self.train_window:
            raise ConfigError(f"{n_days} tradable days do not exceed the first training window of {self.train_window}")
        step = self.test_window if self.mode == "rolling_fixed" else self.retrain_every
        out = []
        cutoff = self.train_window
        while cutoff < n_days:
            end = min(cutoff + step, n_days)
            start = cutoff - self.train_window if self.mode == "rolling_fixed" else 0
            out.append((start, cutoff, end))
            cutoff = end
        return out


@dataclass
class ExperimentResult:
    dates: np.ndarray
    net: np.ndarray
    gross: np.ndarray
    benchmark: np.ndarray
    positions: np.ndarray
    costs: np.ndarray
    segments: list = field(default_factory=list)
    models: list = field(default_factory=list)
    label: str = "dqn"

    def __post_init__(self):
        n = len(self.dates)
        if any(len(x) != n for x in (self.net, self.gross, self.benchmark, self.positions, self.costs)):
            raise ConfigError("result series must share one date index")

    def __len__(self):
        return len(self.dates)

    def metrics(self) -> dict[str, MetricsReport]:
        return {
            "net": compute_metrics(self.net),
            "gross": compute_metrics(self.gross),
            "benchmark": compute_metrics(self.benchmark),
        }


def benchmark_long_only(panel: StatePanel) -> np.ndarray:
    """Always-long, zero-cost daily returns of the traded asset."""
    return panel.target_returns.copy()


def evaluate_greedy(
    model: DQNModel,
    panel: StatePanel,
    start: int = 0,
    end: int | None = None,
    cost: CostModel = CostModel(),
    position: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Trade days [start, end) greedily from an initial ``position``.

    Returns (positions, gross, costs). Actions depend only on each day's own
    state, so the batch is evaluated in one forward pass.
    """
    end = panel.n_steps if end is None else end
    if not 0 <= start < end <= panel.n_steps:
        raise ConfigError(f"invalid evaluation span [{start}, {end}) for {panel.n_steps} days")
    pos = greedy_positions(model.online, panel.states[start:end]).astype(np.int64)
    gross = pos * panel.target_returns[start:end]
    prev = np.concatenate([[position], pos[:-1]])
    costs = np.array([cost.cost(int(a), int(b)) for a, b in zip(prev, pos)])
    return pos, gross, costs


def fit_segment(
    panel: StatePanel,
    segment: tuple[int, int, int],
    k: int,
    train_config: TrainConfig,
    cost: CostModel = CostModel(),
    init_model: DQNModel | None = None,
) -> FitResult:
    """Fit segment ``k``'s model on days [train_start, cutoff) only."""
    start, cutoff, _ = segment
    cfg = replace(train_config, seed=derive_seed(train_config.seed, k))
    return fit(panel.slice(start, cutoff + 1), cfg, cost, init_model=init_model)


def run_walk_forward(
    panel: StatePanel,
    plan: WalkForwardPlan = WalkForwardPlan(),
    train_config: TrainConfig = TrainConfig(),
    cost: CostModel = CostModel(),
    first_model: DQNModel | None = None,
    label: str = "dqn",
) -> ExperimentResult:
    """Train, freeze, trade; repeat over the plan's segments and concatenate.

    Each segment trains on a sub-panel ending at its cutoff date, so nothing
    after the cutoff is visible to the model. The position carries across
    segment boundaries. ``first_model`` replaces training of segment 0 (used
    to resume from a saved checkpoint).
    """
    segs = plan.segments(panel.n_steps)
    positions, gross, costs, models = [], [], [], []
    pos = 0
    prev_model = None
    for k, (start, cutoff, end) in enumerate(segs):
        if k == 0 and first_model is not None:
            model = first_model
        else:
            init = prev_model if plan.warm_start else None
            model = fit_segment(panel, (start, cutoff, end), k, train_config, cost, init).model
        p, g, c = evaluate_greedy(model, panel, cutoff, end, cost, pos)
        positions.append(p)
        gross.append(g)
        costs.append(c)
        models.append(model)
        pos = int(p[-1])
        prev_model = model
    first, last = segs[0][1], segs[-1][2]
    positions = np.concatenate(positions)
    gross = np.concatenate(gross)
    costs = np.concatenate(costs)
    return ExperimentResult(
        dates=panel.dates[first + 1 : last + 1],
        net=gross - costs,
        gross=gross,
        benchmark=benchmark_long_only(panel)[first:last],
        positions=positions,
        costs=costs,
        segments=segs,
        models=models,
        label=label,
    )


# ----------------------------------------------------------------------------
# simulated-data experiments


def study_source(process: str, regime: str):
    """Simulator for one study cell: a single Table 1 regime or the switching chain."""
    process = process.lower()
    if process not in ("gbm", "vg"):
        raise ConfigError(f"process must be 'gbm' or 'vg', got {process!r}")
    if regime not in STUDY_REGIMES:
        raise ConfigError(f"regime must be one of {STUDY_REGIMES}, got {regime!r}")
    if regime == "switch":
        return table1_regime_model(process)
    return (TABLE1_GBM if process == "gbm" else TABLE1_VG)[regime]


def simulated_panel(source, years: float, rng, features: FeatureConfig = FeatureConfig(), dt: float = DT) -> StatePanel:
    """A simulated path with a feature warm-up prefix, so the panel has
    exactly ``round(years / dt)`` tradable days."""
    days = int(round(years / dt))
    if days < 1:
        raise ConfigError("simulated horizon must cover at least one day")
    path = simulate(source, features.first_state_index + days, dt, rng)
    return build_state_panel(path.prices, features)


@dataclass
class SimulatedRun:
    model: DQNModel
    net: list  # per evaluation panel
    gross: list
    benchmark: list

    def sharpes(self, which: str = "net") -> np.ndarray:
        return np.array([compute_metrics(r).sharpe for r in getattr(self, which)])


def run_simulated_training(
    source,
    n_paths: int,
    train_config: TrainConfig,
    eval_panels: Sequence[StatePanel],
    cost: CostModel = CostModel(),
    years: float = 5.0,
    features: FeatureConfig = FeatureConfig(),
    seed: int = 0,
) -> SimulatedRun:
    """Fit one agent across ``n_paths`` independent simulated paths and
    evaluate it greedily on every evaluation panel."""
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    train = [simulated_panel(source, years, make_rng(seed, 1, i), features) for i in range(n_paths)]
    model = fit(train, train_config, cost).model
    run = SimulatedRun(model, [], [], [])
    for panel in eval_panels:
        _, g, c = evaluate_greedy(model, panel, cost=cost)
        run.net.append(g - c)
        run.gross.append(g)
        run.benchmark.append(benchmark_long_only(panel))
    return run


@dataclass
class StudyCell:
    process: str
    regime: str
    n_paths: int
    agent_sharpe: np.ndarray
    benchmark_sharpe: np.ndarray

    @property
    def agent_mean(self) -> float:
        return float(np.nanmean(self.agent_sharpe))

    @property
    def benchmark_mean(self) -> float:
        return float(np.nanmean(self.benchmark_sharpe))

    @property
    def agent_std(self) -> float:
        return float(np.nanstd(self.agent_sharpe))


def sharpe_histogram_study(
    process: str,
    regime: str,
    n_paths: int,
    train_config: TrainConfig,
    n_eval: int = 100,
    years: float = 5.0,
    cost: CostModel = CostModel(),
    features: FeatureConfig = FeatureConfig(),
    seed: int = 0,
) -> StudyCell:
    """Train once on ``n_paths`` paths of the cell's simulator, then collect
    the annualized net Sharpe ratio on ``n_eval`` fresh paths alongside the
    always-long benchmark's. Evaluation paths depend only on ``seed``, so
    cells with different ``n_paths`` are scored on the same paths."""
    source = study_source(process, regime)
    evals = [simulated_panel(source, years, make_rng(seed, 2, j), features) for j in range(n_eval)]
    cfg = replace(train_config, seed=derive_seed(seed, 3))
    run = run_simulated_training(source, n_paths, cfg, evals, cost, years, features, seed)
    return StudyCell(process, regime, n_paths, run.sharpes("net"), run.sharpes("benchmark"))


def run_study(cells: Sequence[dict], jobs: int = 1, **common) -> list[StudyCell]:
    """Run independent study cells, optionally on worker threads. Each cell
    is isolated, so results do not depend on ``jobs``."""
    if jobs <= 1 or len(cells) <= 1:
        return [sharpe_histogram_study(**c, **common) for c in cells]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda c: sharpe_histogram_study(**c, **common), cells))

