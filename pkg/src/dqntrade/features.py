"""Volatility-normalized multi-horizon return features and 30-day state windows."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, ParameterError

CLAMP = 10.0


@dataclass(frozen=True)
class FeatureConfig:
    horizons: tuple = (1, 21, 42, 63, 126, 252)
    vol_span: int = 63
    lookback: int = 30
    vol_floor: float = 1e-8

    def __post_init__(self):
        h = tuple(int(k) for k in self.horizons)
        if not h or any(k < 1 for k in h) or any(b <= a for a, b in zip(h, h[1:])):
            raise ParameterError(f"horizons must be non-empty, >= 1 and strictly increasing: {h}")
        if self.lookback < 1:
            raise ParameterError("lookback must be >= 1")
        if self.vol_span < 2:
            raise ParameterError("vol_span must be >= 2")
        if not self.vol_floor > 0:
            raise ParameterError("vol_floor must be > 0")
        object.__setattr__(self, "horizons", h)

    @property
    def first_feature_index(self) -> int:
        """First date index with every horizon return and a post-warm-up volatility."""
        return max(self.horizons[-1], self.vol_span + 1)

    @property
    def first_state_index(self) -> int:
        return self.first_feature_index + self.lookback - 1

    def state_dim(self, n_assets: int) -> int:
        return self.lookback * len(self.horizons) * n_assets


@dataclass(frozen=True)
class StatePanel:
    """Observations for one traded asset.

    ``states[i]`` is the flattened (day, horizon, asset) window ending at
    ``dates[i]`` and ``prices[i]`` the traded asset's price on that date, so the
    reward for a position held from ``i`` to ``i + 1`` uses ``prices[i + 1] / prices[i]``.
    """

    dates: np.ndarray
    states: np.ndarray
    prices: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.states.ndim != 2 or len(self.states) != len(self.dates) or len(self.prices) != len(self.dates):
            raise DataError("dates, states and prices must share one index")

    def __len__(self):
        return len(self.dates)

    @property
    def n_steps(self) -> int:
        """Number of tradable days (dates with a successor)."""
        return len(self.dates) - 1

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def target_returns(self) -> np.ndarray:
        return self.prices[1:] / self.prices[:-1] - 1.0

    def slice(self, start: int, stop: int) -> "StatePanel":
        """Sub-panel over positions [start, stop)."""
        return StatePanel(self.dates[start:stop], self.states[start:stop], self.prices[start:stop], dict(self.meta))


def ewm_volatility(returns, span: int) -> np.ndarray:
    """Exponentially weighted standard deviation with alpha = 2 / (span + 1).

    mean_t = mean_{t-1} + alpha (r_t - mean_{t-1})
    var_t  = (1 - alpha) (var_{t-1} + alpha (r_t - mean_{t-1})^2)

    Entries for the first ``span`` returns are warm-up and set to NaN.
    Works column-wise on 2-D input.
    """
    if span < 2:
        raise ParameterError("span must be >= 2")
    r = np.asarray(returns, dtype=float)
    if r.shape[0] == 0:
        return r.copy()
    alpha = 2.0 / (span + 1.0)
    out = np.empty_like(r)
    mean = r[0].copy() if r.ndim > 1 else r[0]
    var = np.zeros_like(mean) if r.ndim > 1 else 0.0
    out[0] = 0.0
    for t in range(1, r.shape[0]):
        d = r[t] - mean
        mean = mean + alpha * d
        var = (1.0 - alpha) * (var + alpha * d * d)
        out[t] = var
    out = np.sqrt(out)
    out[:span] = np.nan
    return out


def horizon_return(prices, t: int, k: int) -> float:
    if t < k:
        raise DataError(f"horizon {k} needs history before index {t}")
    return prices[t] / prices[t - k] - 1.0


def _feature_matrix(prices: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """(T, n_horizons, n_assets) normalized features; rows before the first
    valid index are NaN."""
    T, n_assets = prices.shape
    daily = np.full_like(prices, np.nan)
    daily[1:] = prices[1:] / prices[:-1] - 1.0
    vol = np.full_like(prices, np.nan)
    vol[1:] = ewm_volatility(daily[1:], config.vol_span)
    denom = np.maximum(vol, config.vol_floor)

    feats = np.full((T, len(config.horizons), n_assets), np.nan)
    for j, k in enumerate(config.horizons):
        ret = np.full_like(prices, np.nan)
        ret[k:] = prices[k:] / prices[:-k] - 1.0
        feats[:, j, :] = ret / (denom * math.sqrt(k))
    feats[: config.first_feature_index] = np.nan
    return np.clip(feats, -CLAMP, CLAMP)


def build_state_panel(
    prices,
    config: FeatureConfig = FeatureConfig(),
    target: int = 0,
    dates: Sequence | None = None,
    symbols: Sequence[str] | None = None,
) -> StatePanel:
    """Build state windows for every date with full history.

    ``prices`` is (T,) or (T, n_assets); ``target`` is the column of the traded
    asset. States only use prices up to their own date.
    """
    p = np.asarray(prices, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    T, n_assets = p.shape
    bad = ~np.isfinite(p) | (p <= 0)
    if bad.any():
        t, a = np.argwhere(bad)[0]
        label = dates[t] if dates is not None else t
        sym = symbols[a] if symbols is not None else a
        raise DataError(f"invalid price {p[t, a]!r} at date {label} for asset {sym}")
    dates = np.arange(T) if dates is None else np.asarray(dates)
    if len(dates) != T:
        raise DataError("dates and prices differ in length")

    first = config.first_state_index
    if T <= first:
        dim = config.state_dim(n_assets)
        return StatePanel(dates[:0], np.empty((0, dim)), p[:0, target], _meta(config, n_assets, symbols, target))

    feats = _feature_matrix(p, config)
    L = config.lookback
    windows = np.lib.stride_tricks.sliding_window_view(feats, L, axis=0)  # (T-L+1, H, A, L)
    windows = np.moveaxis(windows, -1, 1)  # (T-L+1, L, H, A)
    states = windows[first - L + 1 :].reshape(T - first, -1).copy()
    return StatePanel(dates[first:], states, p[first:, target].copy(), _meta(config, n_assets, symbols, target))


def _meta(config, n_assets, symbols, target):
    return {
        "horizons": list(config.horizons),
        "lookback": config.lookback,
        "n_assets": n_assets,
        "symbols": list(symbols) if symbols is not None else None,
        "target": target,
    }


def write_state_panel_csv(panel: StatePanel, out: str | Path) -> Path:
    out = Path(out)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "price"] + [f"f{i}" for i in range(panel.state_dim)])
        for d, p, s in zip(panel.dates, panel.prices, panel.states):
            w.writerow([d, f"{p:.10g}"] + [f"{x:.10g}" for x in s])
    return out
