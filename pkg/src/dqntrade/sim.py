"""Price-path simulators: geometric Brownian motion, variance gamma, and a
three-state (up / no / down trend) regime-switching chain over either process.

Paths are built from per-day increments so that every path is Markov day by
day. Parameters are annualized; ``dt`` is the day length in years (1/252).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .errors import CalibrationError, InsufficientDataError, ParameterError

DT = 1.0 / 252.0
REGIMES = ("up", "no", "down")
REGIME_CODES = {"up": "U", "no": "N", "down": "D", None: "-"}

# Gamma time-change variance rate used when the data show no excess kurtosis.
NU_FLOOR = 1e-10


@dataclass(frozen=True)
class GbmParams:
    mu: float
    sigma: float
    s0: float = 1051.344

    def __post_init__(self):
        if not (self.sigma >= 0):
            raise ParameterError(f"sigma must be >= 0, got {self.sigma}")
        if not (self.s0 > 0):
            raise ParameterError(f"s0 must be > 0, got {self.s0}")


@dataclass(frozen=True)
class VgParams:
    mu: float
    sigma: float
    theta: float
    nu: float
    s0: float = 1051.344

    def __post_init__(self):
        if not (self.sigma >= 0):
            raise ParameterError(f"sigma must be >= 0, got {self.sigma}")
        if not (self.nu > 0):
            raise ParameterError(f"nu must be > 0, got {self.nu}")
        if not (self.s0 > 0):
            raise ParameterError(f"s0 must be > 0, got {self.s0}")
        if self.omega_arg <= 0:
            raise ParameterError(
                f"1 - theta*nu - sigma^2*nu/2 = {self.omega_arg} <= 0: omega undefined"
            )

    @property
    def omega_arg(self) -> float:
        return 1.0 - self.theta * self.nu - 0.5 * self.sigma**2 * self.nu

    @property
    def omega(self) -> float:
        """Drift correction making E[S_t] = S_0 exp(mu t)."""
        return math.log(self.omega_arg) / self.nu


ProcessParams = Union[GbmParams, VgParams]


@dataclass(frozen=True)
class RegimeModel:
    """Three trend regimes with daily self-transition probabilities.

    Leaving "up" or "down" always goes to "no"; leaving "no" splits evenly
    between "up" and "down".
    """

    regimes: Mapping[str, ProcessParams]
    self_probs: Mapping[str, float]
    initial_regime: str = "no"

    def __post_init__(self):
        if set(self.regimes) != set(REGIMES) or set(self.self_probs) != set(REGIMES):
            raise ParameterError(f"regime model needs exactly the regimes {REGIMES}")
        for name in REGIMES:
            p = self.self_probs[name]
            if not (0.0 <= p <= 1.0):
                raise ParameterError(f"p_{name}{name} = {p} outside [0, 1]")
        if self.initial_regime not in REGIMES:
            raise ParameterError(f"unknown initial regime {self.initial_regime!r}")

    def transition_matrix(self) -> np.ndarray:
        puu, pnn, pdd = (self.self_probs[r] for r in REGIMES)
        return np.array(
            [
                [puu, 1.0 - puu, 0.0],
                [(1.0 - pnn) / 2.0, pnn, (1.0 - pnn) / 2.0],
                [0.0, 1.0 - pdd, pdd],
            ]
        )


@dataclass(frozen=True)
class PricePath:
    prices: np.ndarray
    regime_labels: tuple | None = None
    dt: float = DT

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        if prices.ndim != 1 or len(prices) < 2:
            raise ParameterError("a price path needs at least 2 prices")
        if not np.all(prices > 0) or not np.all(np.isfinite(prices)):
            raise ParameterError("prices must be finite and strictly positive")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.regime_labels is not None and len(self.regime_labels) != len(prices):
            raise ParameterError("regime_labels must match the price length")
        object.__setattr__(self, "prices", prices)

    def __len__(self):
        return len(self.prices)

    def log_returns(self) -> np.ndarray:
        return np.diff(np.log(self.prices))


# Table 1 (annualized): self-transition probabilities and per-regime parameters.
TABLE1_SELF_PROBS = {"up": 0.950, "no": 0.900, "down": 0.950}
TABLE1_S0 = 1051.344
TABLE1_GBM = {
    "up": GbmParams(mu=0.254, sigma=0.109, s0=TABLE1_S0),
    "no": GbmParams(mu=0.016, sigma=0.158, s0=TABLE1_S0),
    "down": GbmParams(mu=-0.440, sigma=0.441, s0=TABLE1_S0),
}
TABLE1_VG = {
    "up": VgParams(mu=0.254, sigma=0.109, theta=-0.742, nu=3.93e-4, s0=TABLE1_S0),
    "no": VgParams(mu=0.016, sigma=0.158, theta=-0.287, nu=2.44e-4, s0=TABLE1_S0),
    "down": VgParams(mu=-0.440, sigma=0.441, theta=-0.410, nu=2.74e-4, s0=TABLE1_S0),
}


def table1_regime_model(process: str = "gbm", initial_regime: str = "no") -> RegimeModel:
    table = {"gbm": TABLE1_GBM, "vg": TABLE1_VG}.get(process)
    if table is None:
        raise ParameterError(f"unknown process {process!r}; expected 'gbm' or 'vg'")
    return RegimeModel(dict(table), dict(TABLE1_SELF_PROBS), initial_regime)


# --------------------------------------------------------------------------
# Sampling primitives


def sample_gamma(shape: float, scale: float, rng: np.random.Generator, size=None):
    """Gamma(shape, scale) variates by Marsaglia-Tsang squeeze/rejection.

    For shape < 1 the shape+1 variate is boosted by U**(1/shape).
    Returns a float when ``size`` is None, otherwise an array of that size.
    """
    if not (shape > 0) or not (scale > 0):
        raise ParameterError(f"gamma shape and scale must be > 0, got {shape}, {scale}")
    n = 1 if size is None else int(np.prod(size))
    boost = shape < 1.0
    a = shape + 1.0 if boost else shape
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)

    out = np.empty(n)
    filled = 0
    while filled < n:
        m = n - filled
        batch = m + m // 8 + 16
        z = rng.standard_normal(batch)
        u = rng.random(batch)
        v = (1.0 + c * z) ** 3
        pos = v > 0
        logv = np.log(np.where(pos, v, 1.0))
        accept = pos & (
            (u < 1.0 - 0.0331 * z**4) | (np.log(u) < 0.5 * z * z + d - d * v + d * logv)
        )
        got = (d * v[accept])[:m]
        out[filled : filled + len(got)] = got
        filled += len(got)
    if boost:
        out *= rng.random(n) ** (1.0 / shape)
    out *= scale
    if size is None:
        return float(out[0])
    return out.reshape(size)


def _gbm_increments(p: GbmParams, n: int, dt: float, rng) -> np.ndarray:
    """Zero-mean random part of the log increments (drift handled separately)."""
    return p.sigma * math.sqrt(dt) * rng.standard_normal(n)


def _vg_increments(p: VgParams, n: int, dt: float, rng) -> np.ndarray:
    g = sample_gamma(dt / p.nu, p.nu, rng, size=n)
    z = rng.standard_normal(n)
    return p.theta * g + p.sigma * np.sqrt(g) * z


def _log_drift(p: ProcessParams) -> float:
    if isinstance(p, VgParams):
        return p.mu + p.omega
    return p.mu - 0.5 * p.sigma**2


def _check_steps(n_steps: int, dt: float):
    if int(n_steps) < 1:
        raise ParameterError("n_steps must be >= 1")
    if not dt > 0:
        raise ParameterError("dt must be positive")


def gbm_path(params: GbmParams, n_steps: int, dt: float = DT, rng=None) -> PricePath:
    """Daily GBM path of ``n_steps + 1`` prices starting at ``s0``."""
    _check_steps(n_steps, dt)
    rng = rng if rng is not None else np.random.default_rng()
    t = np.arange(n_steps + 1) * dt
    noise = np.concatenate([[0.0], np.cumsum(_gbm_increments(params, n_steps, dt, rng))])
    return PricePath(params.s0 * np.exp(_log_drift(params) * t + noise), None, dt)


def vg_path(params: VgParams, n_steps: int, dt: float = DT, rng=None) -> PricePath:
    """Daily exp-VG path: log increment (mu+omega)dt + theta*g + sigma*sqrt(g)*z,
    with g ~ Gamma(shape=dt/nu, scale=nu)."""
    _check_steps(n_steps, dt)
    rng = rng if rng is not None else np.random.default_rng()
    t = np.arange(n_steps + 1) * dt
    noise = np.concatenate([[0.0], np.cumsum(_vg_increments(params, n_steps, dt, rng))])
    return PricePath(params.s0 * np.exp(_log_drift(params) * t + noise), None, dt)


def simulate_regimes(model: RegimeModel, n_steps: int, rng) -> np.ndarray:
    """Regime index (0=up, 1=no, 2=down) in force on each of ``n_steps`` days."""
    cum = np.cumsum(model.transition_matrix(), axis=1)
    u = rng.random(n_steps)
    states = np.empty(n_steps, dtype=np.int64)
    current = REGIMES.index(model.initial_regime)
    for i in range(n_steps):
        current = min(int(np.searchsorted(cum[current], u[i], side="right")), 2)
        states[i] = current
    return states


def regime_path(model: RegimeModel, n_steps: int, dt: float = DT, rng=None) -> PricePath:
    """Regime-switching path: each day the regime moves first, then that
    regime's process generates the day's increment.

    ``regime_labels[0]`` is the initial regime; ``regime_labels[k]`` is the
    regime that produced the move from price k-1 to price k.
    """
    _check_steps(n_steps, dt)
    rng = rng if rng is not None else np.random.default_rng()
    states = simulate_regimes(model, n_steps, rng)
    inc = np.empty(n_steps)
    for idx, name in enumerate(REGIMES):
        mask = states == idx
        k = int(mask.sum())
        if k == 0:
            continue
        p = model.regimes[name]
        noise = _vg_increments(p, k, dt, rng) if isinstance(p, VgParams) else _gbm_increments(p, k, dt, rng)
        inc[mask] = _log_drift(p) * dt + noise
    s0 = model.regimes[model.initial_regime].s0
    prices = s0 * np.exp(np.concatenate([[0.0], np.cumsum(inc)]))
    labels = (model.initial_regime,) + tuple(REGIMES[s] for s in states)
    return PricePath(prices, labels, dt)


def simulate(source, n_steps: int, dt: float = DT, rng=None) -> PricePath:
    """Dispatch on the source type: GbmParams, VgParams or RegimeModel."""
    if isinstance(source, RegimeModel):
        return regime_path(source, n_steps, dt, rng)
    if isinstance(source, VgParams):
        return vg_path(source, n_steps, dt, rng)
    if isinstance(source, GbmParams):
        return gbm_path(source, n_steps, dt, rng)
    raise ParameterError(f"cannot simulate from {type(source).__name__}")


# --------------------------------------------------------------------------
# Calibration


def calibrate_gbm(path: PricePath) -> GbmParams:
    if len(path) < 30:
        raise InsufficientDataError(f"GBM calibration needs >= 30 prices, got {len(path)}")
    r = path.log_returns()
    sigma = float(np.std(r, ddof=1)) / math.sqrt(path.dt)
    mu = float(np.mean(r)) / path.dt + 0.5 * sigma**2
    return GbmParams(mu=mu, sigma=sigma, s0=float(path.prices[0]))


def sample_moments(x: np.ndarray) -> dict:
    """Mean, population variance, skewness and excess kurtosis."""
    x = np.asarray(x, dtype=float)
    m = float(np.mean(x))
    c = x - m
    var = float(np.mean(c**2))
    if var == 0:
        return {"n": len(x), "mean": m, "var": 0.0, "skew": 0.0, "kurt": 0.0}
    skew = float(np.mean(c**3)) / var**1.5
    kurt = float(np.mean(c**4)) / var**2 - 3.0
    return {"n": len(x), "mean": m, "var": var, "skew": skew, "kurt": kurt}


def calibrate_vg(path: PricePath) -> VgParams:
    """Method-of-moments VG fit on daily log returns.

    Moment equations for one increment over dt (E g = dt, Var g = nu*dt):
        var   = (sigma^2 + theta^2 nu) dt
        skew  = 3 theta nu / (sigma sqrt(dt))       (theta^3 term dropped)
        kurt  = 3 nu / dt                            (theta terms dropped)

    Excess kurtosis that is not significantly positive (within two standard
    errors sqrt(24/n) of zero) is read as Brownian data: nu is set to
    ``NU_FLOOR`` and theta to 0, since skew is not identifiable without a
    random clock. Significantly negative kurtosis has no VG solution.
    """
    if len(path) < 250:
        raise InsufficientDataError(f"VG calibration needs >= 250 prices, got {len(path)}")
    dt = path.dt
    mom = sample_moments(path.log_returns())
    n = mom["n"]
    kurt_se = math.sqrt(24.0 / n)
    if mom["var"] <= 0:
        raise CalibrationError("zero-variance returns: VG undefined", mom)
    if mom["kurt"] < -3.0 * kurt_se:
        raise CalibrationError(f"negative excess kurtosis {mom['kurt']:.4g}: nu would be negative", mom)

    if mom["kurt"] > 2.0 * kurt_se:
        nu = mom["kurt"] * dt / 3.0
        sigma_approx = math.sqrt(mom["var"] / dt)
        theta = mom["skew"] * sigma_approx * math.sqrt(dt) / (3.0 * nu)
    else:
        nu, theta = NU_FLOOR, 0.0

    sigma2 = mom["var"] / dt - theta**2 * nu
    if sigma2 <= 0:
        raise CalibrationError("implied sigma^2 <= 0", mom)
    sigma = math.sqrt(sigma2)
    arg = 1.0 - theta * nu - 0.5 * sigma2 * nu
    if arg <= 0:
        raise CalibrationError(f"omega argument {arg:.4g} <= 0", mom)
    omega = math.log(arg) / nu
    mu = mom["mean"] / dt - theta - omega
    return VgParams(mu=mu, sigma=sigma, theta=theta, nu=nu, s0=float(path.prices[0]))


def skew_stderr_symmetric(x: np.ndarray) -> float:
    """Delta-method standard error of sample skewness under a symmetric null,
    sqrt((m6 - 6 m2 m4 + 9 m2^3) / (n m2^3)); reduces to sqrt(6/n) for Gaussian data."""
    x = np.asarray(x, dtype=float)
    c = x - x.mean()
    m2, m4, m6 = (float(np.mean(c**k)) for k in (2, 4, 6))
    return math.sqrt(max(m6 - 6 * m2 * m4 + 9 * m2**3, 0.0) / (len(x) * m2**3))


def vg_theta_stderr(returns: np.ndarray, sigma: float, nu: float, dt: float = DT) -> float:
    """Standard error of the moment estimate of theta (theta = skew * sigma sqrt(dt) / (3 nu))."""
    return sigma * math.sqrt(dt) / (3.0 * nu) * skew_stderr_symmetric(returns)


# --------------------------------------------------------------------------
# Export


def write_path_csv(path: PricePath, out: str | Path) -> Path:
    """Write ``date_index,price,regime`` with regime in {U, N, D, -}."""
    out = Path(out)
    labels = path.regime_labels or (None,) * len(path)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date_index", "price", "regime"])
        for i, (p, lab) in enumerate(zip(path.prices, labels)):
            w.writerow([i, repr(float(p)), REGIME_CODES[lab]])
    return out


def read_path_csv(src: str | Path, dt: float = DT) -> PricePath:
    inverse = {v: k for k, v in REGIME_CODES.items()}
    prices, labels = [], []
    with open(src, newline="") as fh:
        for row in csv.DictReader(fh):
            prices.append(float(row["price"]))
            labels.append(inverse[row.get("regime", "-")])
    has_labels = any(lab is not None for lab in labels)
    return PricePath(np.array(prices), tuple(labels) if has_labels else None, dt)


def params_to_dict(p: ProcessParams) -> dict:
    d = asdict(p)
    d["process"] = "vg" if isinstance(p, VgParams) else "gbm"
    return d


def params_from_dict(d: Mapping) -> ProcessParams:
    d = dict(d)
    process = d.pop("process", "vg" if "nu" in d else "gbm")
    cls = VgParams if process == "vg" else GbmParams
    return cls(**d)
