"""The nine daily-return performance statistics, annualized with 252 days and
a zero risk-free rate.

Undefined ratios (zero denominator, or no positive/negative days for the
profit/loss ratio) are NaN.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError, InsufficientDataError

ANNUALIZATION = 252

# (field, csv header, table header) in the published column order
COLUMNS = (
    ("e_r", "E_R", "E(R)"),
    ("std_r", "std_R", "std(R)"),
    ("dd", "DD", "DD"),
    ("sharpe", "Sharpe", "Sharpe"),
    ("sortino", "Sortino", "Sortino"),
    ("mdd", "MDD", "MDD"),
    ("calmar", "Calmar", "Calmar"),
    ("pct_positive", "pct_pos", "% +ve"),
    ("avg_p_over_avg_l", "avgP_avgL", "AveP/AveL"),
)


@dataclass(frozen=True)
class MetricsReport:
    e_r: float
    std_r: float
    dd: float
    sharpe: float
    sortino: float
    mdd: float
    calmar: float
    pct_positive: float
    avg_p_over_avg_l: float
    # count of positive days over count of negative days; the alternative
    # reading of the profit/loss ratio, reported alongside the headline one
    pos_neg_count_ratio: float = math.nan
    n_days: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    def values(self) -> list[float]:
        return [getattr(self, f) for f, _, _ in COLUMNS]


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else math.nan


def equity_curve(daily_returns) -> np.ndarray:
    """[1, E_1, ..., E_n] with E_t = E_{t-1} * (1 + r_t)."""
    r = np.asarray(daily_returns, dtype=float)
    if not np.all(np.isfinite(r)):
        raise DataError("returns must be finite")
    if np.any(r <= -1.0):
        i = int(np.argmax(r <= -1.0))
        raise DataError(f"return {r[i]} at position {i} wipes out the position (<= -100%)")
    return np.concatenate([[1.0], np.cumprod(1.0 + r)])


def max_drawdown(daily_returns) -> float:
    eq = equity_curve(daily_returns)
    peak = np.maximum.accumulate(eq)
    return float(np.max(1.0 - eq / peak))


def compute_metrics(daily_returns) -> MetricsReport:
    r = np.asarray(daily_returns, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise InsufficientDataError(f"need at least 2 daily returns, got {r.size}")
    mdd = max_drawdown(r)  # also validates finiteness
    n = r.size
    e_r = ANNUALIZATION * float(np.mean(r))
    std_r = math.sqrt(ANNUALIZATION) * float(np.std(r))
    pos = r[r > 0]
    neg = r[r < 0]
    dd = math.sqrt(ANNUALIZATION) * float(np.std(neg)) if neg.size else 0.0
    avg_pl = float(np.mean(pos)) / abs(float(np.mean(neg))) if pos.size and neg.size else math.nan
    return MetricsReport(
        e_r=e_r,
        std_r=std_r,
        dd=dd,
        sharpe=_ratio(e_r, std_r),
        sortino=_ratio(e_r, dd),
        mdd=mdd,
        calmar=_ratio(e_r, mdd),
        pct_positive=pos.size / n,
        avg_p_over_avg_l=avg_pl,
        pos_neg_count_ratio=pos.size / neg.size if neg.size else math.nan,
        n_days=n,
    )


def fmt(x: float) -> str:
    """Fixed 10-significant-digit formatting used by every writer."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.10g}"


def csv_header() -> list[str]:
    return ["model", "variant"] + [c for _, c, _ in COLUMNS]


def csv_row(model: str, variant: str, report: MetricsReport) -> list[str]:
    return [model, variant] + [fmt(v) for v in report.values()]


def parse_csv_row(row: dict) -> MetricsReport:
    """Inverse of ``csv_row`` for a DictReader row (headline columns only)."""
    vals = {f: float(row[c]) for f, c, _ in COLUMNS}
    return MetricsReport(**vals)


def format_table(rows: list[tuple[str, MetricsReport]], counts: bool = True) -> str:
    """Aligned plain-text table in the published column order, with the
    count-based profit/loss ratio appended when ``counts``."""
    header = [""] + [t for _, _, t in COLUMNS] + (["#P/#L"] if counts else [])
    body = []
    for label, rep in rows:
        cells = [label]
        for f, _, _ in COLUMNS:
            v = getattr(rep, f)
            if f in ("e_r", "std_r", "dd", "mdd", "pct_positive"):
                cells.append("nan" if math.isnan(v) else f"{100 * v:.2f}%")
            else:
                cells.append("nan" if math.isnan(v) else f"{v:.3f}")
        if counts:
            c = rep.pos_neg_count_ratio
            cells.append("nan" if math.isnan(c) else f"{c:.3f}")
        body.append(cells)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = []
    for cells in [header] + body:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))))
    return "\n".join(lines) + "\n"
