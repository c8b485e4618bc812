"""Futures CSV ingestion, calendar alignment and report writers."""

from __future__ import annotations

import csv
import datetime as _dt
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AlignmentError, DataError
from .metrics import csv_header, csv_row, equity_curve, fmt, format_table

log = logging.getLogger(__name__)

ASSET_CLASSES = ("equity_index", "fixed_income", "forex", "commodity")


@dataclass
class ContractSeries:
    symbol: str
    dates: np.ndarray  # datetime64[D], strictly increasing
    prices: np.ndarray
    asset_class: str | None = None
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.dates)


@dataclass
class AlignedPanel:
    dates: np.ndarray
    symbols: list
    prices: np.ndarray  # (T, n_symbols)
    target: str

    @property
    def target_index(self) -> int:
        return self.symbols.index(self.target)

    def column(self, symbol: str) -> np.ndarray:
        return self.prices[:, self.symbols.index(symbol)]


def load_csv(path: str | Path, symbol: str | None = None, asset_class: str | None = None) -> ContractSeries:
    """Read ``date,price`` or ``date,open,high,low,close`` (close is used).

    Rows are sorted by date; for duplicate dates the last row in the file wins
    and a warning is recorded.
    """
    path = Path(path)
    symbol = symbol or path.stem
    if asset_class is not None and asset_class not in ASSET_CLASSES:
        raise DataError(f"{symbol}: unknown asset class {asset_class!r}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    if header == ["date", "price"]:
        col = 1
    elif header[:5] == ["date", "open", "high", "low", "close"]:
        col = 4
    else:
        raise DataError(f"{path}:1: expected header 'date,price' or 'date,open,high,low,close', got {','.join(rows[0])!r}")

    by_date: dict = {}
    warnings = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            d = _dt.date.fromisoformat(row[0].strip())
        except ValueError:
            raise DataError(f"{path}:{lineno}: unparseable date {row[0]!r}") from None
        try:
            p = float(row[col])
        except ValueError:
            raise DataError(f"{path}:{lineno}: unparseable price {row[col]!r}") from None
        if not math.isfinite(p) or p <= 0:
            raise DataError(f"{path}:{lineno}: price must be positive and finite, got {row[col]!r}")
        if d in by_date:
            msg = f"{path}:{lineno}: duplicate date {d}; keeping this row"
            warnings.append(msg)
            log.warning(msg)
        by_date[d] = p
    if not by_date:
        raise DataError(f"{path}: no data rows")
    days = sorted(by_date)
    return ContractSeries(
        symbol,
        np.array(days, dtype="datetime64[D]"),
        np.array([by_date[d] for d in days]),
        asset_class,
        warnings,
    )


def align_panel(series: Sequence[ContractSeries], target: str = "ES") -> AlignedPanel:
    """Align every series to the target's calendar by forward fill.

    Target dates before any other series' first observation are dropped, so
    the panel has no missing cells and its dates are a subset of the target's.
    """
    if not series:
        raise AlignmentError("no series to align")
    symbols = [s.symbol for s in series]
    if len(set(symbols)) != len(symbols):
        raise AlignmentError(f"duplicate symbols: {symbols}")
    if target not in symbols:
        raise AlignmentError(f"target {target!r} not among {symbols}")
    tgt = series[symbols.index(target)]
    start = max(s.dates[0] for s in series)
    keep = tgt.dates >= start
    dates = tgt.dates[keep]
    if dates.size == 0:
        raise AlignmentError(f"no target dates on or after {start}, the latest first observation")
    for s in series:
        if s.dates[-1] < dates[0]:
            raise AlignmentError(f"{s.symbol} ends on {s.dates[-1]}, before the aligned range starts")
    cols = []
    for s in series:
        idx = np.searchsorted(s.dates, dates, side="right") - 1
        cols.append(s.prices[idx])
    return AlignedPanel(dates, symbols, np.stack(cols, axis=1), target)


# ----------------------------------------------------------------------------
# report writers


def _write_csv(out: Path, header: list, rows) -> Path:
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return out


def write_reports(result, out_dir: str | Path, model: str = "dqn") -> list[Path]:
    """Write metrics.csv, metrics.txt, equity.csv, positions.csv and
    equity.svg for an ExperimentResult; returns the created paths."""
    if result is None or len(result) == 0:
        raise DataError("empty result: nothing to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = result.metrics()
    paths = [
        _write_csv(out / "metrics.csv", csv_header(), [csv_row(model, k, reports[k]) for k in ("net", "gross", "benchmark")]),
    ]
    txt = out / "metrics.txt"
    txt.write_text(format_table([(k, reports[k]) for k in ("net", "gross", "benchmark")]), newline="\n")
    paths.append(txt)

    curves = {k: equity_curve(getattr(result, k))[1:] for k in ("net", "gross", "benchmark")}
    dates = [str(d) for d in result.dates]
    paths.append(
        _write_csv(
            out / "equity.csv",
            ["date", "net", "gross", "benchmark"],
            ([d, fmt(n), fmt(g), fmt(b)] for d, n, g, b in zip(dates, curves["net"], curves["gross"], curves["benchmark"])),
        )
    )
    paths.append(
        _write_csv(
            out / "positions.csv",
            ["date", "action", "cost"],
            ([d, int(a), fmt(c)] for d, a, c in zip(dates, result.positions, result.costs)),
        )
    )
    svg = out / "equity.svg"
    svg.write_text(equity_svg(dates, curves, title=model), newline="\n")
    paths.append(svg)
    return paths


def write_histogram_csv(cells, out: str | Path) -> Path:
    """One row per evaluation path per study cell."""
    rows = []
    for c in cells:
        for j, (a, b) in enumerate(zip(c.agent_sharpe, c.benchmark_sharpe)):
            rows.append([c.process, c.regime, c.n_paths, j, fmt(a), fmt(b)])
    return _write_csv(Path(out), ["process", "regime", "n_paths", "eval_path", "agent_sharpe", "benchmark_sharpe"], rows)


def write_study_summary(cells, out: str | Path) -> Path:
    rows = [
        [c.process, c.regime, c.n_paths, len(c.agent_sharpe), fmt(c.agent_mean), fmt(c.agent_std), fmt(c.benchmark_mean)]
        for c in cells
    ]
    header = ["process", "regime", "n_paths", "n_eval", "agent_mean_sharpe", "agent_std_sharpe", "benchmark_mean_sharpe"]
    return _write_csv(Path(out), header, rows)


def equity_svg(dates: list[str], curves: dict, title: str = "", width: int = 800, height: int = 400) -> str:
    """Minimal line chart of the equity curves with axes, labels and a legend."""
    colors = {"net": "#1f77b4", "gross": "#ff7f0e", "benchmark": "#2ca02c"}
    left, right, top, bottom = 70, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom
    allv = np.concatenate([np.asarray(v, dtype=float) for v in curves.values()] + [[1.0]])
    lo, hi = float(allv.min()), float(allv.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    n = max(len(dates), 2)

    def xy(i, v):
        return left + pw * i / (n - 1), top + ph * (1.0 - (v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{_esc(title)} equity</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        _, y = xy(0, v)
        parts.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    if dates:
        for i in sorted({0, len(dates) // 2, len(dates) - 1}):
            x, _ = xy(i, lo)
            parts.append(f'<text x="{x:.1f}" y="{top + ph + 16}" text-anchor="middle" font-size="10">{_esc(dates[i])}</text>')
    parts.append(f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">date</text>')
    parts.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {top + ph / 2:.1f})">equity (start = 1)</text>'
    )
    for j, (name, vals) in enumerate(curves.items()):
        pts = " ".join("%.2f,%.2f" % xy(i, v) for i, v in enumerate(vals))
        color = colors.get(name, "black")
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        ly = top + 12 + 16 * j
        parts.append(f'<line x1="{left + 10}" y1="{ly}" x2="{left + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + 36}" y="{ly + 4}" font-size="11">{_esc(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
