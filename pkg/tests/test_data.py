import csv

import numpy as np
import pytest

from dqntrade.backtest import ExperimentResult
from dqntrade.data import align_panel, load_csv, write_histogram_csv, write_reports
from dqntrade.errors import AlignmentError, DataError
from dqntrade.metrics import COLUMNS, compute_metrics
from dqntrade.rng import make_rng


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def series(tmp_path, name, rows):
    return load_csv(write(tmp_path, f"{name}.csv", "date,price\n" + "".join(f"{d},{p}\n" for d, p in rows)), name)


def test_two_rows(tmp_path):
    s = load_csv(write(tmp_path, "ES.csv", "date,price\n2020-01-02,100\n2020-01-03,101\n"))
    assert s.symbol == "ES" and len(s) == 2 and s.prices.tolist() == [100, 101]


def test_ohlc_uses_close(tmp_path):
    s = load_csv(write(tmp_path, "x.csv", "date,open,high,low,close\n2020-01-02,1,3,0.5,2\n"), "X")
    assert s.prices.tolist() == [2.0]


def test_sorting_and_duplicates(tmp_path):
    s = load_csv(write(tmp_path, "x.csv", "date,price\n2020-01-03,3\n2020-01-01,1\n2020-01-02,2\n2020-01-01,9\n"), "X")
    assert [str(d) for d in s.dates] == ["2020-01-01", "2020-01-02", "2020-01-03"]
    assert s.prices.tolist() == [9, 2, 3]
    assert len(s.warnings) == 1 and ":5:" in s.warnings[0]


@pytest.mark.parametrize(
    "body,line",
    [("2020-01-02,-5\n", 2), ("2020-01-02,100\n2020-13-01,1\n", 3), ("2020-01-02,abc\n", 2), ("2020-01-02\n", 2)],
)
def test_bad_rows_name_the_line(tmp_path, body, line):
    with pytest.raises(DataError, match=f":{line}:"):
        load_csv(write(tmp_path, "x.csv", "date,price\n" + body))


def test_bad_header(tmp_path):
    with pytest.raises(DataError):
        load_csv(write(tmp_path, "x.csv", "day,value\n2020-01-01,1\n"))


def test_single_series_alignment(tmp_path):
    s = series(tmp_path, "ES", [("2020-01-01", 1), ("2020-01-02", 2)])
    p = align_panel([s], "ES")
    assert np.array_equal(p.dates, s.dates) and np.array_equal(p.column("ES"), s.prices)


def test_forward_fill_and_leading_drop(tmp_path):
    es = series(tmp_path, "ES", [("2020-01-01", 1), ("2020-01-02", 2), ("2020-01-03", 3), ("2020-01-06", 4)])
    cl = series(tmp_path, "CL", [("2020-01-02", 50), ("2020-01-06", 52)])
    p = align_panel([es, cl], "ES")
    assert [str(d) for d in p.dates] == ["2020-01-02", "2020-01-03", "2020-01-06"]
    assert p.column("CL").tolist() == [50, 50, 52]
    assert p.column("ES").tolist() == [2, 3, 4]
    assert set(p.dates.tolist()) <= set(es.dates.tolist())


def test_no_overlap(tmp_path):
    es = series(tmp_path, "ES", [("2020-01-01", 1), ("2020-01-02", 2)])
    late = series(tmp_path, "NQ", [("2021-01-01", 1)])
    early = series(tmp_path, "GC", [("2019-01-01", 1)])
    for other in (late, early):
        with pytest.raises(AlignmentError):
            align_panel([es, other], "ES")
    with pytest.raises(AlignmentError):
        align_panel([es], "CL")


def toy_result(n=30, seed=0):
    rng = make_rng(seed)
    gross = rng.normal(0, 0.01, n)
    costs = np.where(rng.random(n) < 0.2, 1e-4, 0.0)
    return ExperimentResult(
        dates=np.arange(np.datetime64("2020-01-01"), np.datetime64("2020-01-01") + n),
        net=gross - costs,
        gross=gross,
        benchmark=rng.normal(0, 0.01, n),
        positions=rng.integers(-1, 2, n),
        costs=costs,
    )


def test_reports_round_trip_and_layout(tmp_path):
    res = toy_result()
    paths = write_reports(res, tmp_path / "out", "VG")
    names = sorted(p.name for p in paths)
    assert names == ["equity.csv", "equity.svg", "metrics.csv", "metrics.txt", "positions.csv"]
    with open(tmp_path / "out" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["variant"] for r in rows] == ["net", "gross", "benchmark"]
    want = compute_metrics(res.net)
    for f, c, _ in COLUMNS:
        assert float(rows[0][c]) == float(f"{getattr(want, f):.10g}")
    eq = (tmp_path / "out" / "equity.csv").read_text()
    assert eq.count("\n") == len(res) + 1 and "\r" not in eq
    assert eq.splitlines()[1].startswith("2020-01-01,")
    svg = (tmp_path / "out" / "equity.svg").read_text()
    assert svg.startswith("<svg") and "benchmark" in svg and svg.count("<polyline") == 3


def test_reports_are_deterministic(tmp_path):
    write_reports(toy_result(), tmp_path / "a")
    write_reports(toy_result(), tmp_path / "b")
    for name in ("metrics.csv", "equity.csv", "positions.csv", "equity.svg", "metrics.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_empty_result_rejected(tmp_path):
    empty = ExperimentResult(np.arange(0), *(np.zeros(0) for _ in range(5)))
    with pytest.raises(DataError):
        write_reports(empty, tmp_path)


def test_histogram_csv(tmp_path):
    from dqntrade.backtest import StudyCell

    cell = StudyCell("vg", "down", 20, np.array([0.5, 1.0]), np.array([-1.0, -0.8]))
    text = write_histogram_csv([cell], tmp_path / "h.csv").read_text().splitlines()
    assert text[0] == "process,regime,n_paths,eval_path,agent_sharpe,benchmark_sharpe"
    assert text[1] == "vg,down,20,0,0.5,-1"
