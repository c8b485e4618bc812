"""Command-line entry point: ``dqntrade <command> [--config FILE] [options]``.

Commands: simulate, calibrate, train, backtest, study, report. Settings come
from a TOML file, then ``--set section.key=value`` and ``--seed``/``--out``
flags (flag > file > default). Every run writes ``manifest.toml`` with the
fully resolved settings and derived seeds; passing it back as ``--config``
reproduces the run byte for byte.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import os
import sys
from pathlib import Path

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .agent import TrainConfig, fit
from .backtest import (
    STUDY_REGIMES,
    WalkForwardPlan,
    fit_segment,
    run_study,
    run_walk_forward,
    simulated_panel,
    study_source,
)
from .data import align_panel, load_csv, write_histogram_csv, write_reports, write_study_summary
from .env import CostModel
from .errors import ConfigError, DataError, DqnTradeError
from .features import FeatureConfig, build_state_panel
from .metrics import format_table, parse_csv_row
from .nn import load_model, save_model
from .rng import derive_seed, make_rng
from .sim import (
    PricePath,
    RegimeModel,
    calibrate_gbm,
    calibrate_vg,
    params_to_dict,
    read_path_csv,
    sample_moments,
    simulate,
    write_path_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

# stream keys under the master seed
SEED_TRAIN, SEED_SIM_PATHS, SEED_BACKTEST_PATH, SEED_STUDY = 100, 200, 300, 400


def _defaults(cls, drop=()) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in drop:
            continue
        out[f.name] = f.default
    return out


OVERRIDES = ("mu", "sigma", "theta", "nu", "s0")

# section -> default values; keys absent here are rejected
SCHEMA = {
    "simulator": {
        "process": "vg",
        "regime": "switch",
        "initial_regime": "no",
        "n_paths": 1,
        "years": 10.0,
        **{k: None for k in OVERRIDES},
    },
    "data": {"files": [], "symbols": [], "target": "ES"},
    "features": _defaults(FeatureConfig),
    "cost": _defaults(CostModel),
    "train": _defaults(TrainConfig, drop=("seed",)),
    "plan": _defaults(WalkForwardPlan),
    "study": {"process": "vg", "regimes": list(STUDY_REGIMES), "n_paths": [1, 50, 90], "n_eval": 100, "years": 5.0},
    "calibrate": {"input": "", "process": "vg"},
}
TOP_LEVEL = {"seed": 0, "command": None, "version": None, "checkpoint": None}
INFO_SECTIONS = ("seeds",)  # written to manifests, ignored when read back


# ----------------------------------------------------------------------------
# configuration


def _load_toml(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_set(raw: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"--set expects section.key=value, got {item!r}")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) == 1:
        raw[parts[0]] = _parse_value(value.strip())
    elif len(parts) == 2:
        raw.setdefault(parts[0], {})[parts[1]] = _parse_value(value.strip())
    else:
        raise ConfigError(f"--set key must be 'key' or 'section.key', got {key!r}")


def resolve(raw: dict) -> dict:
    """Merge ``raw`` over the defaults, rejecting unknown keys."""
    cfg = {k: copy.deepcopy(v) for k, v in TOP_LEVEL.items()}
    for name, defaults in SCHEMA.items():
        cfg[name] = copy.deepcopy(defaults)
    for key, value in raw.items():
        if key in INFO_SECTIONS:
            continue
        if key in TOP_LEVEL:
            cfg[key] = value
        elif key in SCHEMA:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            for k, v in value.items():
                if k not in SCHEMA[key]:
                    raise ConfigError(f"unknown key {key}.{k}; expected one of {sorted(SCHEMA[key])}")
                cfg[key][k] = v
        else:
            raise ConfigError(f"unknown config key {key!r}")
    cfg["sections_given"] = sorted(k for k in raw if k in SCHEMA)
    return cfg


def _build(cls, section: str, values: dict, **extra):
    try:
        return cls(**values, **extra)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}] {e}") from None


def feature_config(cfg) -> FeatureConfig:
    d = dict(cfg["features"])
    d["horizons"] = tuple(d["horizons"])
    return _build(FeatureConfig, "features", d)


def cost_model(cfg) -> CostModel:
    return _build(CostModel, "cost", cfg["cost"])


def train_config(cfg) -> TrainConfig:
    d = dict(cfg["train"])
    d["hidden"] = tuple(d["hidden"])
    return _build(TrainConfig, "train", d, seed=derive_seed(cfg["seed"], SEED_TRAIN))


def plan(cfg) -> WalkForwardPlan:
    return _build(WalkForwardPlan, "plan", cfg["plan"])


def simulator_source(cfg):
    s = cfg["simulator"]
    over = {k: s[k] for k in OVERRIDES if s[k] is not None}
    if s["regime"] == "switch":
        if over:
            raise ConfigError("simulator.mu/sigma/theta/nu/s0 overrides need a single regime, not 'switch'")
        src = study_source(s["process"], "switch")
        return _build(RegimeModel, "simulator", {"regimes": src.regimes, "self_probs": src.self_probs, "initial_regime": s["initial_regime"]})
    base = study_source(s["process"], s["regime"])
    if s["process"] == "gbm" and ({"theta", "nu"} & over.keys()):
        raise ConfigError("simulator.theta and simulator.nu only apply to process = 'vg'")
    return _build(type(base), "simulator", {**dataclasses.asdict(base), **over})


def data_source(cfg) -> str:
    given = cfg["sections_given"]
    if "data" in given and "simulator" in given:
        raise ConfigError("configure exactly one data source: [data] or [simulator], not both")
    if "data" in given:
        if not cfg["data"]["files"]:
            raise ConfigError("data.files is empty")
        return "data"
    return "simulator"


def _out_dir(cfg, args) -> Path:
    out = Path(args.out) if args.out else Path("runs") / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(cfg: dict, out: Path, command: str, seeds: dict, sections: list[str]) -> Path:
    """Resolved settings for ``sections`` plus seeds; None values are omitted."""
    doc = {"command": command, "version": __version__, "seed": cfg["seed"]}
    if cfg.get("checkpoint"):
        doc["checkpoint"] = cfg["checkpoint"]
    for name in sections:
        doc[name] = {k: v for k, v in cfg[name].items() if v is not None}
    doc["seeds"] = {k: v for k, v in seeds.items()}
    path = out / "manifest.toml"
    path.write_text(tomli_w.dumps(doc), newline="\n")
    return path


# ----------------------------------------------------------------------------
# panels


def real_panel(cfg, features: FeatureConfig):
    d = cfg["data"]
    files = [Path(f) for f in d["files"]]
    symbols = list(d["symbols"]) or [f.stem for f in files]
    if len(symbols) != len(files):
        raise ConfigError("data.symbols must match data.files in length")
    series = [load_csv(f, s) for f, s in zip(files, symbols)]
    aligned = align_panel(series, d["target"])
    panel = build_state_panel(aligned.prices, features, aligned.target_index, aligned.dates, aligned.symbols)
    if panel.n_steps < 1:
        raise DataError(f"aligned history of {len(aligned.dates)} dates is shorter than the feature warm-up")
    return panel


def _absolute_files(cfg):
    cfg["data"]["files"] = [str(Path(f).resolve()) for f in cfg["data"]["files"]]


def experiment_panel(cfg, features):
    """(panel, sections, seeds) for train/backtest."""
    if data_source(cfg) == "data":
        _absolute_files(cfg)
        return real_panel(cfg, features), ["data"], {}
    seed = derive_seed(cfg["seed"], SEED_BACKTEST_PATH)
    panel = simulated_panel(simulator_source(cfg), cfg["simulator"]["years"], make_rng(seed), features)
    return panel, ["simulator"], {"backtest_path": seed}


# ----------------------------------------------------------------------------
# commands


def cmd_simulate(cfg, args) -> int:
    out = _out_dir(cfg, args)
    s = cfg["simulator"]
    src = simulator_source(cfg)
    n = int(s["n_paths"])
    if n < 1:
        raise ConfigError("simulator.n_paths must be >= 1")
    days = int(round(s["years"] * 252))
    seeds = {}
    for i in range(n):
        seed = derive_seed(cfg["seed"], SEED_SIM_PATHS, i)
        seeds[f"path_{i:03d}"] = seed
        write_path_csv(simulate(src, days, rng=make_rng(seed)), out / f"path_{i:03d}.csv")
    write_manifest(cfg, out, "simulate", seeds, ["simulator"])
    print(f"wrote {n} path(s) of {days} days to {out}")
    return EXIT_OK


def _read_prices(path: Path) -> PricePath:
    with open(path, newline="") as fh:
        head = fh.readline().strip().lower()
    if head.startswith("date_index"):
        return read_path_csv(path)
    return PricePath(load_csv(path).prices)


def cmd_calibrate(cfg, args) -> int:
    out = _out_dir(cfg, args)
    c = cfg["calibrate"]
    if not c["input"]:
        raise ConfigError("calibrate.input is required (a price CSV)")
    c["input"] = str(Path(c["input"]).resolve())
    path = _read_prices(Path(c["input"]))
    if c["process"] == "gbm":
        params = calibrate_gbm(path)
    elif c["process"] == "vg":
        params = calibrate_vg(path)
    else:
        raise ConfigError(f"calibrate.process must be 'gbm' or 'vg', got {c['process']!r}")
    moments = sample_moments(path.log_returns())
    doc = {"params": params_to_dict(params), "moments": {k: float(v) for k, v in moments.items()}}
    (out / "calibrated.toml").write_text(tomli_w.dumps(doc), newline="\n")
    write_manifest(cfg, out, "calibrate", {}, ["calibrate"])
    print(tomli_w.dumps(doc), end="")
    return EXIT_OK


def cmd_train(cfg, args) -> int:
    out = _out_dir(cfg, args)
    features, cost, tc = feature_config(cfg), cost_model(cfg), train_config(cfg)
    seeds = {"train": tc.seed}
    s = cfg["simulator"]
    if data_source(cfg) == "simulator" and int(s["n_paths"]) > 1:
        # multi-path training: n_paths independent simulated histories
        src = simulator_source(cfg)
        panels = []
        for i in range(int(s["n_paths"])):
            seeds[f"path_{i:03d}"] = derive_seed(cfg["seed"], SEED_SIM_PATHS, i)
            panels.append(simulated_panel(src, s["years"], make_rng(seeds[f"path_{i:03d}"]), features))
        result = fit(panels, tc, cost)
        sections = ["simulator"]
    else:
        panel, sections, extra = experiment_panel(cfg, features)
        seeds.update(extra)
        segment = plan(cfg).segments(panel.n_steps)[0]
        result = fit_segment(panel, segment, 0, tc, cost)
        sections = sections + ["plan"]
    save_model(result.model, out / "model.bin")
    result.log.write_csv(out / "training_log.csv")
    write_manifest(cfg, out, "train", seeds, sections + ["features", "cost", "train"])
    print(f"trained {result.total_timesteps} steps; checkpoint {out / 'model.bin'}")
    return EXIT_OK


def cmd_backtest(cfg, args) -> int:
    out = _out_dir(cfg, args)
    features, cost, tc, wf = feature_config(cfg), cost_model(cfg), train_config(cfg), plan(cfg)
    panel, sections, seeds = experiment_panel(cfg, features)
    seeds["train"] = tc.seed
    first = None
    if cfg.get("checkpoint"):
        cfg["checkpoint"] = str(Path(cfg["checkpoint"]).resolve())
        first = load_model(cfg["checkpoint"])
    result = run_walk_forward(panel, wf, tc, cost, first_model=first)
    label = "dqn" if sections == ["data"] else f"dqn-{cfg['simulator']['process']}"
    write_reports(result, out, label)
    write_manifest(cfg, out, "backtest", seeds, sections + ["features", "cost", "train", "plan"])
    print(format_table([(k, v) for k, v in result.metrics().items()]), end="")
    return EXIT_OK


def cmd_study(cfg, args) -> int:
    out = _out_dir(cfg, args)
    st = cfg["study"]
    for r in st["regimes"]:
        if r not in STUDY_REGIMES:
            raise ConfigError(f"study.regimes entries must be in {STUDY_REGIMES}, got {r!r}")
    cells = [dict(process=st["process"], regime=r, n_paths=int(n)) for r in st["regimes"] for n in st["n_paths"]]
    seed = derive_seed(cfg["seed"], SEED_STUDY)
    jobs = args.jobs or os.cpu_count() or 1
    results = run_study(
        cells,
        jobs=jobs,
        train_config=train_config(cfg),
        n_eval=int(st["n_eval"]),
        years=float(st["years"]),
        cost=cost_model(cfg),
        features=feature_config(cfg),
        seed=seed,
    )
    write_histogram_csv(results, out / "histogram.csv")
    write_study_summary(results, out / "summary.csv")
    write_manifest(cfg, out, "study", {"study": seed}, ["study", "features", "cost", "train"])
    for c in results:
        print(f"{c.process} {c.regime:6s} paths={c.n_paths:3d}  agent {c.agent_mean:+.3f} (sd {c.agent_std:.3f})  benchmark {c.benchmark_mean:+.3f}")
    return EXIT_OK


def cmd_report(cfg, args) -> int:
    rows = []
    for d in args.dirs:
        path = Path(d) / "metrics.csv"
        if not path.exists():
            raise DataError(f"{path} not found")
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append((f"{Path(d).name}/{row['model']}/{row['variant']}", parse_csv_row(row)))
    if not rows:
        raise DataError("no metrics rows found")
    text = format_table(rows, counts=False)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text, newline="\n")
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "write simulated price paths"),
    "calibrate": (cmd_calibrate, "fit GBM or VG parameters to a price CSV"),
    "train": (cmd_train, "train one model and save a checkpoint"),
    "backtest": (cmd_backtest, "walk-forward backtest with reports"),
    "study": (cmd_study, "Sharpe-ratio histograms over simulated regimes"),
    "report": (cmd_report, "tabulate metrics from earlier runs"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dqntrade", description="DQN futures trading experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        if name == "report":
            sp.add_argument("dirs", nargs="+", help="run directories containing metrics.csv")
            sp.add_argument("--out", help="also write report.txt here")
            continue
        sp.add_argument("--config", "-c", help="TOML config or a previous manifest.toml")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", "-o", help="output directory (default runs/<command>)")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one setting")
        if name == "study":
            sp.add_argument("--jobs", "-j", type=int, default=0, help="worker threads (default: all cores)")
        if name == "backtest":
            sp.add_argument("--checkpoint", help="model for the first segment instead of training it")
    return p


def load_config(args) -> dict:
    raw = _load_toml(Path(args.config)) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", []):
        apply_set(raw, item)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "checkpoint", None):
        raw["checkpoint"] = args.checkpoint
    cfg = resolve(raw)
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        cfg = load_config(args) if args.command != "report" else {}
        return func(cfg, args)
    except ConfigError as e:
        code, msg = EXIT_CONFIG, f"configuration error: {e}"
    except (DataError, FileNotFoundError) as e:
        code, msg = EXIT_DATA, f"data error: {e}"
    except (DqnTradeError, ArithmeticError, RuntimeError, OSError, ValueError) as e:
        code, msg = EXIT_RUNTIME, f"error: {type(e).__name__}: {e}"
    print(f"dqntrade: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
