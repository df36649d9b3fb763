"""Command-line entry point: ``urnlab <subcommand> --config PATH [overrides]``.

Exit codes: 0 success, 1 configuration or parse error, 2 numerical failure,
3 statistical failure (including a failed lln/clt/hitting test).
"""

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, io
from .errors import ConfigError, NumericalError, StatisticalError, UrnlabError
from .expr import parse_expression
from .harness import (clt_experiment, hitting_experiment, lln_experiment, resolve_workers,
                      run_ensemble)
from .limit import grid_function, solve_rho, theta_squared
from .model import ModelSpec, discretize, load_model, validate_model
from .moments import mean_path, moment_path
from .simulator import run_trajectory

SUBCOMMANDS = ("validate", "limit", "simulate", "moments", "lln", "clt", "hitting", "report")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_STATISTICAL = 0, 1, 2, 3

DEFAULTS = {
    "grid_size": 64,
    "step": 1e-3,
    "replicas": 500,
    "N_list": [25, 50, 100, 200],
    "master_seed": 0,
    "output_dir": "out",
    "test_functions": {"one": "1"},
    "targets": [],
}


@dataclass
class ExperimentConfig:
    """Resolved experiment configuration. ``N``, ``t``, ``f``, ``r`` default to
    max(N_list), the model horizon, the first test function and the first target."""

    model: object
    model_path: str
    test_functions: dict
    targets: list
    N_list: list
    grid_size: int
    step: float
    replicas: int
    master_seed: int
    output_dir: str
    N: int
    t: float
    f: str
    r: object = None
    record_times: list = field(default_factory=list)

    def test_function(self, name=None):
        name = self.f if name is None else name
        return parse_expression(self.test_functions[name], univariate=True)

    def resolved(self):
        doc = asdict(self)
        doc["model"] = self.model.to_dict()
        return doc


def _require(cond, field_name, message):
    if not cond:
        raise ConfigError(f"config field '{field_name}' {message}")


def _number(doc, key, kind=float):
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"config field '{key}' must be a number, got {value!r}")
    if kind is int:
        _require(float(value).is_integer(), key, f"must be an integer, got {value!r}")
        return int(value)
    return float(value)


def load_config(path, overrides=None):
    """Read an experiment config JSON and apply command-line overrides."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    doc = dict(DEFAULTS)
    doc.update(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value

    _require("model" in doc, "model", "is required")
    if isinstance(doc["model"], dict):
        model, model_path = ModelSpec.from_dict(doc["model"]), ""
    else:
        model_file = Path(doc["model"])
        if not model_file.is_absolute():
            model_file = path.parent / model_file
        model, model_path = load_model(model_file), str(doc["model"])

    funcs = doc["test_functions"]
    _require(isinstance(funcs, dict) and funcs, "test_functions",
             "must be a nonempty object of name -> expression")
    for name, text in funcs.items():
        try:
            parse_expression(str(text), univariate=True)
        except ConfigError as exc:
            raise ConfigError(f"config field 'test_functions.{name}': {exc}") from None
    funcs = {str(k): str(v) for k, v in funcs.items()}

    targets = []
    for item in doc["targets"]:
        if isinstance(item, dict):
            item = (item.get("f"), item.get("r"))
        _require(isinstance(item, (list, tuple)) and len(item) == 2, "targets",
                 "entries must be [name, r] pairs")
        name, r = item
        _require(name in funcs, "targets", f"references undeclared test function {name!r}")
        _require(isinstance(r, (int, float)) and math.isfinite(r), "targets",
                 f"level must be a finite number, got {r!r}")
        targets.append([str(name), float(r)])

    step = _number(doc, "step")
    _require(step > 0 and math.isfinite(step), "step", f"must be > 0, got {doc['step']!r}")
    grid_size = _number(doc, "grid_size", int)
    _require(grid_size >= 2, "grid_size", f"must be >= 2, got {grid_size}")
    replicas = _number(doc, "replicas", int)
    _require(replicas >= 2, "replicas", f"must be >= 2, got {replicas}")
    seed = _number(doc, "master_seed", int)
    _require(0 <= seed < 2 ** 64, "master_seed", "must be an unsigned 64-bit integer")
    N_list = doc["N_list"]
    _require(isinstance(N_list, list) and N_list, "N_list", "must be a nonempty list")
    N_list = [int(n) for n in N_list]
    _require(all(n >= 1 for n in N_list), "N_list", "entries must be >= 1")

    N = int(doc.get("N", max(N_list)))
    _require(N >= 1, "N", f"must be >= 1, got {N}")
    t = float(doc.get("t", model.horizon))
    _require(t >= 0 and math.isfinite(t), "t", f"must be finite and >= 0, got {t}")
    f_name = str(doc.get("f", targets[0][0] if targets else next(iter(funcs))))
    _require(f_name in funcs, "f", f"names an undeclared test function {f_name!r}")
    r = doc.get("r")
    if r is None:
        r = next((lv for name, lv in targets if name == f_name), None)
    record_times = [float(x) for x in doc.get("record_times", [t])]
    _require(all(x >= 0 for x in record_times), "record_times", "must be >= 0")

    return ExperimentConfig(
        model=model, model_path=model_path, test_functions=funcs, targets=targets,
        N_list=N_list, grid_size=grid_size, step=step, replicas=replicas, master_seed=seed,
        output_dir=str(doc["output_dir"]), N=N, t=t, f=f_name,
        r=None if r is None else float(r), record_times=sorted(record_times))


class Run:
    """Output directory bookkeeping for one subcommand invocation."""

    def __init__(self, command, cfg, config_path, argv, workers):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.config_path = str(config_path)
        self.argv = list(argv)
        self.workers = workers
        self.files = []
        self.started = time.perf_counter()

    def path(self, name):
        p = self.out / name
        self.files.append(name)
        return p

    def elapsed(self):
        return time.perf_counter() - self.started

    def report(self, results, passed=None):
        doc = {"experiment": self.command, "parameters": self.cfg.resolved(),
               "results": results, "wall_clock_seconds": self.elapsed()}
        if passed is not None:
            doc["pass"] = bool(passed)
        io.write_json(self.path(f"{self.command}_report.json"), doc)
        return doc

    def manifest(self, status):
        io.write_json(self.out / f"manifest_{self.command}.json", {
            "command": self.command,
            "argv": self.argv,
            "config": self.config_path,
            "model": self.cfg.model_path or "inline",
            "master_seed": self.cfg.master_seed,
            "workers": self.workers,
            "tool": "urnlab",
            "tool_version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "exit_status": status,
            "files": sorted(set(self.files)),
        })


def cmd_validate(run):
    cfg = run.cfg
    report = validate_model(cfg.model.with_urns(cfg.N), samples=cfg.grid_size)
    run.report(report.to_dict(), report.passed)
    print(json.dumps(io._jsonable(report.to_dict()["suprema"]), indent=2, sort_keys=True))
    report.raise_if_failed()
    return EXIT_OK


def _limit_times(cfg):
    times = cfg.record_times
    if times == [cfg.t]:
        times = np.linspace(0.0, cfg.t, 11).tolist()
    return times


def cmd_limit(run):
    cfg = run.cfg
    M = cfg.grid_size
    kernel = discretize(cfg.model, M)
    sol = solve_rho(kernel, cfg.t, cfg.step)
    io.write_rho_csv(run.path("limit_rho.csv"), sol)
    times = _limit_times(cfg)
    results = {}
    for name in cfg.test_functions:
        f = grid_function(cfg.test_function(name), M)
        mu, th = [], []
        for t in times:
            mu.append(float(solve_rho(kernel, t, cfg.step).mu(f)[-1]))
            th.append(theta_squared(f, kernel, t, cfg.step).total)
        io.write_scalar_csv(run.path(f"limit_{name}.csv"), times, mu, th)
        results[name] = {"mu_t": mu[-1], "theta2_t": th[-1]}
    run.report(results)
    return EXIT_OK


def _f_list(cfg):
    return {name: cfg.test_function(name) for name in cfg.test_functions}


def cmd_simulate(run, event_log=False):
    cfg = run.cfg
    spec = cfg.model.with_urns(cfg.N)
    means = mean_path(spec, cfg.record_times, cfg.step) if cfg.N <= 512 else None
    horizon = max(cfg.record_times + [cfg.t])
    res = run_ensemble(spec, _f_list(cfg), [tuple(t) for t in cfg.targets], cfg.replicas,
                       cfg.master_seed, run.workers, record_times=cfg.record_times,
                       horizon=horizon, means=means)
    io.write_trajectories_csv(run.path("trajectories.csv"), res)
    if event_log:
        # event logs are written per replica from a serial re-run of the same streams
        for replica in res.replicas:
            events = []
            run_trajectory(spec, seed=cfg.master_seed, replica=int(replica), horizon=horizon,
                           record_times=[], event_log=events)
            io.write_events_csv(run.path(f"events/replica_{int(replica):06d}.csv"), events)
    run.report({key: s.to_dict() for key, s in res.summaries().items()}
               | {"exploded_replicas": res.exploded})
    return EXIT_OK


def cmd_moments(run):
    cfg = run.cfg
    spec = cfg.model.with_urns(cfg.N)
    states = moment_path(spec, cfg.record_times, cfg.step)
    io.write_moments_csv(run.path("moments_mean.csv"), run.path("moments_cov.csv"), states)
    pts = np.arange(1, cfg.N + 1) / cfg.N
    results = {}
    for name in cfg.test_functions:
        f = np.broadcast_to(cfg.test_function(name)(pts), (cfg.N,))
        results[name] = [{"t": st.time, "var_V": st.var_fluctuation(f)} for st in states]
    results["max_offdiag_cov"] = [st.max_offdiag_cov() for st in states]
    run.report(results)
    return EXIT_OK


def _statistical_exit(passed):
    return EXIT_OK if passed else EXIT_STATISTICAL


def cmd_lln(run):
    cfg = run.cfg
    res = lln_experiment(cfg.model, cfg.test_function(), cfg.t, cfg.N_list, cfg.replicas,
                         cfg.master_seed, step=cfg.step, grid_size=cfg.grid_size,
                         worker_count=run.workers)
    rows = [(lv.n_urns, i, x) for lv in res.levels for i, x in enumerate(lv.summary.samples)]
    io.write_csv(run.path("lln_samples.csv"), ["N", "replica", "mu_f"], rows)
    run.report(res.to_dict(), res.passed)
    return _statistical_exit(res.passed)


def cmd_clt(run):
    cfg = run.cfg
    res = clt_experiment(cfg.model, cfg.test_function(), cfg.t, cfg.N, cfg.replicas,
                         cfg.master_seed, step=cfg.step, grid_size=cfg.grid_size,
                         worker_count=run.workers)
    io.write_csv(run.path("clt_samples.csv"), ["replica", "V_f"],
                 enumerate(res.summary.samples))
    run.report(res.to_dict(), res.passed)
    return _statistical_exit(res.passed)


def cmd_hitting(run):
    cfg = run.cfg
    if cfg.r is None:
        raise ConfigError(f"config field 'r' is required for hitting (no target for {cfg.f!r})")
    res = hitting_experiment(cfg.model, cfg.test_function(), cfg.r, cfg.N, cfg.replicas,
                             cfg.master_seed, step=cfg.step, grid_size=cfg.grid_size,
                             worker_count=run.workers)
    io.write_csv(run.path("hitting_samples.csv"), ["replica", "tau_N"],
                 enumerate(res.hitting_times))
    run.report(res.to_dict(), res.passed)
    return _statistical_exit(res.passed)


def cmd_report(run):
    rows, merged = [], {}
    for p in sorted(run.out.glob("*_report.json")):
        if p.name == "report_report.json":
            continue
        doc = json.loads(p.read_text())
        name = doc.get("experiment", p.stem)
        merged[name] = {"pass": doc.get("pass"), "results": doc.get("results"),
                        "wall_clock_seconds": doc.get("wall_clock_seconds")}
        rows.append((name, "" if doc.get("pass") is None else str(doc["pass"]).lower(),
                     _headline(name, doc.get("results") or {})))
    io.write_csv(run.path("summary.csv"), ["experiment", "pass", "headline"], rows)
    run.report(merged)
    width = max([len(r[0]) for r in rows] + [10])
    for name, passed, headline in rows:
        print(f"{name:<{width}}  {passed or '-':<5}  {headline}")
    return EXIT_OK


def _headline(name, results):
    try:
        if name == "lln":
            lv = results["levels"][-1]
            return f"N={lv['N']} mean={lv['summary']['sample_mean']:.6g} target={results['target']:.6g}"
        if name == "clt":
            return (f"N={results['N']} KS={results['ks']['ks_statistic']:.4g}"
                    f" var_rel_err={results['variance_rel_error']:.4g}")
        if name == "hitting":
            return (f"N={results['N']} tau={results['tau']:.6g} KS={results['ks']['ks_statistic']:.4g}"
                    f" far={results['far_fraction']:.4g}")
    except (KeyError, IndexError, TypeError):
        pass
    return ""


COMMANDS = {"validate": cmd_validate, "limit": cmd_limit, "simulate": cmd_simulate,
            "moments": cmd_moments, "lln": cmd_lln, "clt": cmd_clt, "hitting": cmd_hitting,
            "report": cmd_report}


def build_parser():
    parser = argparse.ArgumentParser(prog="urnlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"urnlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--seed", type=int, metavar="U64")
        p.add_argument("--workers", type=int, metavar="INT")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--N", type=int, dest="N")
        p.add_argument("--t", type=float)
        p.add_argument("--r", type=float)
        p.add_argument("--f", metavar="NAME")
        if name == "simulate":
            p.add_argument("--event-log", action="store_true",
                           help="also write per-replica event CSVs under events/")
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    run = None
    try:
        cfg = load_config(args.config, {"master_seed": args.seed, "output_dir": args.out,
                                        "N": args.N, "t": args.t, "r": args.r, "f": args.f})
        run = Run(args.command, cfg, args.config, argv, resolve_workers(args.workers))
        handler = COMMANDS[args.command]
        if args.command == "simulate":
            status = handler(run, event_log=args.event_log)
        else:
            status = handler(run)
    except ConfigError as exc:
        print(f"urnlab: configuration error: {exc}", file=sys.stderr)
        status = EXIT_CONFIG
    except NumericalError as exc:
        print(f"urnlab: numerical failure: {exc}", file=sys.stderr)
        status = EXIT_NUMERICAL
    except StatisticalError as exc:
        print(f"urnlab: statistical failure: {exc}", file=sys.stderr)
        status = EXIT_STATISTICAL
    except UrnlabError as exc:  # pragma: no cover - every subclass is handled above
        print(f"urnlab: {exc}", file=sys.stderr)
        status = EXIT_CONFIG
    if run is not None:
        run.manifest(status)
    if status == EXIT_STATISTICAL and run is not None:
        print(f"urnlab: {args.command} test did not pass", file=sys.stderr)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
