"""Command-line front end: ``sodacer {simulate,train,compare,spectrum,validate-config}``."""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .dynamics import N_CONTROL, N_STATE
from .errors import ConfigError, SodacerError, StepFailure
from .experiments import (
    SCENARIO_MASKS,
    Components,
    ScenarioConfig,
    compare_methods,
    parse_scenarios,
    run_scenario,
    write_csv,
    write_friedman,
    write_json,
    write_spectrum,
)
from .trainer import REPLAY_KINDS, TRAJECTORY_COLUMNS, rollout_constant, train_episode

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_PARTIAL = 4
OUT_ENV = "SODACER_OUT"
DEFAULT_OUT = "sodacer-out"


def _floats(text: str, n: int, what: str) -> np.ndarray:
    try:
        vals = [float(p) for p in text.split(",")]
    except ValueError:
        raise ConfigError(f"{what} must be {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise ConfigError(f"{what} must have {n} entries, got {len(vals)}")
    return np.array(vals)


def _fmt(v) -> str:
    return f"{v:.17g}" if isinstance(v, float) else str(v)


class Run:
    """Output directory bookkeeping shared by every subcommand."""

    def __init__(self, args, cfg: RunConfig):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out)
        self.files: list[str] = []
        self.seeds: list[int] = []
        self.extra: dict = {}

    def prepare(self) -> None:
        manifest = self.out / "manifest.json"
        if manifest.exists() and not self.args.force:
            raise ConfigError(f"{manifest} already exists; pass --force to overwrite")
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def finish(self, command: list[str]) -> None:
        (self.out / "config.ini").write_text(self.cfg.to_ini(), encoding="utf-8")
        write_json(self.out / "manifest.json", {
            "artifact": "sodacer",
            "version": __version__,
            "subcommand": self.args.command,
            "command": command,
            "config": self.cfg.to_dict(),
            "config_ini": self.cfg.to_ini(),
            "seeds": self.seeds,
            "files": sorted(self.files + ["config.ini"]),
            **self.extra,
        })


def _rerun_command(args, extra: list[str]) -> list[str]:
    # the saved config.ini already carries every override and the seed
    return ["sodacer", args.command, "--config", "config.ini", "--out", "rerun"] + extra


def cmd_validate(args, cfg: RunConfig) -> int:
    print("configuration valid")
    if args.show:
        print(cfg.to_ini())
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    controls = _floats(args.controls, N_CONTROL, "--controls")
    x0 = _floats(args.x0, N_STATE, "--x0") if args.x0 else np.array(cfg.experiment.x0)
    upper = cfg.hpv.control_upper
    if np.any(controls < 0) or np.any(controls > upper):
        raise ConfigError(f"--controls must lie in [0, {upper.tolist()}]")
    run = Run(args, cfg)
    run.prepare()
    res = rollout_constant(controls, cfg.hpv, x0, cfg.trainer.horizon, cfg.trainer.dt, cfg.cost)
    write_csv(run.path("trajectory.csv"), res.trajectory_table(), TRAJECTORY_COLUMNS)
    summary = res.summary()
    summary.update(controls=controls.tolist(), x0=x0.tolist(),
                   total_infections_final=float(res.states[-1][[0, 1, 3]].sum()))
    write_json(run.path("summary.json"), summary)
    run.extra = {"x0": x0.tolist(), "controls": controls.tolist()}
    run.finish(_rerun_command(args, ["--controls", args.controls, "--x0", ",".join(map(repr, x0.tolist()))]))
    print(f"objective {res.objective:.6g}, final infections {summary['total_infections_final']:.6g}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    x0 = _floats(args.x0, N_STATE, "--x0") if args.x0 else np.array(cfg.experiment.x0)
    method = args.method or cfg.trainer.replay_kind
    tcfg = replace(cfg.trainer, replay_kind=method, log_safety=args.log_safety or cfg.trainer.log_safety)
    tcfg.validate()
    run = Run(args, cfg)
    run.prepare()
    res = train_episode(tcfg, cfg.cost, cfg.replay, cfg.optimizer, cfg.hpv, x0,
                        mask=SCENARIO_MASKS[args.scenario])
    write_csv(run.path("trajectory.csv"), res.trajectory_table(), TRAJECTORY_COLUMNS)
    summary = res.summary()
    summary.update(x0=x0.tolist(), scenario=args.scenario, method=method)
    write_json(run.path("summary.json"), summary)
    write_json(run.path("buffer_trace.json"), res.buffer_trace)
    if tcfg.log_safety:
        with open(run.path("safety_trace.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "barriers"] + [f"raw_{c}" for c in range(N_CONTROL)]
                       + [f"filtered_{c}" for c in range(N_CONTROL)])
            for rec in res.safety_log:
                w.writerow([_fmt(rec["t"]), ";".join(rec["barriers"])]
                           + [_fmt(v) for v in rec["raw"]] + [_fmt(v) for v in rec["filtered"]])
    if tcfg.log_optimizer:
        write_csv(run.path("optimizer_trace.csv"), np.array(res.optimizer_trace).reshape(-1, 5),
                  ["outer_step", "optimizer_step", "loss", "grad_norm", "dw_norm"])
    run.seeds = [tcfg.seed]
    run.extra = {"x0": x0.tolist(), "scenario": args.scenario, "method": method}
    run.finish(_rerun_command(args, ["--scenario", args.scenario, "--method", method,
                                     "--x0", ",".join(map(repr, x0.tolist()))]
                              + (["--log-safety"] if args.log_safety else [])))
    print(f"objective {res.objective:.6g}, spread {res.spread:.6g}, "
          f"inner iterations {res.diagnostics['inner_iterations']}")
    return EXIT_OK


def _batch_size(args, cfg: RunConfig) -> tuple[int, float]:
    exp = cfg.experiment
    runs, horizon = (exp.full_runs, exp.full_horizon) if args.full else (exp.runs, exp.horizon)
    if args.runs is not None:
        if args.runs < 1:
            raise ConfigError("--runs must be >= 1")
        runs = args.runs
    return runs, horizon


def _report_failures(failures) -> int:
    if not failures:
        return EXIT_OK
    print("failed runs:", file=sys.stderr)
    print("scenario  method   run  seed  error", file=sys.stderr)
    for f in failures:
        print("  ".join(str(v) for v in f), file=sys.stderr)
    return EXIT_PARTIAL


def cmd_spectrum(args, cfg: RunConfig) -> int:
    runs, horizon = _batch_size(args, cfg)
    method = args.method or "sodacer"
    sc = ScenarioConfig.from_id(args.scenario, runs=runs, horizon=horizon, dt=cfg.trainer.dt,
                                x0_sampler=cfg.experiment.sampler)
    run = Run(args, cfg)
    run.prepare()
    summary = run_scenario(sc, method, cfg.trainer.seed, Components.from_run_config(cfg),
                           workers=cfg.experiment.workers)
    write_spectrum(run.path(f"spectrum_{sc.id}_{method}.csv"), summary)
    write_json(run.path("spectrum.json"), summary.to_dict())
    run.seeds = summary.seeds
    run.extra = {"scenario": sc.id, "method": method, "runs": runs, "horizon": horizon}
    run.finish(_rerun_command(args, ["--scenario", sc.id, "--method", method, "--runs", str(runs)]
                              + (["--full"] if args.full else [])))
    print(f"{sc.id}/{method}: {summary.succeeded}/{runs} runs, mean objective {summary.mean_objective:.6g}")
    return _report_failures([(sc.id, method, *f) for f in summary.failures])


def cmd_compare(args, cfg: RunConfig) -> int:
    runs, horizon = _batch_size(args, cfg)
    ids = parse_scenarios(args.scenarios) if args.scenarios else list(cfg.experiment.scenarios)
    methods = [m.strip() for m in args.methods.split(",")] if args.methods else list(cfg.experiment.methods)
    for m in methods:
        if m not in REPLAY_KINDS:
            raise ConfigError(f"unknown method {m!r}; expected one of {REPLAY_KINDS}")
    scenarios = [ScenarioConfig.from_id(i, runs=runs, horizon=horizon, dt=cfg.trainer.dt,
                                        x0_sampler=cfg.experiment.sampler) for i in ids]
    run = Run(args, cfg)
    run.prepare()
    report = compare_methods(scenarios, methods, cfg.trainer.seed, Components.from_run_config(cfg),
                             workers=cfg.experiment.workers)
    for (sc, m), s in report.summaries.items():
        write_spectrum(run.path(f"spectrum_{sc}_{m}.csv"), s)
        print(f"{sc}/{m}: mean objective {s.mean_objective:.6g} ({s.succeeded}/{s.runs} runs)")
    write_friedman(run.path("friedman.csv"), report)
    write_json(run.path("comparison.json"), report.to_dict())
    run.seeds = report.seeds
    run.extra = {"scenarios": ids, "methods": methods, "runs": runs, "horizon": horizon}
    run.finish(_rerun_command(args, ["--scenarios", ",".join(ids), "--methods", ",".join(methods),
                                     "--runs", str(runs)] + (["--full"] if args.full else [])))
    if report.friedman is not None:
        print("average ranks: " + ", ".join(f"{m} {r:.2f}" for m, r in zip(methods, report.friedman.average)))
    return _report_failures(report.failures)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [hpv], [cost], [replay], [optimizer], "
                                         "[trainer] and [experiment] sections")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable; wins over --config)")
    common.add_argument("--out", default=os.environ.get(OUT_ENV, DEFAULT_OUT),
                        help=f"output directory (default ${OUT_ENV} or {DEFAULT_OUT})")
    common.add_argument("--seed", type=int, help="base seed (same as --set trainer.seed=N)")
    common.add_argument("--force", action="store_true", help="overwrite an existing run manifest")

    batch = argparse.ArgumentParser(add_help=False)
    batch.add_argument("--runs", type=int, help="runs per cell (default experiment.runs)")
    batch.add_argument("--full", action="store_true",
                       help="use experiment.full_runs and experiment.full_horizon (200 runs x 20 years)")

    p = argparse.ArgumentParser(prog="sodacer", description="Safe critic learning with clustered replay "
                                                          "on the HPV transmission model.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="open-loop rollout under constant controls")
    s.add_argument("--controls", default="0,0,0,0,0", help="w1,w2,u1,u2,alpha (default all zero)")
    s.add_argument("--x0", help="initial state u_f,i_f,v_f,i_m,v_m (default experiment.x0)")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", parents=[common], help="one closed-loop training episode")
    t.add_argument("--scenario", default="f5", choices=sorted(SCENARIO_MASKS))
    t.add_argument("--method", choices=REPLAY_KINDS, help="replay kind (default trainer.replay_kind)")
    t.add_argument("--x0", help="initial state u_f,i_f,v_f,i_m,v_m (default experiment.x0)")
    t.add_argument("--log-safety", action="store_true", help="write safety_trace.csv")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", parents=[common, batch], help="paired-seed comparison of replay methods")
    c.add_argument("--scenarios", help="e.g. f1..f5 or f2,f5 (default experiment.scenarios)")
    c.add_argument("--methods", help="comma list from rer,cber,sodacer (default experiment.methods)")
    c.set_defaults(func=cmd_compare)

    sp = sub.add_parser("spectrum", parents=[common, batch], help="min/mean/max envelope over seeded runs")
    sp.add_argument("--scenario", default="f5", choices=sorted(SCENARIO_MASKS))
    sp.add_argument("--method", choices=REPLAY_KINDS, help="replay kind (default sodacer)")
    sp.set_defaults(func=cmd_spectrum)

    v = sub.add_parser("validate-config", parents=[common], help="check a configuration without running")
    v.add_argument("--show", action="store_true", help="print the resolved configuration")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        overrides = list(args.set) + ([f"trainer.seed={args.seed}"] if args.seed is not None else [])
        cfg = load_config(args.config, overrides)
        code = args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepFailure as exc:
        print(f"numerical failure at {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SodacerError, ArithmeticError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    # wall-clock goes to the terminal so output files stay bit-identical across reruns
    print(f"elapsed {time.perf_counter() - started:.2f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
