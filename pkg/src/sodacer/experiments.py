"""Scenario batches, min/mean/max spectra, method comparison and Friedman ranks."""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from .critic import CostConfig
from .dynamics import AUGMENTED_NAMES, CONTROL_NAMES, N_STATE, HpvParameters
from .errors import ConfigError, DegenerateInput, SodacerError
from .optimizer import OptimizerConfig
from .replay import ReplayConfig
from .trainer import REPLAY_KINDS, TrainerConfig, rng_stream, train_episode

# active controls over (w1, w2, u1, u2, alpha)
SCENARIO_MASKS = {
    "f1": (True, True, False, False, False),
    "f2": (False, False, True, True, True),
    "f3": (False, False, True, True, False),
    "f4": (False, False, False, False, True),
    "f5": (True, True, True, True, True),
}
SCENARIO_OBJECTIVES = {
    "f1": "prevention only (w1, w2)",
    "f2": "treatment and screening (u1, u2, alpha)",
    "f3": "treatment only (u1, u2)",
    "f4": "screening only (alpha)",
    "f5": "all controls",
}
SPECTRUM_VARIABLES = AUGMENTED_NAMES + CONTROL_NAMES + ("cost",)
COMPARISON_CAVEAT = (
    "Absolute objective values are not comparable with any published table: the seeds, "
    "discount rate, state weights, horizon and run statistic behind such tables are "
    "unknown. Only the rank computation and the direction of the method ordering are "
    "meaningful here."
)


def parse_scenarios(text: str) -> list[str]:
    """Accept ``f1,f3`` or a range ``f1..f5``."""
    out = []
    for part in (p.strip() for p in text.split(",") if p.strip()):
        if ".." in part:
            a, b = part.split("..", 1)
            try:
                lo, hi = int(a.strip().lstrip("f")), int(b.strip().lstrip("f"))
            except ValueError:
                raise ConfigError(f"bad scenario range {part!r}") from None
            out.extend(f"f{i}" for i in range(lo, hi + 1))
        else:
            out.append(part)
    for sc in out:
        if sc not in SCENARIO_MASKS:
            raise ConfigError(f"unknown scenario {sc!r}; expected one of {sorted(SCENARIO_MASKS)}")
    return out


@dataclass(frozen=True)
class X0Sampler:
    """Uniform initial states in a box, rejected until the sex-specific fractions sum to <= 1."""

    lo: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    hi: tuple = (0.2, 0.2, 0.5, 0.2, 0.5)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        lo, hi = np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)
        while True:
            x = rng.uniform(lo, hi)
            if x[0] + x[1] + x[2] <= 1.0 and x[3] + x[4] <= 1.0:
                return x


@dataclass(frozen=True)
class ExperimentConfig:
    runs: int = 20
    horizon: float = 10.0
    full_runs: int = 200
    full_horizon: float = 20.0
    scenarios: tuple = ("f1", "f2", "f3", "f4", "f5")
    methods: tuple = ("rer", "cber", "sodacer")
    # initial state for single simulate/train runs
    x0: tuple = (0.05, 0.05, 0.0, 0.05, 0.0)
    x0_lo: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    x0_hi: tuple = (0.2, 0.2, 0.5, 0.2, 0.5)
    workers: int = 1

    def validate(self) -> None:
        if self.runs < 1 or self.full_runs < 1 or self.workers < 1:
            raise ConfigError("experiment.runs, full_runs and workers must be >= 1")
        if not self.horizon > 0 or not self.full_horizon > 0:
            raise ConfigError("experiment horizons must be > 0")
        for sc in self.scenarios:
            if sc not in SCENARIO_MASKS:
                raise ConfigError(f"experiment.scenarios: unknown scenario {sc!r}")
        for m in self.methods:
            if m not in REPLAY_KINDS:
                raise ConfigError(f"experiment.methods: unknown method {m!r}")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (N_STATE,) or np.any(x0 < 0) or np.any(x0 > 1) \
                or x0[:3].sum() > 1 or x0[3:].sum() > 1:
            raise ConfigError("experiment.x0 must be a valid 5-component state")
        lo, hi = np.asarray(self.x0_lo, dtype=float), np.asarray(self.x0_hi, dtype=float)
        if lo.shape != (N_STATE,) or hi.shape != (N_STATE,) or np.any(lo < 0) \
                or np.any(hi > 1) or np.any(lo > hi):
            raise ConfigError("experiment.x0_lo/x0_hi must satisfy 0 <= lo <= hi <= 1")
        if lo[:3].sum() > 1 or lo[3:].sum() > 1:
            raise ConfigError("experiment.x0_lo admits no valid state")

    @property
    def sampler(self) -> X0Sampler:
        return X0Sampler(lo=self.x0_lo, hi=self.x0_hi)


@dataclass(frozen=True)
class ScenarioConfig:
    id: str
    mask: tuple
    runs: int = 20
    horizon: float = 10.0
    dt: float = 0.01
    x0_sampler: X0Sampler = field(default_factory=X0Sampler)

    @classmethod
    def from_id(cls, sid: str, **kw) -> "ScenarioConfig":
        if sid not in SCENARIO_MASKS:
            raise ConfigError(f"unknown scenario {sid!r}")
        return cls(id=sid, mask=SCENARIO_MASKS[sid], **kw)


@dataclass(frozen=True)
class Components:
    """Everything a single training run needs besides its seed and scenario."""

    params: HpvParameters = field(default_factory=HpvParameters)
    cost: CostConfig = field(default_factory=CostConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    @classmethod
    def from_run_config(cls, cfg) -> "Components":
        return cls(params=cfg.hpv, cost=cfg.cost, replay=cfg.replay, optimizer=cfg.optimizer,
                   trainer=cfg.trainer)


def run_seeds(base_seed: int, runs: int) -> list[int]:
    """Per-run seeds shared by every method so runs are paired across methods."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(base_seed).spawn(runs)]


def initial_state(sc: ScenarioConfig, run_seed: int) -> np.ndarray:
    return sc.x0_sampler.sample(rng_stream(run_seed, 0))


@dataclass
class RunOutcome:
    index: int
    seed: int
    x0: np.ndarray
    table: np.ndarray | None = None  # (n+1, 17): 6 states, 5 controls, cost, and t first
    objective: float = float("nan")
    spread: float = float("nan")
    diagnostics: dict = field(default_factory=dict)
    error: str | None = None


def _one_run(args) -> RunOutcome:
    sc, method, comps, index, seed = args
    x0 = initial_state(sc, seed)
    tcfg = replace(comps.trainer, seed=seed, replay_kind=method, horizon=sc.horizon, dt=sc.dt,
                   log_safety=False, log_optimizer=False)
    try:
        res = train_episode(tcfg, comps.cost, comps.replay, comps.optimizer, comps.params, x0,
                            mask=sc.mask, run_id=index)
    except SodacerError as exc:
        return RunOutcome(index, seed, x0, error=f"{type(exc).__name__}: {exc}")
    table = np.column_stack([res.t, res.states, res.controls, res.cost])
    return RunOutcome(index, seed, x0, table=table, objective=res.objective, spread=res.spread,
                      diagnostics=res.diagnostics)


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


@dataclass
class SpectrumSummary:
    scenario: str
    method: str
    t: np.ndarray
    minimum: np.ndarray   # (n+1, len(SPECTRUM_VARIABLES))
    mean: np.ndarray
    maximum: np.ndarray
    objectives: list      # per run, NaN for failed runs
    spreads: list
    seeds: list
    failures: list        # (run index, seed, message)
    cost_curves: np.ndarray | None = None  # (runs_ok, n+1) discounted cost per run

    @property
    def runs(self) -> int:
        return len(self.seeds)

    @property
    def succeeded(self) -> int:
        return self.runs - len(self.failures)

    @property
    def mean_objective(self) -> float:
        ok = [v for v in self.objectives if np.isfinite(v)]
        return float(np.mean(ok)) if ok else float("nan")

    def table(self) -> np.ndarray:
        """Columns: t, then min/mean/max for each spectrum variable."""
        cols = [self.t]
        for j in range(len(SPECTRUM_VARIABLES)):
            cols += [self.minimum[:, j], self.mean[:, j], self.maximum[:, j]]
        return np.column_stack(cols)

    @staticmethod
    def columns() -> list[str]:
        return ["t"] + [f"{v}_{s}" for v in SPECTRUM_VARIABLES for s in ("min", "mean", "max")]

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "method": self.method, "runs": self.runs,
                "succeeded": self.succeeded, "mean_objective": self.mean_objective,
                "objectives": self.objectives, "spreads": self.spreads, "seeds": self.seeds,
                "failures": [list(f) for f in self.failures]}


def summarize(scenario: str, method: str, outcomes: list[RunOutcome], t: np.ndarray) -> SpectrumSummary:
    ok = [o for o in sorted(outcomes, key=lambda o: o.index) if o.error is None]
    if ok:
        stack = np.stack([o.table[:, 1:] for o in ok])
        lo, mu, hi = stack.min(axis=0), stack.mean(axis=0), stack.max(axis=0)
        # summation rounding can push the mean a hair outside a zero-width envelope
        mu = np.clip(mu, lo, hi)
        curves = stack[:, :, -1]
    else:
        lo = mu = hi = np.full((t.size, len(SPECTRUM_VARIABLES)), np.nan)
        curves = None
    ordered = sorted(outcomes, key=lambda o: o.index)
    return SpectrumSummary(
        scenario=scenario, method=method, t=t, minimum=lo, mean=mu, maximum=hi,
        objectives=[o.objective for o in ordered], spreads=[o.spread for o in ordered],
        seeds=[o.seed for o in ordered],
        failures=[(o.index, o.seed, o.error) for o in ordered if o.error is not None],
        cost_curves=curves)


def run_scenario(sc: ScenarioConfig, method: str, base_seed: int, comps: Components | None = None,
                 workers: int = 1, seeds=None) -> SpectrumSummary:
    """Train ``sc.runs`` seeded episodes and aggregate their min/mean/max spectra.

    Failed runs are recorded in ``failures`` and excluded from the envelopes.
    """
    if method not in REPLAY_KINDS:
        raise ConfigError(f"unknown method {method!r}")
    comps = comps or Components()
    seeds = run_seeds(base_seed, sc.runs) if seeds is None else list(seeds)
    jobs = [(sc, method, comps, i, s) for i, s in enumerate(seeds)]
    outcomes = _map(_one_run, jobs, workers)
    n = int(round(sc.horizon / sc.dt))
    return summarize(sc.id, method, outcomes, np.arange(n + 1) * sc.dt)


@dataclass(frozen=True)
class FriedmanResult:
    ranks: np.ndarray          # (scenarios, methods)
    average: np.ndarray        # (methods,)
    degenerate_rows: tuple = ()


def friedman_ranks(values) -> FriedmanResult:
    """Rank methods within each scenario row (1 = smallest) and average over scenarios.

    Ties share the average of the ranks they span. A fully tied row triggers a
    ``DegenerateInput`` warning; its entries all get the middle rank.
    """
    V = np.atleast_2d(np.asarray(values, dtype=float))
    if V.ndim != 2 or V.size == 0:
        raise ValueError("values must be a non-empty scenarios x methods matrix")
    if not np.all(np.isfinite(V)):
        raise ValueError("values contain NaN or infinite entries")
    ranks = rankdata(V, method="average", axis=1)
    flat = tuple(int(i) for i in np.flatnonzero(np.all(V == V[:, :1], axis=1))) if V.shape[1] > 1 else ()
    if flat:
        warnings.warn(f"scenario rows {list(flat)} are fully tied", DegenerateInput, stacklevel=2)
    return FriedmanResult(ranks=ranks, average=ranks.mean(axis=0), degenerate_rows=flat)


@dataclass
class ComparisonReport:
    scenarios: list
    methods: list
    seeds: list
    summaries: dict            # (scenario, method) -> SpectrumSummary
    means: np.ndarray          # (scenarios, methods)
    friedman: FriedmanResult | None
    metadata: dict = field(default_factory=dict)

    @property
    def failures(self) -> list:
        return [(sc, m, *f) for (sc, m), s in self.summaries.items() for f in s.failures]

    def paired_differences(self, scenario: str, a: str, b: str) -> list[float]:
        """Per-seed ``objective(a) - objective(b)`` for one scenario."""
        oa = self.summaries[(scenario, a)].objectives
        ob = self.summaries[(scenario, b)].objectives
        return [x - y for x, y in zip(oa, ob)]

    def to_dict(self) -> dict:
        cells = {f"{sc}/{m}": s.to_dict() for (sc, m), s in self.summaries.items()}
        out = {
            "scenarios": self.scenarios,
            "methods": self.methods,
            "seeds": self.seeds,
            "statistic": "mean over runs of the final discounted cost",
            "mean_objective": {sc: dict(zip(self.methods, map(float, row)))
                               for sc, row in zip(self.scenarios, self.means)},
            "cells": cells,
            "caveat": COMPARISON_CAVEAT,
            "scenario_note": ("Scenario masks follow the published scenario table; a prose "
                              "description that disagrees with it was not used."),
        }
        if self.friedman is not None:
            out["friedman"] = {"ranks": self.friedman.ranks.tolist(),
                               "average_rank": dict(zip(self.methods, self.friedman.average.tolist())),
                               "degenerate_rows": [self.scenarios[i] for i in self.friedman.degenerate_rows]}
        if "rer" in self.methods and "sodacer" in self.methods:
            out["paired_sodacer_minus_rer"] = {
                sc: self.paired_differences(sc, "sodacer", "rer") for sc in self.scenarios}
        out.update(self.metadata)
        return out


def compare_methods(scenarios: list[ScenarioConfig], methods=REPLAY_KINDS, base_seed: int = 0,
                    comps: Components | None = None, workers: int = 1) -> ComparisonReport:
    """Run every (scenario, method) cell on the same seeds and rank methods per scenario."""
    comps = comps or Components()
    methods = list(methods)
    runs = {sc.runs for sc in scenarios}
    if len(runs) != 1:
        raise ConfigError("all scenarios in a comparison must use the same run count")
    seeds = run_seeds(base_seed, runs.pop())
    jobs, keys = [], []
    for sc in scenarios:
        for m in methods:
            for i, s in enumerate(seeds):
                jobs.append((sc, m, comps, i, s))
                keys.append((sc, m))
    outcomes = _map(_one_run, jobs, workers)
    summaries = {}
    for sc in scenarios:
        n = int(round(sc.horizon / sc.dt))
        t = np.arange(n + 1) * sc.dt
        for m in methods:
            cell = [o for o, k in zip(outcomes, keys) if k == (sc, m)]
            summaries[(sc.id, m)] = summarize(sc.id, m, cell, t)
    means = np.array([[summaries[(sc.id, m)].mean_objective for m in methods] for sc in scenarios])
    fr = friedman_ranks(means) if np.all(np.isfinite(means)) else None
    return ComparisonReport(scenarios=[sc.id for sc in scenarios], methods=methods, seeds=seeds,
                            summaries=summaries, means=means, friedman=fr)


def write_csv(path, table: np.ndarray, columns) -> None:
    np.savetxt(path, np.atleast_2d(table), fmt="%.17g", delimiter=",",
               header=",".join(columns), comments="")


def write_spectrum(path, summary: SpectrumSummary) -> None:
    write_csv(path, summary.table(), SpectrumSummary.columns())


def write_friedman(path, report: ComparisonReport) -> None:
    """Scenario rows of mean objectives followed by a ``rank`` row of average ranks."""
    lines = [",".join(["scenario"] + report.methods)]
    for sc, row in zip(report.scenarios, report.means):
        lines.append(",".join([sc] + [f"{v:.17g}" for v in row]))
    if report.friedman is not None:
        lines.append(",".join(["rank"] + [f"{v:.17g}" for v in report.friedman.average]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
