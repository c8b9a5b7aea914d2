"""Closed-loop training episode: control, filter, simulate, store, replay, update."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import replay as rp
from .critic import (
    N_FEATURES,
    CostConfig,
    check_weights,
    control_effort_cost,
    control_law,
    features,
    hamiltonian_design,
)
from .dynamics import N_CONTROL, N_STATE, HpvParameters, integrate_step
from .errors import ConfigError, SodacerError, StepFailure
from .optimizer import OptimizerConfig, inner_loop
from .safety import default_hpv_barriers, safety_filter

REPLAY_KINDS = ("sodacer", "rer", "cber")


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, key...)``; used to pair runs across methods."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass(frozen=True)
class TrainerConfig:
    delta: float = 1e-4
    max_inner_iters: int = 200
    horizon: float = 20.0
    dt: float = 0.01
    replay_kind: str = "sodacer"
    seed: int = 0
    w0: tuple | None = None
    w0_init: str = "zeros"  # or "uniform" on (-0.01, 0.01)
    cbf_gain: float = 5.0
    safety_filter: bool = True
    snapshot_every: int = 100
    log_optimizer: bool = False
    log_safety: bool = False

    def validate(self) -> None:
        if not self.delta > 0:
            raise ConfigError("trainer.delta must be > 0")
        if self.max_inner_iters < 0:
            raise ConfigError("trainer.max_inner_iters must be >= 0")
        if not self.horizon >= 0 or not self.dt > 0:
            raise ConfigError("trainer.horizon must be >= 0 and trainer.dt > 0")
        if self.replay_kind not in REPLAY_KINDS:
            raise ConfigError(f"trainer.replay_kind must be one of {REPLAY_KINDS}")
        if self.w0_init not in ("zeros", "uniform"):
            raise ConfigError("trainer.w0_init must be 'zeros' or 'uniform'")
        if self.w0 is not None and len(self.w0) != N_FEATURES:
            raise ConfigError(f"trainer.w0 must have {N_FEATURES} entries")
        if not self.cbf_gain > 0:
            raise ConfigError("trainer.cbf_gain must be > 0")
        if self.snapshot_every < 1:
            raise ConfigError("trainer.snapshot_every must be >= 1")

    def initial_weights(self) -> np.ndarray:
        if self.w0 is not None:
            return check_weights(np.array(self.w0, dtype=float))
        if self.w0_init == "uniform":
            return rng_stream(self.seed, 2).uniform(-0.01, 0.01, N_FEATURES)
        return np.zeros(N_FEATURES)


@dataclass
class RunResult:
    t: np.ndarray
    states: np.ndarray          # (n+1, 6) incl. j_cost
    raw_controls: np.ndarray    # (n+1, 5)
    controls: np.ndarray        # (n+1, 5) after mask and safety filter
    values: np.ndarray          # (n+1,)
    cost: np.ndarray            # (n+1,) running discounted objective
    final_weights: np.ndarray
    objective: float
    spread: float
    buffer_trace: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    safety_log: list = field(default_factory=list)
    optimizer_trace: list = field(default_factory=list)

    def trajectory_table(self) -> np.ndarray:
        """Columns: t, 5 states, j_cost, 5 raw controls, 5 filtered controls, value."""
        return np.column_stack([self.t, self.states, self.raw_controls, self.controls, self.values])

    def summary(self) -> dict:
        return {
            "objective": self.objective,
            "spread": self.spread,
            "final_weights": self.final_weights.tolist(),
            "final_state": self.states[-1].tolist(),
            "diagnostics": self.diagnostics,
        }


TRAJECTORY_COLUMNS = (
    ["t", "u_f", "i_f", "v_f", "i_m", "v_m", "j_cost"]
    + [f"raw_{c}" for c in ("w1", "w2", "u1", "u2", "alpha")]
    + ["w1", "w2", "u1", "u2", "alpha", "value"]
)


def _stage_cost(x: np.ndarray, u: np.ndarray, cost_cfg: CostConfig) -> float:
    e = x[:N_STATE] - cost_cfg.ref
    return float(e @ (cost_cfg.q * e)) + control_effort_cost(u, cost_cfg)


def _augment(x0) -> np.ndarray:
    x = np.array(x0, dtype=float)
    if x.shape == (N_STATE,):
        x = np.append(x, 0.0)
    if x.shape != (N_STATE + 1,):
        raise ValueError(f"initial state must have 5 or 6 entries, got shape {x.shape}")
    return x


def train_episode(cfg: TrainerConfig, cost_cfg: CostConfig, replay_cfg: rp.ReplayConfig,
                  opt_cfg: OptimizerConfig, params: HpvParameters, x0, mask=None,
                  run_id: int = 0) -> RunResult:
    """Run one episode of online critic learning with safe closed-loop control."""
    cfg.validate()
    mask = np.ones(N_CONTROL, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    n = int(round(cfg.horizon / cfg.dt))
    dt = cfg.dt
    x = _augment(x0)
    w = cfg.initial_weights()
    opt = opt_cfg.initial_state(N_FEATURES)
    barriers = default_hpv_barriers(params, gamma0=cfg.cbf_gain)
    rng = rng_stream(cfg.seed, 1)

    kind = cfg.replay_kind
    fast = rp.FastBuffer(replay_cfg.fast_capacity)
    slow = rp.SlowBuffer(static=(kind == "cber"))
    rer = rp.RandomReplay(replay_cfg.rer_capacity)

    states = np.empty((n + 1, N_STATE + 1))
    raw = np.empty((n + 1, N_CONTROL))
    applied = np.empty((n + 1, N_CONTROL))
    values = np.empty(n + 1)
    cost = np.zeros(n + 1)
    diag = {"clamps": 0, "safety_interventions": 0, "inner_iterations": 0,
            "inner_converged": 0, "merges": 0, "pruned_clusters": 0, "new_clusters": 0,
            "samples_generated": 0}
    buffer_trace, safety_log, opt_trace = [], [], []

    def policy(xs, ws):
        u_raw = control_law(xs, ws, cost_cfg, params)
        u_raw[~mask] = 0.0
        if cfg.safety_filter:
            u, rec = safety_filter(xs, u_raw, barriers, params)
        else:
            u, rec = np.clip(u_raw, 0.0, params.control_upper), None
        return u_raw, u, rec

    objective = 0.0
    spread = 0.0
    for k in range(n):
        t = k * dt
        try:
            e = x[:N_STATE] - cost_cfg.ref
            phi_t = features(e)
            u_raw, u, rec = policy(x, w)
            states[k], raw[k], applied[k] = x, u_raw, u
            values[k] = phi_t @ w
            if rec is not None and (rec.backed_off or rec.budget_exhausted):
                diag["safety_interventions"] += 1
                if cfg.log_safety:
                    safety_log.append({"t": t, "barriers": list(rec.backed_off)
                                       + (["budget"] if rec.budget_exhausted else []),
                                       "raw": u_raw.tolist(), "filtered": u.tolist()})

            objective += math.exp(-cost_cfg.nu * t) * _stage_cost(x, u, cost_cfg) * dt
            spread += (x[0] + x[1] + x[3]) * dt
            cost[k + 1] = objective

            x_next, clamps = integrate_step(x, u, params, dt)
            diag["clamps"] += clamps

            sample = rp.Sample(x=x[:N_STATE].copy(), u=u.copy(), t=t, run_id=run_id)
            diag["samples_generated"] += 1
            if kind == "rer":
                rp.rer_push(rer, sample)
                batch = rp.rer_sample(rer, replay_cfg.rer_batch_size, rng)
                X = np.stack([s.x for s in batch])
                U = np.stack([s.u for s in batch])
            else:
                old = fast.push(sample)
                if old is not None:
                    report = (rp.cber_absorb if kind == "cber" else rp.absorb)(slow, old, replay_cfg)
                    diag["new_clusters"] += report.created
                life = rp.run_lifecycle(slow, replay_cfg, k + 1)
                diag["merges"] += len(life["merged"])
                diag["pruned_clusters"] += len(life["pruned"])
                if len(fast) + slow.mass + slow.forgotten_mass != diag["samples_generated"]:
                    raise RuntimeError("replay mass conservation violated")
                X, U = rp.minibatch_arrays(fast, slow, replay_cfg, rng)

            if k % cfg.snapshot_every == 0 and kind != "rer":
                buffer_trace.append({"step": k, "t": t, "clusters": slow.snapshot()})

            if cfg.max_inner_iters > 0:
                c, A = hamiltonian_design(X, U, cost_cfg, params)
                opt, w, iters, converged, trace = inner_loop(opt, w, c, A, phi_t, cfg.delta,
                                                            cfg.max_inner_iters)
                diag["inner_iterations"] += iters
                diag["inner_converged"] += converged
                if cfg.log_optimizer:
                    first = opt.step - iters + 1
                    opt_trace.extend((k, first + i, *map(float, row)) for i, row in enumerate(trace))
            x = x_next
        except (SodacerError, ArithmeticError, ValueError) as exc:
            raise StepFailure(k, t, exc) from exc

    states[n] = x
    u_raw, u, _ = policy(x, w)
    raw[n], applied[n] = u_raw, u
    values[n] = features(x[:N_STATE] - cost_cfg.ref) @ w
    if kind != "rer":
        buffer_trace.append({"step": n, "t": n * dt, "clusters": slow.snapshot()})
        diag.update(clusters=len(slow), slow_mass=slow.mass, forgotten_mass=slow.forgotten_mass,
                    fast_len=len(fast))
    else:
        diag.update(rer_len=len(rer))
    diag["optimizer_steps"] = opt.step

    return RunResult(t=np.arange(n + 1) * dt, states=states, raw_controls=raw, controls=applied,
                     values=values, cost=cost, final_weights=w, objective=objective, spread=spread,
                     buffer_trace=buffer_trace, diagnostics=diag, safety_log=safety_log,
                     optimizer_trace=opt_trace)


def rollout_constant(controls, params: HpvParameters, x0, horizon: float, dt: float,
                     cost_cfg: CostConfig | None = None) -> RunResult:
    """Open-loop rollout under constant controls; no critic, no replay."""
    cost_cfg = cost_cfg or CostConfig()
    u = np.asarray(controls, dtype=float)
    if np.any(u < 0) or np.any(u > params.control_upper):
        raise ValueError(f"controls {u.tolist()} outside admissible bounds")
    n = int(round(horizon / dt))
    x = _augment(x0)
    states = np.empty((n + 1, N_STATE + 1))
    cost = np.zeros(n + 1)
    objective = spread = 0.0
    clamps = 0
    for k in range(n):
        t = k * dt
        states[k] = x
        objective += math.exp(-cost_cfg.nu * t) * _stage_cost(x, u, cost_cfg) * dt
        spread += (x[0] + x[1] + x[3]) * dt
        cost[k + 1] = objective
        try:
            x, c = integrate_step(x, u, params, dt)
        except (SodacerError, ArithmeticError) as exc:
            raise StepFailure(k, t, exc) from exc
        clamps += c
    states[n] = x
    ctrl = np.tile(u, (n + 1, 1))
    return RunResult(t=np.arange(n + 1) * dt, states=states, raw_controls=ctrl, controls=ctrl.copy(),
                     values=np.full(n + 1, np.nan), cost=cost, final_weights=np.zeros(N_FEATURES),
                     objective=objective, spread=spread, diagnostics={"clamps": clamps})
