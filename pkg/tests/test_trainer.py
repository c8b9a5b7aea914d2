from dataclasses import replace

import numpy as np
import pytest

from sodacer.critic import CostConfig
from sodacer.dynamics import HpvParameters
from sodacer.errors import ClusterCapacityExceeded, ConfigError, StepFailure
from sodacer.optimizer import OptimizerConfig
from sodacer.replay import ReplayConfig
from sodacer.safety import cbf_margin, default_hpv_barriers, safety_filter
from sodacer.trainer import TRAJECTORY_COLUMNS, TrainerConfig, rollout_constant, train_episode

P = HpvParameters()
COST = CostConfig()
REPLAY = ReplayConfig()
OPT = OptimizerConfig()
X0 = (0.05, 0.05, 0.0, 0.05, 0.0)
SHORT = TrainerConfig(horizon=1.0, max_inner_iters=20)


def run(cfg=SHORT, mask=None, x0=X0, replay=REPLAY):
    return train_episode(cfg, COST, replay, OPT, P, x0, mask=mask)


@pytest.fixture(scope="module")
def sodacer_run():
    return run()


def test_all_false_mask_is_uncontrolled():
    res = run(mask=[False] * 5)
    ref = rollout_constant(np.zeros(5), P, X0, 1.0, 0.01, COST)
    assert not res.controls.any()
    np.testing.assert_array_equal(res.states, ref.states)
    assert res.objective == ref.objective and res.spread == ref.spread


def test_untrained_zero_weights_give_zero_control_objective():
    cfg = replace(SHORT, max_inner_iters=0)
    res = run(cfg)
    ref = rollout_constant(np.zeros(5), P, X0, 1.0, 0.01, COST)
    assert not res.raw_controls.any() and not res.final_weights.any()
    assert res.objective == ref.objective


@pytest.mark.parametrize("kind", ["sodacer", "rer", "cber"])
def test_bit_identical_reruns(kind):
    cfg = replace(SHORT, replay_kind=kind, horizon=0.5, seed=7)
    a, b = run(cfg), run(cfg)
    assert a.trajectory_table().tobytes() == b.trajectory_table().tobytes()
    assert a.final_weights.tobytes() == b.final_weights.tobytes()
    assert a.diagnostics == b.diagnostics


def test_seed_changes_uniform_init():
    a = run(replace(SHORT, horizon=0.2, w0_init="uniform", seed=1))
    b = run(replace(SHORT, horizon=0.2, w0_init="uniform", seed=2))
    assert a.final_weights.tobytes() != b.final_weights.tobytes()


def test_shapes_and_columns(sodacer_run):
    res = sodacer_run
    assert res.states.shape == (101, 6) and res.controls.shape == (101, 5)
    assert res.trajectory_table().shape == (101, len(TRAJECTORY_COLUMNS))
    assert res.cost[0] == 0.0 and res.cost[-1] == res.objective
    assert np.all(np.diff(res.cost) >= 0)
    assert res.diagnostics["optimizer_steps"] == res.diagnostics["inner_iterations"]


def test_sample_conservation(sodacer_run):
    d = sodacer_run.diagnostics
    assert d["samples_generated"] == 100
    assert d["fast_len"] + d["slow_mass"] + d["forgotten_mass"] == 100
    assert d["clusters"] >= 1


def test_controls_admissible_and_safe(sodacer_run):
    res = sodacer_run
    barriers = default_hpv_barriers(P)
    assert np.all(res.controls >= 0) and np.all(res.controls <= P.control_upper)
    for x, u_raw, u in zip(res.states, res.raw_controls, res.controls):
        again, _ = safety_filter(x, u_raw, barriers, P)
        np.testing.assert_array_equal(again, u)
        assert np.all(cbf_margin(x, u, barriers, P)[:10] >= -1e-9)
    assert np.all((res.states[:, :5] >= 0) & (res.states[:, :5] <= 1))
    assert res.states[:, :3].sum(axis=1).max() <= 1 + 1e-12


def test_masked_controls_are_zero():
    mask = [False, False, True, True, False]
    res = run(replace(SHORT, horizon=0.5), mask=mask)
    assert not res.controls[:, [0, 1, 4]].any() and not res.raw_controls[:, [0, 1, 4]].any()


def test_buffer_trace_snapshots(sodacer_run):
    steps = [s["step"] for s in sodacer_run.buffer_trace]
    assert steps == [0, 100]
    assert run(replace(SHORT, horizon=0.2, replay_kind="rer")).buffer_trace == []


def test_optimizer_trace_rows():
    res = run(replace(SHORT, horizon=0.05, log_optimizer=True))
    rows = np.array(res.optimizer_trace)
    assert rows.shape == (res.diagnostics["inner_iterations"], 5)
    np.testing.assert_array_equal(rows[:, 1], np.arange(1, len(rows) + 1))


def test_step_failure_wraps_cause():
    tight = replace(REPLAY, fast_capacity=1, sigma0=1e-9, sigma_th=1e-12, max_clusters=1)
    with pytest.raises(StepFailure) as info:
        run(replace(SHORT, horizon=0.5), replay=tight)
    assert isinstance(info.value.cause, ClusterCapacityExceeded)
    assert info.value.step >= 2


def test_zero_horizon():
    res = run(replace(SHORT, horizon=0.0))
    assert res.states.shape == (1, 6) and res.objective == 0.0


def test_config_validation():
    for bad in (dict(delta=0.0), dict(max_inner_iters=-1), dict(replay_kind="per"),
                dict(w0=(0.0,) * 3), dict(cbf_gain=0.0), dict(w0_init="normal")):
        with pytest.raises(ConfigError):
            TrainerConfig(**bad).validate()


def test_rollout_constant_examples():
    none = rollout_constant(np.zeros(5), P, X0, 20.0, 0.01)
    caption = rollout_constant((0.2, 0.1, 0.5, 0.2, 0.2), P, X0, 20.0, 0.01)
    infected = lambda r: r.states[-1, [0, 1, 3]].sum()
    assert infected(caption) < infected(none)
    assert caption.spread < none.spread
    assert rollout_constant(np.zeros(5), P, X0, 0.0, 0.01).states.shape == (1, 6)
    with pytest.raises(ValueError):
        rollout_constant((0, 0, 4.0, 0, 0), P, X0, 1.0, 0.01)
