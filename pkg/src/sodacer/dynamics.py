"""HPV transmission model in control-affine form, plus a fixed-step RK4 integrator.

State vectors are ordered ``(U_f, I_f, V_f, I_m, V_m)``; the augmented state
used by the integrator appends the accumulated budget ``j_cost`` as a sixth
entry. Controls are ordered ``(w1, w2, u1, u2, alpha)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import NonFiniteState

STATE_NAMES = ("u_f", "i_f", "v_f", "i_m", "v_m")
AUGMENTED_NAMES = STATE_NAMES + ("j_cost",)
CONTROL_NAMES = ("w1", "w2", "u1", "u2", "alpha")

N_STATE = 5
N_CONTROL = 5


@dataclass(frozen=True)
class HpvParameters:
    """Model parameters; defaults are the mean values of the published table."""

    epsilon: float = 0.1
    theta: float = 1.0 / 10.0
    beta_m: float = 4.0
    beta_f: float = 4.0
    beta_f_tilde: float = 2.0
    gamma_f: float = 1.0 / 1.3
    gamma_m: float = 1.0 / 0.6
    p: float = 0.2
    mu_f: float = 1.0 / 30.0
    mu_m: float = 1.0 / 30.0
    a1_over_a0: float = 0.5
    a2_over_a0: float = 0.2
    a3_over_a0: float = 0.4
    u_max: float = 3.0
    alpha_max: float = 3.0
    j_max: float = 200.0

    def validate(self) -> None:
        from .errors import ConfigError

        rates = ("theta", "beta_m", "beta_f", "beta_f_tilde", "gamma_f", "gamma_m",
                 "mu_f", "mu_m", "a1_over_a0", "a2_over_a0", "a3_over_a0",
                 "u_max", "alpha_max", "j_max")
        for name in rates:
            if not getattr(self, name) > 0:
                raise ConfigError(f"hpv.{name} must be > 0, got {getattr(self, name)!r}")
        if not 0.0 <= self.epsilon <= 0.2:
            raise ConfigError(f"hpv.epsilon must lie in [0, 0.2], got {self.epsilon!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"hpv.p must lie in [0, 1], got {self.p!r}")

    @property
    def control_upper(self) -> np.ndarray:
        """Upper saturation limits for ``(w1, w2, u1, u2, alpha)``."""
        return np.array([1.0, 1.0, self.u_max, self.u_max, self.alpha_max])

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SystemState:
    u_f: float = 0.0
    i_f: float = 0.0
    v_f: float = 0.0
    i_m: float = 0.0
    v_m: float = 0.0
    j_cost: float = 0.0

    def __array__(self, dtype=None, copy=None):
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=dtype or float)

    @classmethod
    def from_array(cls, x) -> "SystemState":
        x = np.asarray(x, dtype=float)
        if x.shape == (N_STATE,):
            x = np.append(x, 0.0)
        return cls(*(float(v) for v in x))

    def is_valid(self, tol: float = 0.0) -> bool:
        x = np.asarray(self)
        return bool(
            np.all(x[:N_STATE] >= -tol)
            and np.all(x[:N_STATE] <= 1.0 + tol)
            and x[0] + x[1] + x[2] <= 1.0 + tol
            and x[3] + x[4] <= 1.0 + tol
            and x[5] >= -tol
        )


@dataclass(frozen=True)
class ControlVector:
    w1: float = 0.0
    w2: float = 0.0
    u1: float = 0.0
    u2: float = 0.0
    alpha: float = 0.0

    def __array__(self, dtype=None, copy=None):
        return np.array([self.w1, self.w2, self.u1, self.u2, self.alpha], dtype=dtype or float)

    @classmethod
    def from_array(cls, u) -> "ControlVector":
        return cls(*(float(v) for v in np.asarray(u, dtype=float)))

    def within(self, params: HpvParameters, tol: float = 0.0) -> bool:
        u = np.asarray(self)
        return bool(np.all(u >= -tol) and np.all(u <= params.control_upper + tol))


def _epi(state) -> np.ndarray:
    return np.asarray(state, dtype=float)[:N_STATE]


def hpv_drift(state, params: HpvParameters) -> np.ndarray:
    """Zero-control part ``f(x)`` of the HPV right-hand side."""
    uf, i_f, vf, im, vm = _epi(state)
    P = params
    s_f = 1.0 - uf - i_f - vf
    s_m = 1.0 - im - vm
    female_force = (s_f + P.epsilon * vf) * P.beta_m * im
    male_force = P.beta_f * uf + P.beta_f_tilde * i_f
    return np.array([
        female_force * (1.0 - P.p) - (P.gamma_f + P.mu_f) * uf,
        female_force * P.p - (P.gamma_f + P.mu_f) * i_f,
        -P.epsilon * P.beta_m * vf * im - (P.mu_f + P.theta) * vf,
        male_force * (s_m + P.epsilon * vm) - (P.gamma_m + P.mu_m) * im,
        -male_force * P.epsilon * vm - (P.mu_m + P.theta) * vm,
    ])


def hpv_control_matrix(state, params: HpvParameters) -> np.ndarray:
    """Input matrix ``g(x)``: rows are states, columns are ``(w1, w2, u1, u2, alpha)``."""
    uf, i_f, vf, im, vm = _epi(state)
    g = np.zeros((N_STATE, N_CONTROL))
    g[0, 4] = -uf
    g[1, 4] = uf
    g[2, 0] = params.mu_f
    g[2, 2] = 1.0 - uf - i_f - vf
    g[4, 1] = params.mu_m
    g[4, 3] = 1.0 - im - vm
    return g


def hpv_drift_batch(X: np.ndarray, params: HpvParameters) -> np.ndarray:
    """Row-wise :func:`hpv_drift` for an ``(n, 5)`` array of states."""
    P = params
    uf, i_f, vf, im, vm = X.T
    female_force = (1.0 - uf - i_f - vf + P.epsilon * vf) * P.beta_m * im
    male_force = P.beta_f * uf + P.beta_f_tilde * i_f
    return np.stack([
        female_force * (1.0 - P.p) - (P.gamma_f + P.mu_f) * uf,
        female_force * P.p - (P.gamma_f + P.mu_f) * i_f,
        -P.epsilon * P.beta_m * vf * im - (P.mu_f + P.theta) * vf,
        male_force * (1.0 - im - vm + P.epsilon * vm) - (P.gamma_m + P.mu_m) * im,
        -male_force * P.epsilon * vm - (P.mu_m + P.theta) * vm,
    ], axis=1)


def hpv_controlled_term_batch(X: np.ndarray, U: np.ndarray, params: HpvParameters) -> np.ndarray:
    """Row-wise ``g(x) u`` without materialising the ``(n, 5, 5)`` input tensors."""
    uf, i_f, vf, im, vm = X.T
    w1, w2, u1, u2, alpha = U.T
    zero = np.zeros_like(uf)
    return np.stack([
        -alpha * uf,
        alpha * uf,
        params.mu_f * w1 + u1 * (1.0 - uf - i_f - vf),
        zero,
        params.mu_m * w2 + u2 * (1.0 - im - vm),
    ], axis=1)


def running_cost_rate(controls, params: HpvParameters) -> float:
    """Budget accumulation rate ``dJ_cost/dt``."""
    w1, w2, u1, u2, alpha = np.asarray(controls, dtype=float)
    return 0.5 * (params.a1_over_a0 * (w1 * w1 + w2 * w2)
                  + params.a2_over_a0 * (u1 * u1 + u2 * u2)
                  + params.a3_over_a0 * alpha * alpha)


def augmented_rhs(x6: np.ndarray, u: np.ndarray, params: HpvParameters) -> np.ndarray:
    """Full right-hand side of the 6-dimensional system (5 states + budget)."""
    out = np.empty(N_STATE + 1)
    out[:N_STATE] = hpv_drift(x6, params) + hpv_control_matrix(x6, params) @ u
    out[N_STATE] = running_cost_rate(u, params)
    return out


def integrate_step(state, controls, params: HpvParameters, dt: float) -> tuple[np.ndarray, int]:
    """Advance the augmented state by one RK4 step under zero-order-hold controls.

    Returns the new 6-vector and the number of epidemiological components that
    had to be clamped back into ``[0, 1]``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    x = np.asarray(state, dtype=float)
    if x.shape == (N_STATE,):
        x = np.append(x, 0.0)
    u = np.asarray(controls, dtype=float)

    k1 = augmented_rhs(x, u, params)
    k2 = augmented_rhs(x + 0.5 * dt * k1, u, params)
    k3 = augmented_rhs(x + 0.5 * dt * k2, u, params)
    k4 = augmented_rhs(x + dt * k3, u, params)
    nxt = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    if not np.all(np.isfinite(nxt)):
        raise NonFiniteState(f"non-finite state after step: {nxt!r}")
    epi = nxt[:N_STATE]
    outside = (epi < 0.0) | (epi > 1.0)
    clamps = int(np.count_nonzero(outside))
    if clamps:
        nxt[:N_STATE] = np.clip(epi, 0.0, 1.0)
    return nxt, clamps


def simulate(x0, controls, params: HpvParameters, horizon: float, dt: float):
    """Constant-control RK4 rollout; returns ``(times, states, total_clamps)``."""
    n = int(round(horizon / dt))
    x = np.asarray(x0, dtype=float)
    if x.shape == (N_STATE,):
        x = np.append(x, 0.0)
    states = np.empty((n + 1, N_STATE + 1))
    states[0] = x
    clamps = 0
    for k in range(n):
        x, c = integrate_step(x, controls, params, dt)
        clamps += c
        states[k + 1] = x
    return np.arange(n + 1) * dt, states, clamps
