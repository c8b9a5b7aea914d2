"""Bias-corrected moment optimizer used for the critic weights.

Only the first/second moment recurrences are implemented; there is no
Hessian estimate or update clipping.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .errors import ConfigError, NonFiniteUpdate


@dataclass(frozen=True)
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eta: float = 0.01
    eps0: float = 1e-8
    # False uses the raw gradient as the second-moment input, exactly as the
    # recurrence is printed; this can make sqrt(v_hat) undefined.
    squared_second_moment: bool = True

    @classmethod
    def zeros(cls, n: int, **hyper) -> "OptimizerState":
        st = cls(m=np.zeros(n), v=np.zeros(n), **hyper)
        st.validate()
        return st

    def validate(self) -> None:
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ConfigError("optimizer beta1/beta2 must lie in (0, 1)")
        if not self.eta > 0 or not self.eps0 > 0:
            raise ConfigError("optimizer eta and eps0 must be > 0")
        if self.step < 0:
            raise ConfigError("optimizer step must be >= 0")

    def hyper(self) -> dict:
        return {"beta1": self.beta1, "beta2": self.beta2, "eta": self.eta,
                "eps0": self.eps0, "squared_second_moment": self.squared_second_moment}


def update(state: OptimizerState, w: np.ndarray, grad: np.ndarray) -> tuple[OptimizerState, np.ndarray]:
    """One moment step; returns the new state and new weights without mutating inputs."""
    g = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(g)):
        raise NonFiniteUpdate("gradient contains non-finite entries")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g if state.squared_second_moment else g)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    with np.errstate(invalid="ignore"):
        w_new = np.asarray(w, dtype=float) - state.eta * m_hat / (np.sqrt(v_hat) + state.eps0)
    if not (np.all(np.isfinite(w_new)) and np.all(np.isfinite(v))):
        raise NonFiniteUpdate(f"non-finite weights at optimizer step {t}")
    return replace(state, m=m, v=v, step=t), w_new


@dataclass(frozen=True)
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eta: float = 0.01
    eps0: float = 1e-8
    squared_second_moment: bool = True

    def initial_state(self, n: int) -> OptimizerState:
        return OptimizerState.zeros(n, beta1=self.beta1, beta2=self.beta2, eta=self.eta,
                                    eps0=self.eps0, squared_second_moment=self.squared_second_moment)

    def validate(self) -> None:
        self.initial_state(1)


@njit(cache=True)
def _inner_kernel(M, b, s0, w, m, v, step, beta1, beta2, eta, eps0, squared, phi_t, delta,
                  max_iters, trace):
    p = w.shape[0]
    g = np.empty(p)
    w_new = np.empty(p)
    iters = 0
    converged = False
    finite = True
    for it in range(max_iters):
        # mean residual loss 0.5 * (w'Mw + 2 b'w + s0) and its gradient Mw + b
        quad = 0.0
        for j in range(p):
            acc = b[j]
            for i in range(p):
                acc += M[j, i] * w[i]
            g[j] = acc
            quad += w[j] * (acc + b[j])
        loss = 0.5 * (quad + s0)
        t = step + 1
        bc1 = 1.0 - beta1 ** t
        bc2 = 1.0 - beta2 ** t
        gate = 0.0
        dmax = 0.0
        gn = 0.0
        dn = 0.0
        for j in range(p):
            gj = g[j]
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj
            if squared:
                v[j] = beta2 * v[j] + (1.0 - beta2) * (gj * gj)
            else:
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj
            vh = v[j] / bc2
            if vh < 0.0:
                finite = False
                break
            w_new[j] = w[j] - eta * (m[j] / bc1) / (np.sqrt(vh) + eps0)
            d = abs(w_new[j] - w[j])
            gate += phi_t[j] * d
            if d > dmax:
                dmax = d
            gn += gj * gj
            dn += d * d
        step = t
        iters += 1
        if not finite:
            break
        for j in range(p):
            w[j] = w_new[j]
            if not np.isfinite(w[j]):
                finite = False
        trace[it, 0] = loss
        trace[it, 1] = np.sqrt(gn)
        trace[it, 2] = np.sqrt(dn)
        if not finite:
            break
        if gate <= delta and dmax <= delta:
            converged = True
            break
    return step, iters, converged, finite


def inner_loop(state: OptimizerState, w: np.ndarray, c: np.ndarray, A: np.ndarray,
               phi_t: np.ndarray, delta: float, max_iters: int):
    """Repeat moment steps on the batch residuals ``c + A @ w`` until the weights settle.

    The mean gradient ``A'(c + Aw)/n`` is evaluated through the precomputed
    normal matrix ``A'A/n``, so each iteration costs O(p^2) whatever the batch
    size. Stops on the first iteration with ``phi_t . |dW| <= delta`` and
    ``max |dW| <= delta``, or after ``max_iters``. Returns
    ``(state, w, iterations, converged, trace)`` where ``trace`` rows hold
    ``(loss, |grad|, |dW|)`` per iteration.
    """
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    n = A.shape[0]
    M = np.ascontiguousarray(A.T @ A / n)
    b = np.ascontiguousarray(A.T @ c / n)
    s0 = float(c @ c / n)
    w = np.array(w, dtype=float)
    m = state.m.copy()
    v = state.v.copy()
    trace = np.zeros((max(max_iters, 0), 3))
    step, iters, converged, finite = _inner_kernel(
        M, b, s0, w, m, v, state.step, state.beta1, state.beta2, state.eta, state.eps0,
        state.squared_second_moment, np.ascontiguousarray(phi_t, dtype=float), float(delta),
        int(max_iters), trace)
    if not finite:
        raise NonFiniteUpdate(f"non-finite weights at optimizer step {step}")
    return replace(state, m=m, v=v, step=step), w, iters, converged, trace[:iters]
