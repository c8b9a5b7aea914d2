"""Control-barrier-function filter for the HPV box and budget constraints.

Every barrier is affine in the augmented state ``(U_f, I_f, V_f, I_m, V_m, J)``
so ``dh/dx`` is a constant vector and the CBF condition

    dh/dx . xdot(x, u) + gamma0 * h(x) >= 0

is affine in ``u`` for the compartment barriers. The filter clamps the raw
control to the one-sided admissible box and then backs off, by bisection, the
coordinates that push a violated margin negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    N_STATE,
    STATE_NAMES,
    HpvParameters,
    augmented_rhs,
    hpv_control_matrix,
    hpv_drift,
)

BISECTION_ROUNDS = 20
# margins above -MARGIN_TOL count as satisfied; absorbs rounding in a + B @ u
MARGIN_TOL = 1e-12
_MAX_BACKOFFS = 100


@dataclass(frozen=True)
class Barrier:
    name: str
    grad: np.ndarray  # constant dh/dx over the 6-dim augmented state
    offset: float
    is_budget: bool = False

    def __call__(self, x6) -> float:
        return float(self.grad @ np.asarray(x6, dtype=float) + self.offset)


@dataclass(frozen=True)
class BarrierSet:
    barriers: tuple
    gamma0: float = 5.0
    _G: np.ndarray = field(default=None, init=False, repr=False, compare=False)
    _off: np.ndarray = field(default=None, init=False, repr=False, compare=False)
    _state_rows: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be > 0")
        object.__setattr__(self, "_G", np.stack([b.grad for b in self.barriers]))
        object.__setattr__(self, "_off", np.array([b.offset for b in self.barriers]))
        object.__setattr__(self, "_state_rows",
                           np.array([not b.is_budget for b in self.barriers], dtype=bool))

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.barriers]

    def values(self, x6) -> np.ndarray:
        return self._G @ _augment(x6) + self._off


@dataclass(frozen=True)
class FilterRecord:
    clamped: bool
    backed_off: tuple = ()
    budget_exhausted: bool = False

    @property
    def intervened(self) -> bool:
        return self.clamped or bool(self.backed_off) or self.budget_exhausted


def _augment(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape == (N_STATE,):
        x = np.append(x, 0.0)
    return x


def default_hpv_barriers(params: HpvParameters, gamma0: float = 5.0) -> BarrierSet:
    """``x_k >= 0`` and ``1 - x_k >= 0`` for each compartment, plus ``J_max - J >= 0``."""
    out = []
    for k, name in enumerate(STATE_NAMES):
        e = np.zeros(N_STATE + 1)
        e[k] = 1.0
        out.append(Barrier(f"{name}>=0", e, 0.0))
        out.append(Barrier(f"{name}<=1", -e, 1.0))
    e = np.zeros(N_STATE + 1)
    e[N_STATE] = -1.0
    out.append(Barrier("budget", e, float(params.j_max), is_budget=True))
    return BarrierSet(tuple(out), gamma0=gamma0)


def cbf_margin(state, u, barriers: BarrierSet, params: HpvParameters) -> np.ndarray:
    """Per-barrier ``dh/dx . xdot + gamma0 * h``."""
    x6 = _augment(state)
    rhs = augmented_rhs(x6, np.asarray(u, dtype=float), params)
    return barriers._G @ rhs + barriers.gamma0 * (barriers._G @ x6 + barriers._off)


def safety_filter(state, u_raw, barriers: BarrierSet,
                  params: HpvParameters) -> tuple[np.ndarray, FilterRecord]:
    """Project a raw control onto ``[0, kappa]`` and enforce the compartment barriers.

    Returns zero controls once the budget barrier is exhausted.
    """
    x6 = _augment(state)
    u_raw = np.asarray(u_raw, dtype=float)
    u = np.clip(u_raw, 0.0, params.control_upper)
    clamped = not np.array_equal(u, u_raw)

    h = barriers.values(x6)
    budget = ~barriers._state_rows
    if np.any(h[budget] <= 0.0):
        return np.zeros_like(u), FilterRecord(clamped=clamped, budget_exhausted=True)

    rows = barriers._state_rows
    G5 = barriers._G[rows, :N_STATE]
    a = G5 @ hpv_drift(x6, params) + barriers.gamma0 * h[rows]
    B = G5 @ hpv_control_matrix(x6, params)
    names = [n for n, r in zip(barriers.names, rows) if r]

    backed = []
    for _ in range(_MAX_BACKOFFS):
        m = a + B @ u
        contrib = B * u[None, :]
        reducible = (m < -MARGIN_TOL) & np.any(contrib < 0.0, axis=1)
        if not reducible.any():
            break
        k = int(np.flatnonzero(reducible)[np.argmin(m[reducible])])
        neg = contrib[k] < 0.0
        fixed = a[k] + contrib[k][~neg].sum()
        moving = contrib[k][neg].sum()
        lo, hi = 0.0, 1.0
        for _ in range(BISECTION_ROUNDS):
            mid = 0.5 * (lo + hi)
            if fixed + mid * moving >= 0.0:
                lo = mid
            else:
                hi = mid
        u = u.copy()
        u[neg] *= lo
        backed.append(names[k])
    else:
        u = np.zeros_like(u)

    return u, FilterRecord(clamped=clamped, backed_off=tuple(dict.fromkeys(backed)))
