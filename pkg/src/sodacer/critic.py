"""Single-layer polynomial critic for the discounted HJB residual.

The value estimate is ``phi(e) @ w`` with 28 fixed monomials of the tracking
error. Because the approximate Hamiltonian is affine in ``w`` once the applied
control is frozen, a batch of samples reduces to ``H = c + A @ w`` and the
training loss is an ordinary least-squares objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    HpvParameters,
    N_CONTROL,
    N_STATE,
    hpv_control_matrix,
    hpv_controlled_term_batch,
    hpv_drift,
    hpv_drift_batch,
)
from .errors import SaturationBoundary

# Exponents over (U_f, I_f, V_f, I_m, V_m) for every monomial, in the order the
# weights are indexed.
_MONOMIALS = (
    # linear
    (1, 0, 0, 0, 0), (0, 0, 0, 1, 0), (0, 0, 0, 0, 1), (0, 1, 0, 0, 0), (0, 0, 1, 0, 0),
    # squares
    (2, 0, 0, 0, 0), (0, 2, 0, 0, 0), (0, 0, 2, 0, 0), (0, 0, 0, 2, 0), (0, 0, 0, 0, 2),
    # female x male
    (1, 0, 0, 1, 0), (1, 0, 0, 0, 1), (0, 1, 0, 1, 0), (0, 1, 0, 0, 1), (0, 0, 1, 1, 0), (0, 0, 1, 0, 1),
    # cubic cross terms
    (2, 0, 0, 1, 0), (2, 0, 0, 0, 1), (0, 2, 0, 1, 0), (0, 2, 0, 0, 1),
    (1, 0, 0, 2, 0), (0, 1, 0, 2, 0), (0, 0, 1, 2, 0),
    (0, 0, 2, 1, 0), (0, 0, 2, 0, 1),
    (1, 0, 0, 0, 2), (0, 1, 0, 0, 2), (0, 0, 1, 0, 2),
)
FEATURE_LABELS = tuple(
    "*".join(f"{n}^{p}" if p > 1 else n for n, p in zip(("Uf", "If", "Vf", "Im", "Vm"), m) if p)
    for m in _MONOMIALS
)
EXPONENTS = np.array(_MONOMIALS, dtype=np.int64)
N_FEATURES = EXPONENTS.shape[0]


def _factor_indices(exponents) -> np.ndarray:
    # every monomial has degree <= 3: write it as a product of three state
    # indices, padding with index N_STATE which addresses a column of ones
    rows = []
    for m in exponents:
        idx = [j for j, p in enumerate(m) for _ in range(p)]
        rows.append(idx + [N_STATE] * (3 - len(idx)))
    return np.array(rows, dtype=np.int64)


_FACTORS = _factor_indices(_MONOMIALS)  # (28, 3)
_ONEHOT = np.zeros((3, N_FEATURES, N_STATE + 1))
for _f in range(3):
    _ONEHOT[_f, np.arange(N_FEATURES), _FACTORS[:, _f]] = 1.0


def _pad(E: np.ndarray, fill: float) -> np.ndarray:
    out = np.empty((E.shape[0], N_STATE + 1))
    out[:, :N_STATE] = E
    out[:, N_STATE] = fill
    return out


@dataclass(frozen=True)
class CostConfig:
    """Quadratic tracking penalty, discount and control-effort weights."""

    q_diag: tuple = (1.0, 1.0, 0.0, 1.0, 0.0)
    nu: float = 0.1
    phi_gain: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    kappa: tuple = (1.0, 1.0, 3.0, 3.0, 3.0)
    x_ref: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    _arrays: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_arrays", {
            "q": np.asarray(self.q_diag, dtype=float),
            "phi": np.asarray(self.phi_gain, dtype=float),
            "kappa": np.asarray(self.kappa, dtype=float),
            "x_ref": np.asarray(self.x_ref, dtype=float),
        })

    @property
    def q(self) -> np.ndarray:
        return self._arrays["q"]

    @property
    def gain(self) -> np.ndarray:
        return self._arrays["phi"]

    @property
    def kappa_arr(self) -> np.ndarray:
        return self._arrays["kappa"]

    @property
    def ref(self) -> np.ndarray:
        return self._arrays["x_ref"]

    def validate(self) -> None:
        from .errors import ConfigError

        for name, arr in (("q_diag", self.q), ("phi_gain", self.gain), ("kappa", self.kappa_arr),
                          ("x_ref", self.ref)):
            if arr.shape != (N_STATE,) or not np.all(np.isfinite(arr)):
                raise ConfigError(f"cost.{name} must be 5 finite numbers")
        if np.any(self.q < 0) or not np.any(self.q > 0):
            raise ConfigError("cost.q_diag must be >= 0 with at least one positive entry")
        if not self.nu > 0:
            raise ConfigError("cost.nu must be > 0")
        if np.any(self.gain <= 0):
            raise ConfigError("cost.phi_gain must be > 0")
        if np.any(self.kappa_arr <= 0):
            raise ConfigError("cost.kappa must be > 0")

    def to_dict(self) -> dict:
        return {"q_diag": list(self.q_diag), "nu": self.nu, "phi_gain": list(self.phi_gain),
                "kappa": list(self.kappa), "x_ref": list(self.x_ref)}


def check_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (N_FEATURES,):
        raise ValueError(f"critic weights must have shape ({N_FEATURES},), got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("critic weights contain non-finite entries")
    return w


def tracking_error(state, cfg: CostConfig) -> np.ndarray:
    return np.asarray(state, dtype=float)[:N_STATE] - cfg.ref


def features(e) -> np.ndarray:
    return features_batch(np.asarray(e, dtype=float)[None])[0]


def features_batch(E: np.ndarray) -> np.ndarray:
    P = _pad(E, 1.0)
    return P[:, _FACTORS[:, 0]] * P[:, _FACTORS[:, 1]] * P[:, _FACTORS[:, 2]]


def feature_jacobian(e) -> np.ndarray:
    """Analytic ``d phi / d e`` as a ``(28, 5)`` matrix."""
    return feature_jacobian_batch(np.asarray(e, dtype=float)[None])[0]


def feature_jacobian_batch(E: np.ndarray) -> np.ndarray:
    P = _pad(E, 1.0)
    f0, f1, f2 = P[:, _FACTORS[:, 0]], P[:, _FACTORS[:, 1]], P[:, _FACTORS[:, 2]]
    jac = (np.einsum("nk,kj->nkj", f1 * f2, _ONEHOT[0])
           + np.einsum("nk,kj->nkj", f0 * f2, _ONEHOT[1])
           + np.einsum("nk,kj->nkj", f0 * f1, _ONEHOT[2]))
    return jac[:, :, :N_STATE]


def directional_derivative_batch(E: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Row-wise ``J_phi(e_i) @ d_i`` without forming the Jacobians."""
    P = _pad(E, 1.0)
    Q = _pad(D, 0.0)
    i0, i1, i2 = _FACTORS.T
    return (Q[:, i0] * P[:, i1] * P[:, i2]
            + P[:, i0] * Q[:, i1] * P[:, i2]
            + P[:, i0] * P[:, i1] * Q[:, i2])


def value(e, w) -> float:
    return float(features(e) @ np.asarray(w, dtype=float))


def control_law(state, w, cfg: CostConfig, params: HpvParameters) -> np.ndarray:
    """Saturated greedy control ``-kappa * tanh(g^T grad_e(J) / (2 kappa Phi))``."""
    e = tracking_error(state, cfg)
    grad_j = feature_jacobian(e).T @ np.asarray(w, dtype=float)
    s = hpv_control_matrix(state, params).T @ grad_j / (2.0 * cfg.kappa_arr * cfg.gain)
    return -cfg.kappa_arr * np.tanh(s)


def _effort_terms(u: np.ndarray, kappa: np.ndarray, phi: np.ndarray) -> np.ndarray:
    r = u / kappa
    a = np.abs(r)
    if np.any(a > 1.0):
        raise SaturationBoundary(f"control {u!r} outside saturation limits {kappa!r}")
    out = np.empty_like(r)
    inside = a < 1.0
    ri = r[inside]
    out[inside] = 2.0 * kappa[inside] * phi[inside] * (
        u[inside] * np.arctanh(ri) + 0.5 * kappa[inside] * np.log1p(-ri * ri))
    edge = ~inside
    out[edge] = kappa[edge] ** 2 * phi[edge] * np.log(4.0)
    return out


def control_effort_cost(u, cfg: CostConfig) -> float:
    """Non-quadratic effort cost ``2 sum_i int_0^u_i kappa_i Phi_i atanh(s/kappa_i) ds``."""
    u = np.asarray(u, dtype=float)
    return float(np.sum(_effort_terms(u, cfg.kappa_arr, cfg.gain)))


def control_effort_cost_batch(U: np.ndarray, cfg: CostConfig) -> np.ndarray:
    n = U.shape[0]
    k = np.broadcast_to(cfg.kappa_arr, U.shape).ravel()
    ph = np.broadcast_to(cfg.gain, U.shape).ravel()
    return _effort_terms(U.ravel(), k, ph).reshape(n, N_CONTROL).sum(axis=1)


def hamiltonian_design(X: np.ndarray, U: np.ndarray, cfg: CostConfig,
                       params: HpvParameters) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(c, A)`` such that the batch residuals are ``c + A @ w``.

    ``c`` collects the weight-free terms ``e'Qe + U(u)``; row ``i`` of ``A`` is
    ``-nu * phi(e_i) + J_phi(e_i) @ xdot_i`` with ``xdot_i = f(x_i) + g(x_i) u_i``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))[:, :N_STATE]
    U = np.atleast_2d(np.asarray(U, dtype=float))
    E = X - cfg.ref
    c = np.einsum("ij,j,ij->i", E, cfg.q, E) + control_effort_cost_batch(U, cfg)
    xdot = hpv_drift_batch(X, params) + hpv_controlled_term_batch(X, U, params)
    A = -cfg.nu * features_batch(E) + directional_derivative_batch(E, xdot)
    return c, A


def approx_hamiltonian(sample, w, cfg: CostConfig, params: HpvParameters) -> float:
    """HJB residual at a stored ``(x, u)`` pair; the stored control is not recomputed."""
    x = np.asarray(sample.x, dtype=float)[:N_STATE]
    u = np.asarray(sample.u, dtype=float)
    e = x - cfg.ref
    grad_j = feature_jacobian(e).T @ w
    xdot = hpv_drift(x, params) + hpv_control_matrix(x, params) @ u
    return float(e @ (cfg.q * e) + control_effort_cost(u, cfg)
                 - cfg.nu * features(e) @ w + grad_j @ xdot)


def critic_loss_and_gradient(sample, w, cfg: CostConfig,
                             params: HpvParameters) -> tuple[float, np.ndarray]:
    """Half squared residual and its semi-gradient in ``w``."""
    w = np.asarray(w, dtype=float)
    c, A = hamiltonian_design(np.asarray(sample.x)[None], np.asarray(sample.u)[None], cfg, params)
    h = c[0] + A[0] @ w
    return 0.5 * h * h, h * A[0]


def batch_loss_and_gradient(c: np.ndarray, A: np.ndarray, w: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss and mean gradient over a batch prepared by :func:`hamiltonian_design`."""
    h = c + A @ w
    n = h.shape[0]
    return 0.5 * float(h @ h) / n, (A.T @ h) / n
