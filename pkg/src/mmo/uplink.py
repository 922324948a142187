"""Alternating precoder optimization for the K-user MIMO uplink.

The weighted sum-rate objective log|R_n + Σ H_k X_k W_k X_k^H H_k^H| splits,
for each user, into a per-user block log|I + W_k Q^H S_k Q| plus a constant
log|K_{n_k}|, where S_k = F_k^H H_k^H K_{n_k}^{-1} H_k F_k and K_{n_k}
collects noise plus the other users' interference.  Each user update is the
single-variable structured solution for Π_k = H_k^H K_{n_k}^{-1} H_k paired
with the aligning rotation Q_k, so the global objective never decreases.
"""

from dataclasses import dataclass, field

import numpy as np

from .constraints import (Joint, Shaping, Weighted, constraint_gap)
from .exceptions import InfeasibleError, InvalidInputError
from .linalg import inv_sqrt_psd, sorted_evd
from .structures import (StructuredSolution, solve_joint, solve_shaping,
                         solve_weighted)
from .tolerances import DEFAULT, Tolerances

__all__ = [
    "UplinkScenario",
    "PrecoderState",
    "interference_covariance",
    "optimal_rotation_uplink",
    "update_precoder",
    "sum_rate",
    "alternating_solve_uplink",
    "scaled_identity_init",
]


@dataclass(frozen=True)
class UplinkScenario:
    """Immutable problem data for the uplink: channels, noise, weights,
    one power constraint per user."""

    channels: tuple
    noise_cov: np.ndarray
    weights: tuple
    constraints: tuple

    def __post_init__(self):
        channels = tuple(np.asarray(h, dtype=complex) for h in self.channels)
        weights = tuple(np.asarray(w, dtype=complex) for w in self.weights)
        rn = np.asarray(self.noise_cov, dtype=complex)
        m = rn.shape[0]
        if np.linalg.eigvalsh(0.5 * (rn + rn.conj().T))[0] <= 0:
            raise InvalidInputError("noise covariance must be positive definite")
        for h, w in zip(channels, weights):
            if h.shape[0] != m:
                raise InvalidInputError("channel/noise dimensions inconsistent")
            if w.shape[0] != h.shape[1]:
                raise InvalidInputError("weight/channel dimensions inconsistent")
            if np.linalg.eigvalsh(0.5 * (w + w.conj().T))[0] <= 0:
                raise InvalidInputError("weight matrices must be positive definite")
        if len(self.constraints) != len(channels):
            raise InvalidInputError("need one constraint per user")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "noise_cov", 0.5 * (rn + rn.conj().T))

    @property
    def n_users(self):
        return len(self.channels)


@dataclass
class PrecoderState:
    precoders: list                  # StructuredSolution per user
    rotations: list                  # unitary Q per user
    realized: list                   # X_k = F_k Q_k
    objective_trace: list = field(default_factory=list)


def scaled_identity_init(constraint, shape):
    """Largest feasible c * I for the given constraint family."""
    rows, cols = shape
    eye = np.eye(rows, cols, dtype=complex)
    if isinstance(constraint, Shaping):
        c = np.sqrt(max(np.linalg.eigvalsh(constraint.shape)[0].real, 0.0))
    elif isinstance(constraint, Joint):
        r = min(rows, cols)
        c = np.sqrt(min(constraint.total / r, constraint.cap))
    elif isinstance(constraint, Weighted):
        vals = [p / max(np.trace(om[:cols, :cols]).real, 1e-300)
                for om, p in constraint.terms]
        c = np.sqrt(min(vals))
    else:
        raise InvalidInputError(f"unknown constraint type {type(constraint)!r}")
    return c * eye


def interference_covariance(state, scenario, k):
    """K_{n_k}: noise plus the weighted interference of all other users."""
    rn = scenario.noise_cov
    out = rn.copy()
    for j, x in enumerate(state.realized):
        if j == k:
            continue
        hx = scenario.channels[j] @ x
        out = out + hx @ scenario.weights[j] @ hx.conj().T
    return 0.5 * (out + out.conj().T)


def optimal_rotation_uplink(f_k, h_k, k_nk, w_k, tol: Tolerances = DEFAULT):
    """Rotation aligning the per-user SNR modes with the weight modes.

    Q = U_S U_W^H with both eigendecompositions sorted descending, which
    attains log|I + W Q^H S Q| = Σ log(1 + λ_i(W) λ_i(S)).
    """
    k_inv = np.linalg.inv(k_nk)
    s = f_k.conj().T @ h_k.conj().T @ k_inv @ h_k @ f_k
    u_s = sorted_evd(s, tol).eigvecs
    u_w = sorted_evd(w_k, tol).eigvecs
    return u_s @ u_w.conj().T


def _block_value(f_k, q_k, h_k, k_inv, w_k):
    x = f_k @ q_k
    s = x.conj().T @ h_k.conj().T @ k_inv @ h_k @ x
    n = s.shape[0]
    sign, val = np.linalg.slogdet(np.eye(n) + w_k @ s)
    return val.real


def update_precoder(scenario, state, k, alpha0=None, tol: Tolerances = DEFAULT):
    """Structured per-user update for the k-th precoder (family dispatch)."""
    k_nk = interference_covariance(state, scenario, k)
    k_inv_half = inv_sqrt_psd(k_nk, tol)
    h = scenario.channels[k]
    pi = h.conj().T @ (k_inv_half @ k_inv_half) @ h
    pi = 0.5 * (pi + pi.conj().T)
    constraint = scenario.constraints[k]
    w_eigs = np.clip(sorted_evd(scenario.weights[k], tol).eigvals, 0.0, None)
    if isinstance(constraint, Shaping):
        sol = solve_shaping(constraint.shape, target_shape=(h.shape[1], h.shape[1]), tol=tol)
    elif isinstance(constraint, Joint):
        sol = solve_joint(pi, constraint.total, constraint.cap,
                          scalarize=w_eigs, tol=tol)
    elif isinstance(constraint, Weighted):
        sol = solve_weighted(pi, constraint, scalarize=w_eigs, alpha0=alpha0, tol=tol)
    else:
        raise InvalidInputError(f"unknown constraint type {type(constraint)!r}")
    gap = constraint_gap(constraint, sol.dense)
    if gap > 1e-6:
        raise InfeasibleError(f"user {k} update violates its constraint by {gap:.2e}")
    return sol


def sum_rate(scenario, realized):
    """log|R_n + Σ H_k X_k W_k X_k^H H_k^H| − log|R_n| (non-negative)."""
    m = scenario.noise_cov.copy()
    for h, w, x in zip(scenario.channels, scenario.weights, realized):
        hx = h @ x
        m = m + hx @ w @ hx.conj().T
    _, v = np.linalg.slogdet(m)
    _, v0 = np.linalg.slogdet(scenario.noise_cov)
    return float(v.real - v0.real)


def alternating_solve_uplink(scenario, init=None, rel_tol=None, max_iter=None,
                             tol: Tolerances = DEFAULT):
    """Cyclic per-user structured updates until the sum rate stalls.

    Each accepted update can only increase the objective (a candidate that
    fails to improve is discarded), so the trace is monotone within float
    noise.  Users are visited in fixed ascending order for determinism.
    """
    rel_tol = tol.rel_tol if rel_tol is None else rel_tol
    max_iter = tol.max_iter if max_iter is None else max_iter
    k_users = scenario.n_users

    if init is None:
        precoders = []
        for k in range(k_users):
            n = scenario.channels[k].shape[1]
            f0 = scaled_identity_init(scenario.constraints[k], (n, n))
            precoders.append(StructuredSolution(
                left_basis=f0, gains=np.ones(n), right_unitary=np.eye(n),
                dense=f0))
    else:
        precoders = list(init)
    for k, sol in enumerate(precoders):
        gap = constraint_gap(scenario.constraints[k], sol.dense)
        if gap > 1e-6:
            raise InfeasibleError(f"initial precoder {k} infeasible by {gap:.2e}")

    rotations = [np.eye(p.dense.shape[1], dtype=complex) for p in precoders]
    state = PrecoderState(precoders=precoders, rotations=rotations,
                          realized=[p.dense @ q for p, q in zip(precoders, rotations)])
    state.objective_trace.append(sum_rate(scenario, state.realized))
    alphas = [None] * k_users

    for _ in range(max_iter):
        before = state.objective_trace[-1]
        for k in range(k_users):
            sol = update_precoder(scenario, state, k, alpha0=alphas[k], tol=tol)
            k_nk = interference_covariance(state, scenario, k)
            q = optimal_rotation_uplink(sol.dense, scenario.channels[k], k_nk,
                                        scenario.weights[k], tol)
            candidate = list(state.realized)
            candidate[k] = sol.dense @ q
            new_rate = sum_rate(scenario, candidate)
            if new_rate >= state.objective_trace[-1] - tol.monotone_slack:
                state.precoders[k] = sol
                state.rotations[k] = q
                state.realized = candidate
                state.objective_trace.append(new_rate)
                if sol.weights_alpha is not None:
                    alphas[k] = sol.weights_alpha
            else:
                state.objective_trace.append(state.objective_trace[-1])
        after = state.objective_trace[-1]
        if abs(after - before) <= rel_tol * max(1.0, abs(after)):
            break
    return state
