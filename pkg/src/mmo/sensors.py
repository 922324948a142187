"""Compression-matrix optimization for distributed sensor fusion.

The mutual-information objective log|C_x^{-1} + diag{X_k^H H_k^H R_k^{-1}
H_k X_k}| couples the sensors only through C_x.  For sensor k a permutation
brings its block to the front, a Schur complement Φ_k folds in everybody
else, and the per-sensor problem becomes log|Θ_k + Q^H S_k Q| with
Θ_k = R_{x_k}^{1/2} Φ_k R_{x_k}^{1/2} after whitening the variable by
F_k Q_k = X_k R_{x_k}^{1/2}.  The aligning rotation pairs the descending
modes of S_k with the ascending eigenvalues of Θ_k, and the gain allocation
is water-filling against per-mode noise floors.
"""

from dataclasses import dataclass, field

import numpy as np

from .constraints import Joint, Shaping, Weighted, constraint_gap
from .exceptions import InfeasibleError, InvalidInputError, NotPsdError
from .linalg import hermitian_sqrt, inv_sqrt_psd, sorted_evd
from .structures import (StructuredSolution, solve_joint, solve_shaping,
                         solve_weighted)
from .tolerances import DEFAULT, Tolerances
from .uplink import scaled_identity_init

__all__ = [
    "SensorScenario",
    "FusionState",
    "build_permutation",
    "schur_complement_phi",
    "sensor_phi",
    "optimal_rotation_sensor",
    "update_compressor",
    "mutual_information",
    "alternating_solve_sensors",
]


def _cholesky_inverse(mat):
    """PD inverse via the Cholesky factor (stable for repeated reuse)."""
    low = np.linalg.cholesky(mat)
    low_inv = np.linalg.inv(low)
    out = low_inv.conj().T @ low_inv
    return 0.5 * (out + out.conj().T)


@dataclass(frozen=True)
class SensorScenario:
    """Correlated-source scenario: stacked covariance C_x, per-sensor
    channels/noise, the diagonal blocks R_{x_k}, and power constraints
    applying to X_k R_{x_k}^{1/2}."""

    source_cov: np.ndarray
    channels: tuple
    noise_covs: tuple
    per_sensor_cov: tuple
    constraints: tuple

    def __post_init__(self):
        c_x = 0.5 * (np.asarray(self.source_cov, dtype=complex)
                     + np.asarray(self.source_cov, dtype=complex).conj().T)
        if np.linalg.eigvalsh(c_x)[0] <= 0:
            raise NotPsdError("source covariance must be positive definite")
        channels = tuple(np.asarray(h, dtype=complex) for h in self.channels)
        noise = tuple(np.asarray(r, dtype=complex) for r in self.noise_covs)
        blocks = tuple(np.asarray(r, dtype=complex) for r in self.per_sensor_cov)
        dims = [b.shape[0] for b in blocks]
        if sum(dims) != c_x.shape[0]:
            raise InvalidInputError("per-sensor blocks do not tile C_x")
        off = 0
        for b in blocks:
            d = b.shape[0]
            if np.linalg.norm(c_x[off:off + d, off:off + d] - b) > 1e-12 * max(1.0, np.linalg.norm(b)):
                raise InvalidInputError("per_sensor_cov must equal the diagonal blocks of C_x")
            if np.linalg.eigvalsh(0.5 * (b + b.conj().T))[0] <= 0:
                raise NotPsdError("per-sensor covariance must be PD (whitening requires it)")
            off += d
        for h, r in zip(channels, noise):
            if np.linalg.eigvalsh(0.5 * (r + r.conj().T))[0] <= 0:
                raise NotPsdError("noise covariances must be positive definite")
            if r.shape[0] != h.shape[0]:
                raise InvalidInputError("channel/noise dimensions inconsistent")
        object.__setattr__(self, "source_cov", c_x)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "noise_covs", noise)
        object.__setattr__(self, "per_sensor_cov", blocks)

    @property
    def n_sensors(self):
        return len(self.channels)

    @property
    def block_dims(self):
        return [b.shape[0] for b in self.per_sensor_cov]


@dataclass
class FusionState:
    compressors_F: list
    rotations: list
    compressors_X: list
    objective_trace: list = field(default_factory=list)


def build_permutation(block_dims, k):
    """Permutation that moves block k (1-based) to the front.

    Conjugating a block-diagonal matrix with blocks (1..K) by P_k yields the
    layout (k, 2, ..., k-1, 1, k+1, ..., K); P_k is an exact 0/1 matrix with
    P_k P_k^T = I.
    """
    n_blocks = len(block_dims)
    if not 1 <= k <= n_blocks:
        raise InvalidInputError(f"block index {k} out of range 1..{n_blocks}")
    total = sum(block_dims)
    offsets = np.cumsum([0] + list(block_dims))
    order = [k - 1] + list(range(1, k - 1)) + ([0] if k > 1 else []) + list(range(k, n_blocks))
    rows = []
    for j in order:
        rows.extend(range(offsets[j], offsets[j + 1]))
    p = np.zeros((total, total))
    p[np.arange(total), rows] = 1.0
    return p


def schur_complement_phi(p11, p12, p21, p22, xi_k):
    """Φ_k = P11 − P12 (P22 + Ξ_k)^{-1} P21 for the permuted partition."""
    core = p22 + xi_k
    core = 0.5 * (core + core.conj().T)
    if np.linalg.eigvalsh(core)[0] <= 0:
        raise NotPsdError("P22 + Xi must be positive definite")
    phi = p11 - p12 @ np.linalg.solve(core, p21)
    return 0.5 * (phi + phi.conj().T)


def _quadratic_terms(scenario, xs):
    out = []
    for h, r, x in zip(scenario.channels, scenario.noise_covs, xs):
        hx = h @ x
        q = hx.conj().T @ _cholesky_inverse(r) @ hx
        out.append(0.5 * (q + q.conj().T))
    return out


def sensor_phi(scenario, xs, k, c_x_inv=None):
    """Schur complement Φ_k given all other sensors' compressors (k 0-based)."""
    if c_x_inv is None:
        c_x_inv = _cholesky_inverse(scenario.source_cov)
    dims = scenario.block_dims
    if scenario.n_sensors == 1:
        return c_x_inv
    perm = build_permutation(dims, k + 1)
    permuted = perm @ c_x_inv @ perm.conj().T
    d = dims[k]
    p11 = permuted[:d, :d]
    p12 = permuted[:d, d:]
    p21 = permuted[d:, :d]
    p22 = permuted[d:, d:]
    quads = _quadratic_terms(scenario, xs)
    # Xi stacks the other sensors' blocks in the permuted order
    order = [j for j in ([k] + list(range(1, k)) + ([0] if k > 0 else []) + list(range(k + 1, scenario.n_sensors))) if j != k]
    xi = np.zeros_like(p22)
    off = 0
    for j in order:
        dj = dims[j]
        xi[off:off + dj, off:off + dj] = quads[j]
        off += dj
    return schur_complement_phi(p11, p12, p21, p22, xi)


def optimal_rotation_sensor(f_k, h_k, r_nk, phi_term, tol: Tolerances = DEFAULT):
    """Q = U_S Ū^H: descending modes of S against ascending modes of Θ."""
    r_inv = _cholesky_inverse(r_nk)
    s = f_k.conj().T @ h_k.conj().T @ r_inv @ h_k @ f_k
    u_s = sorted_evd(s, tol).eigvecs
    u_phi_desc = sorted_evd(phi_term, tol).eigvecs
    u_phi_asc = u_phi_desc[:, ::-1]
    return u_s @ u_phi_asc.conj().T


def update_compressor(scenario, state, k, alpha0=None, tol: Tolerances = DEFAULT):
    """Structured update of sensor k's whitened compressor F_k."""
    xs = state.compressors_X
    phi = sensor_phi(scenario, xs, k)
    root = hermitian_sqrt(scenario.per_sensor_cov[k], tol)
    theta = root @ phi @ root
    theta = 0.5 * (theta + theta.conj().T)
    floors_asc = np.clip(sorted_evd(theta, tol).eigvals[::-1], 0.0, None)

    h = scenario.channels[k]
    r_inv_half = inv_sqrt_psd(scenario.noise_covs[k], tol)
    pi = h.conj().T @ (r_inv_half @ r_inv_half) @ h
    pi = 0.5 * (pi + pi.conj().T)
    constraint = scenario.constraints[k]
    d = scenario.per_sensor_cov[k].shape[0]
    if isinstance(constraint, Shaping):
        sol = solve_shaping(constraint.shape, target_shape=(h.shape[1], d), tol=tol)
    elif isinstance(constraint, Joint):
        sol = solve_joint(pi, constraint.total, constraint.cap, n_cols=d,
                          floors=floors_asc, tol=tol)
    elif isinstance(constraint, Weighted):
        sol = solve_weighted(pi, constraint, n_cols=d, alpha0=alpha0,
                             floors=floors_asc, tol=tol)
    else:
        raise InvalidInputError(f"unknown constraint type {type(constraint)!r}")
    gap = constraint_gap(constraint, sol.dense)
    if gap > 1e-6:
        raise InfeasibleError(f"sensor {k} update violates its constraint by {gap:.2e}")
    return sol, theta


def mutual_information(scenario, compressors_X):
    """log|C_x^{-1} + diag{X^H H^H R^{-1} H X}| − log|C_x^{-1}|."""
    c_x_inv = _cholesky_inverse(scenario.source_cov)
    quads = _quadratic_terms(scenario, compressors_X)
    m = c_x_inv.copy()
    off = 0
    for q in quads:
        d = q.shape[0]
        m[off:off + d, off:off + d] += q
        off += d
    _, v = np.linalg.slogdet(m)
    _, v0 = np.linalg.slogdet(c_x_inv)
    return float(v.real - v0.real)


def alternating_solve_sensors(scenario, init=None, rel_tol=None, max_iter=None,
                              tol: Tolerances = DEFAULT):
    """Cyclic structured sensor updates; X_k is recovered as F Q R_x^{-1/2}."""
    rel_tol = tol.rel_tol if rel_tol is None else rel_tol
    max_iter = tol.max_iter if max_iter is None else max_iter
    k_sensors = scenario.n_sensors
    roots_inv = [inv_sqrt_psd(r, tol) for r in scenario.per_sensor_cov]

    if init is None:
        precoders = []
        for k in range(k_sensors):
            n = scenario.channels[k].shape[1]
            d = scenario.per_sensor_cov[k].shape[0]
            f0 = scaled_identity_init(scenario.constraints[k], (n, d))
            precoders.append(StructuredSolution(
                left_basis=f0, gains=np.ones(d), right_unitary=np.eye(d),
                dense=f0))
    else:
        precoders = list(init)
    for k, sol in enumerate(precoders):
        gap = constraint_gap(scenario.constraints[k], sol.dense)
        if gap > 1e-6:
            raise InfeasibleError(f"initial compressor {k} infeasible by {gap:.2e}")

    rotations = [np.eye(p.dense.shape[1], dtype=complex) for p in precoders]
    xs = [p.dense @ q @ ri for p, q, ri in zip(precoders, rotations, roots_inv)]
    state = FusionState(compressors_F=precoders, rotations=rotations,
                        compressors_X=xs)
    state.objective_trace.append(mutual_information(scenario, xs))
    alphas = [None] * k_sensors

    for _ in range(max_iter):
        before = state.objective_trace[-1]
        for k in range(k_sensors):
            sol, theta = update_compressor(scenario, state, k, alpha0=alphas[k], tol=tol)
            q = optimal_rotation_sensor(sol.dense, scenario.channels[k],
                                        scenario.noise_covs[k], theta, tol)
            candidate = list(state.compressors_X)
            candidate[k] = sol.dense @ q @ roots_inv[k]
            new_mi = mutual_information(scenario, candidate)
            if new_mi >= state.objective_trace[-1] - tol.monotone_slack:
                state.compressors_F[k] = sol
                state.rotations[k] = q
                state.compressors_X = candidate
                state.objective_trace.append(new_mi)
                if sol.weights_alpha is not None:
                    alphas[k] = sol.weights_alpha
            else:
                state.objective_trace.append(state.objective_trace[-1])
        after = state.objective_trace[-1]
        if abs(after - before) <= rel_tol * max(1.0, abs(after)):
            break
    return state
