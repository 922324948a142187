"""Robust transceiver optimization for K-hop AF MIMO relaying.

Each hop k is summarized by the whitened factor A_k = M_k^{-1} K_k^{-1/2}
Ĥ_k F_k, where K_k = (σ_k² + Tr(F_k F_k^H Ψ_k)) I absorbs the channel-error
penalty and M_k = (K^{-1/2} Ĥ F F^H Ĥ^H K^{-1/2} + I)^{1/2}.  The destination
MSE matrix is σ_x² C (I − T^H T) C^H with T the cascade of the A_k Q_k, the
inner rotations align consecutive hops' singular bases, and the first
rotation realizes the objective-specific unitary (arbitrary / weight EVD /
DFT / GMD).  Everything reduces to per-stream quantities
d_i = Π_k λ_{k,i}/(1 + λ_{k,i}) with λ_{k,i} the eigenvalues of
F^H Ĥ^H K^{-1} Ĥ F, which is the dual route the tests cross-check.

Objective kinds (index, canonical reported scalar):
  1  log-det MSE (linear, C = I)         Q_1 right factor: arbitrary (I)
  2  Tr(W Φ_MSE)                          weight eigenbasis
  3  additively Schur-convex: max diag    DFT (equal diagonal)
  4  additively Schur-concave: Σ log diag none
  5  multiplicatively Schur-convex:       GMD (equal Cholesky diagonal)
     max squared Cholesky diagonal
  6  multiplicatively Schur-concave:      none
     min squared Cholesky diagonal
Kinds 5 and 6 use the feedback matrix C_opt = diag([L]_ii) L^{-1}.
"""

from dataclasses import dataclass, field

import numpy as np

from .constraints import Joint, Shaping, Weighted, constraint_gap
from .exceptions import InfeasibleError, InvalidInputError, NotPsdError
from .linalg import hermitian_sqrt, inv_sqrt_psd, sorted_evd, sorted_svd
from .structures import StructuredSolution, solve_shaping, subgradient_weights
from .tolerances import DEFAULT, Tolerances
from .uplink import scaled_identity_init

__all__ = [
    "RelayScenario",
    "ObjectiveSpec",
    "HopState",
    "MseMatrix",
    "hop_noise_covariance",
    "hop_amplification",
    "hop_eigenvalues",
    "cascade_factor",
    "cascade_mse_matrix",
    "inner_rotations",
    "first_rotation",
    "feedback_matrix",
    "f_eigen",
    "objective_scalar",
    "dft_matrix",
    "gmd",
    "robust_update_hop",
    "cascade_solve",
    "evaluate_rate",
]


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: int
    weight_matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in range(1, 7):
            raise InvalidInputError("objective kind must be one of 1..6")
        if self.kind == 2 and self.weight_matrix is None:
            raise InvalidInputError("kind 2 requires a weight matrix")

    @property
    def nonlinear(self):
        return self.kind in (5, 6)


@dataclass(frozen=True)
class RelayScenario:
    est_channels: tuple          # Ĥ_k, hop k input dim = hop k-1 output dim
    error_covs: tuple            # Ψ_k PSD (per-hop estimation error covariance)
    noise_vars: tuple            # σ²_{n_k} > 0
    source_var: float            # σ²_{x_0} > 0
    constraints: tuple
    objective: ObjectiveSpec

    def __post_init__(self):
        hs = tuple(np.asarray(h, dtype=complex) for h in self.est_channels)
        psis = tuple(0.5 * (np.asarray(p, dtype=complex) + np.asarray(p, dtype=complex).conj().T)
                     for p in self.error_covs)
        for h, p in zip(hs, psis):
            if p.shape[0] != h.shape[1]:
                raise InvalidInputError("error covariance must match channel input dim")
            if np.linalg.eigvalsh(p)[0] < -1e-9 * max(1.0, np.linalg.norm(p)):
                raise NotPsdError("error covariances must be PSD")
        for k in range(1, len(hs)):
            if hs[k].shape[1] != hs[k - 1].shape[0]:
                raise InvalidInputError("hop dimension chain is inconsistent")
        if any(s <= 0 for s in self.noise_vars) or self.source_var <= 0:
            raise InvalidInputError("noise and source variances must be positive")
        if len(self.constraints) != len(hs):
            raise InvalidInputError("need one constraint per hop")
        object.__setattr__(self, "est_channels", hs)
        object.__setattr__(self, "error_covs", psis)
        object.__setattr__(self, "noise_vars", tuple(float(s) for s in self.noise_vars))
        object.__setattr__(self, "source_var", float(self.source_var))

    @property
    def n_hops(self):
        return len(self.est_channels)


@dataclass
class HopState:
    forwarders_F: list
    rotations_Q: list
    amplifications_M: list
    noise_covs_K: list           # the scalars κ_k (matrices are κ_k I)
    feedback_C: np.ndarray
    objective_trace: list = field(default_factory=list)


@dataclass(frozen=True)
class MseMatrix:
    matrix: np.ndarray
    cholesky_L: np.ndarray


# ---------------------------------------------------------------------------
# per-hop quantities
# ---------------------------------------------------------------------------

def hop_noise_covariance(f_k, psi_k, sigma2):
    """κ = σ² + Tr(F F^H Ψ); the hop noise covariance is κ I."""
    f_k = np.asarray(f_k, dtype=complex)
    return float(sigma2 + np.trace(f_k.conj().T @ psi_k @ f_k).real)


def hop_amplification(f_k, h_hat, kappa, tol: Tolerances = DEFAULT):
    """M = (K^{-1/2} Ĥ F F^H Ĥ^H K^{-1/2} + I)^{1/2}, Hermitian and ⪰ I."""
    hf = h_hat @ f_k
    core = hf @ hf.conj().T / kappa + np.eye(h_hat.shape[0])
    return hermitian_sqrt(core, tol)


def hop_eigenvalues(h_hat, f_k, psi_k, sigma2):
    """Descending eigenvalues of F^H Ĥ^H K^{-1} Ĥ F (the per-hop SNR modes)."""
    kappa = hop_noise_covariance(f_k, psi_k, sigma2)
    hf = h_hat @ f_k
    s = hf.conj().T @ hf / kappa
    return np.clip(np.linalg.eigvalsh(0.5 * (s + s.conj().T))[::-1], 0.0, None)


def cascade_factor(h_hat, f_k, psi_k, sigma2, tol: Tolerances = DEFAULT):
    """A_k = M_k^{-1} K_k^{-1/2} Ĥ_k F_k (singular values in (0, 1))."""
    kappa = hop_noise_covariance(f_k, psi_k, sigma2)
    m = hop_amplification(f_k, h_hat, kappa, tol)
    m_inv = np.linalg.inv(m)
    return m_inv @ (h_hat @ f_k) / np.sqrt(kappa)


# ---------------------------------------------------------------------------
# rotations and feedback
# ---------------------------------------------------------------------------

def inner_rotations(factors, tol: Tolerances = DEFAULT):
    """Q_k = V_{A_k} U_{A_{k-1}}^H for hops k >= 2: the cascade product then
    telescopes so its singular values are the per-hop descending products."""
    svds = [sorted_svd(a, tol) for a in factors]
    out = []
    for k in range(1, len(factors)):
        n = factors[k].shape[1]
        v_k = svds[k].right[:, :n]
        u_prev = svds[k - 1].left[:, :n]
        out.append(v_k @ u_prev.conj().T)
    return out


def dft_matrix(n):
    j, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return np.exp(-2j * np.pi * j * k / n) / np.sqrt(n)


def gmd(sigma, tol: Tolerances = DEFAULT):
    """Geometric mean decomposition of a diagonal matrix.

    Given non-negative values ``sigma``, returns (q, r, p) with
    diag(sigma) = q @ r @ p^H, r upper triangular with equal diagonal entries
    (the geometric mean), built from 2x2 Givens rotations.
    """
    sigma = np.asarray(sigma, dtype=float)
    n = sigma.size
    q = np.eye(n)
    p = np.eye(n)
    r = np.diag(sigma).astype(float)
    if n == 1:
        return q, r, p
    if np.any(sigma <= 0):
        raise InvalidInputError("GMD requires strictly positive values")
    gbar = float(np.exp(np.mean(np.log(sigma))))

    def swap(i, j):
        if i == j:
            return
        r[[i, j], :] = r[[j, i], :]
        q[:, [i, j]] = q[:, [j, i]]
        r[:, [i, j]] = r[:, [j, i]]
        p[:, [i, j]] = p[:, [j, i]]

    for k in range(n - 1):
        d = np.real(np.diag(r)[k:])
        swap(k, k + int(np.argmax(d)))
        d = np.real(np.diag(r)[k + 1:])
        swap(k + 1, k + 1 + int(np.argmin(d)))
        x = float(r[k, k])
        z = float(r[k + 1, k + 1])
        if abs(x - z) <= 1e-14 * max(x, 1.0):
            continue
        x2, z2, g2 = x * x, z * z, gbar * gbar
        c = np.sqrt(min(max((g2 - z2) / (x2 - z2), 0.0), 1.0))
        s = np.sqrt(1.0 - c * c)
        g2mat = np.array([[c, -s], [s, c]])
        r[:, [k, k + 1]] = r[:, [k, k + 1]] @ g2mat
        p[:, [k, k + 1]] = p[:, [k, k + 1]] @ g2mat
        g1 = np.array([[c * x / gbar, -s * z / gbar], [s * z / gbar, c * x / gbar]])
        r[[k, k + 1], :] = g1.T @ r[[k, k + 1], :]
        q[:, [k, k + 1]] = q[:, [k, k + 1]] @ g1
    return q, r, p


def first_rotation(objective, a_1, cascade_d=None, sigma_x2=1.0,
                   tol: Tolerances = DEFAULT):
    """Table-of-objectives first rotation Q_1 = V_{A_1} U_x^H.

    ``cascade_d`` (descending per-stream products d_i) and ``sigma_x2`` are
    required for kind 5, whose U_x comes from the GMD of the per-stream MSE
    square roots.
    """
    n = a_1.shape[1]
    v_1 = sorted_svd(a_1, tol).right[:, :n]
    kind = objective.kind
    if kind in (1, 4, 6):
        return v_1
    if kind == 2:
        u_w = sorted_evd(objective.weight_matrix, tol).eigvecs
        return v_1 @ u_w.conj().T
    if kind == 3:
        return v_1 @ dft_matrix(n).conj().T
    if kind == 5:
        if cascade_d is None:
            raise InvalidInputError("kind 5 needs the cascade eigen data")
        e = sigma_x2 * (1.0 - np.asarray(cascade_d, dtype=float))
        _, _, p = gmd(np.sqrt(np.maximum(e, 1e-300)), tol)
        return v_1 @ p
    raise InvalidInputError(f"unsupported objective kind {kind}")


def feedback_matrix(mse_tilde):
    """C_opt = diag([L]_ii) L^{-1} from the Cholesky factor of eq-style MSE."""
    mat = 0.5 * (mse_tilde + mse_tilde.conj().T)
    low = np.linalg.cholesky(mat)
    c = np.diag(np.diag(low)) @ np.linalg.inv(low)
    n = c.shape[0]
    c[np.triu_indices(n, 1)] = 0.0
    c[np.diag_indices(n)] = 1.0
    return c


def cascade_mse_matrix(state, scenario, tol: Tolerances = DEFAULT):
    """σ_x² C (I − T^H T) C^H with T = (A_K Q_K) ... (A_1 Q_1)."""
    factors = [cascade_factor(scenario.est_channels[k], state.forwarders_F[k].dense,
                              scenario.error_covs[k], scenario.noise_vars[k], tol)
               for k in range(scenario.n_hops)]
    t = None
    for a, q in zip(factors, state.rotations_Q):
        aq = a @ q
        t = aq if t is None else aq @ t
    n = t.shape[1]
    core = np.eye(n) - t.conj().T @ t
    core = 0.5 * (core + core.conj().T)
    c = state.feedback_C
    phi = scenario.source_var * (c @ core @ c.conj().T)
    phi = 0.5 * (phi + phi.conj().T)
    w = np.linalg.eigvalsh(phi)
    shift = 0.0 if w[0] > 0 else (abs(w[0]) + 1e-15)
    low = np.linalg.cholesky(phi + shift * np.eye(n))
    return MseMatrix(matrix=phi, cholesky_L=low)


# ---------------------------------------------------------------------------
# eigen-domain objectives
# ---------------------------------------------------------------------------

def _stream_products(lams):
    """d_i = Π_k λ_{k,i}/(1+λ_{k,i}), aligned descending, common length."""
    n = min(l.size for l in lams)
    d = np.ones(n)
    for lam in lams:
        lam = np.sort(lam)[::-1][:n]
        d = d * (lam / (1.0 + lam))
    return d


def f_eigen(lams_per_hop, sigma_x2, kind="sum_mse"):
    """Scalarized cascade objective from per-hop eigenvalue vectors.

    ``sum_mse``  -> Σ σ_x² (1 − d_i)           (to be minimized)
    ``sum_rate`` -> −Σ log(1 − d_i)            (the achieved rate, maximized)
    """
    lams = [np.asarray(l, dtype=float) for l in lams_per_hop]
    for lam in lams:
        if np.any(lam < -1e-12):
            raise InvalidInputError("eigenvalues must be non-negative")
    d = _stream_products([np.clip(l, 0.0, None) for l in lams])
    if kind == "sum_mse":
        return float(np.sum(sigma_x2 * (1.0 - d)))
    if kind == "sum_rate":
        return float(-np.sum(np.log(1.0 - d)))
    raise InvalidInputError(f"unknown f_eigen kind {kind!r}")


def objective_scalar(objective, lams_per_hop, sigma_x2):
    """Canonical reported scalar for each Table kind (minimized in solves)."""
    d = _stream_products([np.clip(np.asarray(l, float), 0.0, None)
                          for l in lams_per_hop])
    e = sigma_x2 * (1.0 - d)          # per-stream MSEs, ascending
    kind = objective.kind
    if kind == 1:
        return float(np.sum(np.log(e)))
    if kind == 2:
        w = np.sort(np.linalg.eigvalsh(objective.weight_matrix))[::-1]
        n = min(w.size, e.size)
        return float(np.sum(w[:n] * e[:n]))
    if kind == 3:
        return float(np.mean(e))      # equal-diagonal value = max diag after DFT
    if kind == 4:
        return float(np.sum(np.log(e)))
    if kind == 5:
        return float(np.exp(np.mean(np.log(e))))  # equal Cholesky diag value
    if kind == 6:
        return float(np.min(e))
    raise InvalidInputError(f"unsupported objective kind {kind}")


def _marginal_fn(objective, c_other, s_gains, sigma_x2):
    """Elementwise marginal utility u'(p) and its closed-form inverse.

    Returns ``(uprime, invert)`` where ``invert(m)`` solves u'(p) = m per
    stream (clamped to p >= 0).  For the log-det family the stationarity
    condition is a quadratic in λ = s p; for the trace family it is a square
    root.  Streams with zero gain always get zero power.
    """
    kind = objective.kind
    s = s_gains
    dead = s <= 1e-300
    s_safe = np.where(dead, 1.0, s)
    if kind in (1, 4, 5, 6):
        c = np.clip(c_other, 0.0, 1.0)

        def uprime(p):
            lam = s * p
            return c * s / ((1.0 + lam) * (1.0 + lam - c * lam))

        def invert(m):
            rhs = c * s_safe / m
            a = 1.0 - c
            b = 2.0 - c
            disc = np.maximum(b * b - 4.0 * a * (1.0 - rhs), 0.0)
            lam = np.where(a > 1e-12,
                           (-b + np.sqrt(disc)) / np.where(a > 1e-12, 2.0 * a, 1.0),
                           (rhs - 1.0) / b)
            lam = np.maximum(lam, 0.0)
            return np.where(dead, 0.0, lam / s_safe)

        return uprime, invert

    if kind in (2, 3):
        if kind == 2:
            w = np.sort(np.linalg.eigvalsh(objective.weight_matrix))[::-1][:s.size]
        else:
            w = np.ones_like(s)
        coef = w * np.clip(c_other, 0.0, None) * sigma_x2

        def uprime(p):
            return coef * s / (1.0 + s * p) ** 2

        def invert(m):
            lam = np.sqrt(np.maximum(coef * s_safe / m, 0.0)) - 1.0
            lam = np.maximum(lam, 0.0)
            return np.where(dead, 0.0, lam / s_safe)

        return uprime, invert
    raise InvalidInputError(f"unsupported objective kind {kind}")


def _allocate_budget(uprime, invert, budget, caps, iters=100):
    """Budgeted allocation with closed-form marginal inversion."""
    caps = np.asarray(caps, dtype=float)
    if float(caps.sum()) <= budget:
        return caps.copy()

    def powers(m):
        return np.minimum(invert(m), caps)

    m_hi = float(np.max(uprime(np.zeros_like(caps)))) * (1.0 + 1e-12)
    if m_hi <= 0:
        return np.zeros_like(caps)
    m_lo = m_hi
    for _ in range(200):
        m_lo *= 0.5
        if float(powers(m_lo).sum()) >= budget:
            break
    for _ in range(iters):
        mid = 0.5 * (m_lo + m_hi)
        if float(powers(mid).sum()) > budget:
            m_lo = mid
        else:
            m_hi = mid
    p = powers(m_hi)
    total = float(p.sum())
    if total > budget > 0:
        p *= budget / total
    return p


# ---------------------------------------------------------------------------
# robust per-hop structures
# ---------------------------------------------------------------------------

def _other_products(lams, k):
    n = min(l.size for l in lams)
    c = np.ones(n)
    for j, lam in enumerate(lams):
        if j == k:
            continue
        lam = np.sort(lam)[::-1][:n]
        c = c * (lam / (1.0 + lam))
    return c


def robust_update_hop(scenario, state, k, alpha0=None, tol: Tolerances = DEFAULT):
    """Structured robust update of hop k under its constraint family.

    Joint and weighted families produce F = c · Ψ̃^{-1/2} V Λ U_arb^H with the
    normalization c = σ_n / sqrt(1 − Tr(Ψ̄ V Λ² V^H)); the trace is kept below
    1 − guard by rescaling the gains, and exact feasibility is restored by a
    closed-form boundary scaling.
    """
    h_hat = scenario.est_channels[k]
    psi = scenario.error_covs[k]
    sigma2 = scenario.noise_vars[k]
    constraint = scenario.constraints[k]
    lams = [hop_eigenvalues(scenario.est_channels[j], state.forwarders_F[j].dense,
                            scenario.error_covs[j], scenario.noise_vars[j])
            for j in range(scenario.n_hops)]
    c_other = _other_products(lams, k)
    n = h_hat.shape[1]

    if isinstance(constraint, Shaping):
        return solve_shaping(constraint.shape, target_shape=(n, n), tol=tol)

    if isinstance(constraint, Joint):
        total, cap = constraint.total, constraint.cap
        psi_t = sigma2 * np.eye(n) + total * psi
        wis = inv_sqrt_psd(psi_t, tol)
        svd = sorted_svd(h_hat @ wis, tol)
        v = svd.right[:, :n]
        s = np.zeros(n)
        s[:svd.singvals.size] = svd.singvals ** 2
        psi_bar = wis @ psi @ wis
        w_psi = np.linalg.eigvalsh(psi)
        cap_eff = cap * (sigma2 + total * max(w_psi[0], 0.0)) / (sigma2 + total * w_psi[-1])
        nstr = min(s.size, c_other.size)
        up, inv = _marginal_fn(scenario.objective, c_other[:nstr], s[:nstr],
                               scenario.source_var)
        p = np.zeros(n)
        p[:nstr] = _allocate_budget(up, inv, total, np.full(nstr, cap_eff))
        _normalized_robust(wis, v, p, psi_bar, sigma2, tol)  # trace guard on p
        p, c = _joint_boundary_fix(wis, v, p, psi_bar, sigma2, total, cap, tol)
        return _wrap(wis @ v, p, c)

    if isinstance(constraint, Weighted):
        terms = constraint.terms
        budgets = constraint.budgets
        m = len(terms)

        def build(alpha):
            if float(np.sum(alpha)) <= 0:
                alpha = 1.0 / (m * budgets)
            omega_t = sigma2 * sum(a * (om + pb * psi)
                                   for a, (om, pb) in zip(alpha, terms))
            omega_t = 0.5 * (omega_t + omega_t.conj().T)
            wis = inv_sqrt_psd(omega_t, tol, regularize=True)
            svd = sorted_svd(h_hat @ wis, tol)
            v = svd.right[:, :n]
            s = np.zeros(n)
            s[:svd.singvals.size] = svd.singvals ** 2
            nstr = min(s.size, c_other.size)
            _, inv = _marginal_fn(scenario.objective, c_other[:nstr], s[:nstr],
                                  scenario.source_var)
            p = np.zeros(n)
            p[:nstr] = inv(1.0)
            psi_bar = wis @ psi @ wis
            return wis, v, p, psi_bar

        def gap(alpha):
            # raw unit-level realization: the boundary polish is applied only
            # once at the end, otherwise the multipliers get no signal;
            # clipped so a zeroed multiplier cannot catapult the update
            wis, v, p, psi_bar = build(alpha)
            f, _ = _normalized_robust(wis, v, p, psi_bar, sigma2, tol)
            gram = f @ f.conj().T
            raw = np.array([np.trace(om @ gram).real - pb for om, pb in terms])
            return np.clip(raw, -10.0 * budgets, 10.0 * budgets)

        if alpha0 is None:
            alpha0 = 1.0 / (m * budgets)
        if m == 1:
            alpha = _refine_scale_single(gap, alpha0, budgets)
            converged = True
        else:
            step0 = 1.0 / max(np.linalg.norm(om, 2) for om, _ in terms)
            alpha, converged = subgradient_weights(gap, alpha0, budgets=budgets,
                                                   step0=step0, max_iter=400, tol=tol)
        wis, v, p, psi_bar = build(alpha)
        base = np.array([np.trace(om @ _gram(wis, v, p)).real for om, _ in terms])
        t_tr = float(np.einsum("ij,ji->", psi_bar, _vpv(v, p)).real)
        rho = _boundary_rho(base, budgets, t_tr, sigma2)
        p = rho * p
        _, c = _normalized_robust(wis, v, p, psi_bar, sigma2, tol)
        sol = _wrap(wis @ v, p, c)
        return StructuredSolution(sol.left_basis, sol.gains, sol.right_unitary,
                                  sol.dense, weights_alpha=np.asarray(alpha, float),
                                  converged=converged)

    raise InvalidInputError(f"unknown constraint type {type(constraint)!r}")


def _refine_scale_single(gap_fn, alpha0, budgets, iters=100):
    """Exact bisection on the scale of a single multiplier (trace is
    monotone decreasing in it)."""
    def worst(c):
        g = np.asarray(gap_fn(c * alpha0), dtype=float)
        return float(np.max(g / budgets))

    lo = hi = 1.0
    w1 = worst(1.0)
    if w1 > 0:
        for _ in range(100):
            hi *= 2.0
            if worst(hi) <= 0:
                break
    elif w1 < 0:
        for _ in range(100):
            lo *= 0.5
            if worst(lo) >= 0:
                break
        else:
            return lo * alpha0
    else:
        return alpha0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if worst(mid) > 0:
            lo = mid
        else:
            hi = mid
    return hi * alpha0


def _vpv(v, p):
    return (v * p[None, :]) @ v.conj().T


def _gram(wis, v, p):
    """Unnormalized F F^H / c²: Ψ̃^{-1/2} V diag(p) V^H Ψ̃^{-1/2}."""
    core = _vpv(v, p)
    return wis @ core @ wis


def _boundary_rho(base, budgets, t_tr, sigma2):
    """Largest ρ with σ² ρ base_i / (1 − ρ t) <= P_i for all i (closed form).

    ρ < 1/t automatically, so the normalization denominator stays positive.
    """
    if np.all(base <= 1e-300):
        return 1.0
    rhos = budgets / (sigma2 * base + budgets * t_tr + 1e-300)
    return float(np.min(rhos))


def _normalized_robust(wis, v, p, psi_bar, sigma2, tol: Tolerances):
    """c · Ψ̃^{-1/2} V diag(sqrt(p)) with c = σ / sqrt(1 − Tr(Ψ̄ V P V^H)).

    Mutates ``p`` in place when the trace guard forces a rescale.  Returns the
    realized matrix and the scalar c, so callers can factor it exactly.
    """
    t_tr = float(np.einsum("ij,ji->", psi_bar, _vpv(v, p)).real)
    limit = 1.0 - tol.denominator_guard
    if t_tr > limit:
        p *= limit / t_tr
        t_tr = limit
    c = np.sqrt(sigma2 / (1.0 - t_tr))
    return c * (wis @ (v * np.sqrt(p)[None, :])), c


def _joint_boundary_fix(wis, v, p, psi_bar, sigma2, total, cap,
                        tol: Tolerances, iters=80):
    """Shrink the gains if the realized F violates trace or spectral caps.

    Returns the (possibly rescaled) mode powers and the normalization scalar.
    """
    def realized(rho):
        return _normalized_robust(wis, v, rho * p, psi_bar, sigma2, tol)

    def violation(mat):
        gram = mat @ mat.conj().T
        return max(float(np.trace(gram).real) - total,
                   float(np.linalg.eigvalsh(gram)[-1]) - cap)

    f, c = realized(1.0)
    if violation(f) <= 1e-10 * max(total, cap):
        return p, c
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if violation(realized(mid)[0]) > 0:
            hi = mid
        else:
            lo = mid
    _, c = realized(lo)
    return lo * p, c


def _wrap(left, p, c):
    """Factor F = left · diag(c · sqrt(p)) exactly."""
    gains = c * np.sqrt(np.clip(p, 0.0, None))
    return StructuredSolution(left_basis=left, gains=gains,
                              right_unitary=np.eye(gains.size),
                              dense=left @ np.diag(gains))


# ---------------------------------------------------------------------------
# full cascade solve
# ---------------------------------------------------------------------------

def _state_lams(scenario, forwarders):
    return [hop_eigenvalues(scenario.est_channels[j], forwarders[j].dense,
                            scenario.error_covs[j], scenario.noise_vars[j])
            for j in range(scenario.n_hops)]


def cascade_solve(scenario, init=None, rel_tol=None, max_iter=None,
                  tol: Tolerances = DEFAULT):
    """Alternating hop updates, then rotations and feedback, minimizing the
    objective's canonical scalar.  The trace is monotone non-increasing."""
    rel_tol = tol.rel_tol if rel_tol is None else rel_tol
    max_iter = tol.max_iter if max_iter is None else max_iter
    khops = scenario.n_hops

    if init is None:
        forwarders = []
        for k in range(khops):
            n = scenario.est_channels[k].shape[1]
            f0 = scaled_identity_init(scenario.constraints[k], (n, n))
            forwarders.append(StructuredSolution(
                left_basis=f0, gains=np.ones(n), right_unitary=np.eye(n), dense=f0))
    else:
        forwarders = list(init)
    for k, sol in enumerate(forwarders):
        gap = constraint_gap(scenario.constraints[k], sol.dense)
        if gap > 1e-6:
            raise InfeasibleError(f"initial forwarder {k} infeasible by {gap:.2e}")

    def scalar(fwd):
        return objective_scalar(scenario.objective, _state_lams(scenario, fwd),
                                scenario.source_var)

    state = HopState(forwarders_F=forwarders,
                     rotations_Q=[np.eye(f.dense.shape[1], dtype=complex)
                                  for f in forwarders],
                     amplifications_M=[None] * khops,
                     noise_covs_K=[None] * khops,
                     feedback_C=np.eye(scenario.est_channels[0].shape[1]))
    state.objective_trace.append(scalar(forwarders))
    alphas = [None] * khops

    for _ in range(max_iter):
        before = state.objective_trace[-1]
        for k in range(khops):
            sol = robust_update_hop(scenario, state, k, alpha0=alphas[k], tol=tol)
            trial = list(state.forwarders_F)
            trial[k] = sol
            val = scalar(trial)
            if val <= state.objective_trace[-1] + tol.monotone_slack:
                state.forwarders_F = trial
                state.objective_trace.append(val)
                if sol.weights_alpha is not None:
                    alphas[k] = sol.weights_alpha
            else:
                state.objective_trace.append(state.objective_trace[-1])
        after = state.objective_trace[-1]
        if abs(after - before) <= rel_tol * max(1.0, abs(after)):
            break

    # final rotations, amplifications and feedback
    factors = []
    for k in range(khops):
        f = state.forwarders_F[k].dense
        kappa = hop_noise_covariance(f, scenario.error_covs[k], scenario.noise_vars[k])
        state.noise_covs_K[k] = kappa
        state.amplifications_M[k] = hop_amplification(f, scenario.est_channels[k],
                                                      kappa, tol)
        factors.append(cascade_factor(scenario.est_channels[k], f,
                                      scenario.error_covs[k],
                                      scenario.noise_vars[k], tol))
    inner = inner_rotations(factors, tol)
    d = _stream_products(_state_lams(scenario, state.forwarders_F))
    q1 = first_rotation(scenario.objective, factors[0], cascade_d=d,
                        sigma_x2=scenario.source_var, tol=tol)
    state.rotations_Q = [q1] + inner
    if scenario.objective.nonlinear:
        n = factors[0].shape[1]
        t = None
        for a, q in zip(factors, state.rotations_Q):
            aq = a @ q
            t = aq if t is None else aq @ t
        tilde = scenario.source_var * (np.eye(n) - t.conj().T @ t)
        state.feedback_C = feedback_matrix(0.5 * (tilde + tilde.conj().T))
    else:
        state.feedback_C = np.eye(factors[0].shape[1])
    return state


def evaluate_rate(scenario, forwarders):
    """Sum rate of given forwarders under the scenario's error statistics."""
    lams = _state_lams(scenario, forwarders)
    return f_eigen(lams, scenario.source_var, kind="sum_rate")
