"""Independent numerical baselines for the closed-form solvers.

Nothing in here shares code paths with the structured solutions: the oracle
works on the raw matrix variables with projected-gradient ascent, dense grid
enumeration, and random feasible sampling, so agreement between the two
routes is meaningful evidence of correctness.
"""

from dataclasses import dataclass

import numpy as np

from .constraints import Joint, Shaping, Weighted, constraint_gap
from .exceptions import InvalidInputError
from .linalg import crandn, hermitian_sqrt, inv_sqrt_psd
from .tolerances import DEFAULT, Tolerances

__all__ = [
    "OracleReport",
    "grid_waterfill",
    "random_feasible",
    "project_feasible",
    "projected_gradient",
    "pareto_dominance_check",
    "uplink_oracle",
    "sensor_lmmse_baseline",
]

ARMIJO_SHRINK = 0.5
ARMIJO_SLOPE = 1e-4
MAX_BACKTRACKS = 50
DYKSTRA_MAX_ITER = 500
DYKSTRA_TOL = 1e-8


@dataclass(frozen=True)
class OracleReport:
    best_objective: float
    iterations: int
    feasibility_residual: float
    converged: bool


# ---------------------------------------------------------------------------
# dense-grid water-filling
# ---------------------------------------------------------------------------

def _grid_obj(gains, parts):
    total = np.zeros_like(parts[0])
    for g, p in zip(gains, parts):
        total = total + np.log1p(g * p)
    return total


def _ternary_grid(f, lo, hi):
    """Exact argmax of a strictly unimodal sequence on integer [lo, hi]."""
    while hi - lo > 2:
        m1 = lo + (hi - lo) // 3
        m2 = hi - (hi - lo) // 3
        if f(m1) < f(m2):
            lo = m1 + 1
        else:
            hi = m2
    cands = np.arange(lo, hi + 1)
    vals = np.array([f(i) for i in cands])
    return int(cands[np.argmax(vals)])


def grid_waterfill(gains, budget, cap=None, step=1e-4):
    """Exhaustive grid search for the (capped) water-filling problem.

    Supports at most three channels.  Small grids are enumerated directly;
    for large 2-D grids the same grid optimum is located by nested integer
    ternary search, which is exact because every slice of the allocation
    objective is strictly unimodal on the grid.
    """
    gains = np.asarray(gains, dtype=float)
    if gains.size > 3:
        raise InvalidInputError("grid oracle supports at most 3 channels")
    if gains.size == 0 or np.any(gains <= 0) or budget <= 0:
        raise InvalidInputError("gains must be positive and budget > 0")
    lim = budget if cap is None else min(budget, cap)

    def tail(remaining):
        return np.clip(remaining, 0.0, lim)

    if gains.size == 1:
        return np.array([tail(budget)])

    axis = np.arange(0.0, lim + step * 0.5, step)
    if gains.size == 2:
        p2 = tail(budget - axis)
        vals = np.log1p(gains[0] * axis) + np.log1p(gains[1] * p2)
        i = int(np.argmax(vals))
        return np.array([axis[i], p2[i]])

    # three channels: optimize (p1, p2), fill p3 with the clipped remainder
    def best_given_p1(i):
        p1 = axis[i]
        rest = budget - p1
        inner = axis[axis <= rest + step * 0.5]
        if inner.size == 0:
            inner = axis[:1]
        p3 = tail(rest - inner)
        vals = (np.log1p(gains[0] * p1) + np.log1p(gains[1] * inner)
                + np.log1p(gains[2] * p3))
        j = int(np.argmax(vals))
        return vals[j], inner[j], p3[j]

    if axis.size ** 2 <= 4_000_000:
        best = (-np.inf, 0.0, 0.0, 0.0)
        for i in range(axis.size):
            v, p2, p3 = best_given_p1(i)
            if v > best[0]:
                best = (v, axis[i], p2, p3)
        return np.array(best[1:])

    i = _ternary_grid(lambda k: best_given_p1(k)[0], 0, axis.size - 1)
    _, p2, p3 = best_given_p1(i)
    return np.array([axis[i], p2, p3])


# ---------------------------------------------------------------------------
# feasible sampling
# ---------------------------------------------------------------------------

def _rand_unitary_batch(rng, b, n):
    q, r = np.linalg.qr(crandn(rng, b, n, n))
    d = np.diagonal(r, axis1=-2, axis2=-1)
    return q * (d / np.abs(d))[:, None, :]


def _fill_budget(rng, b, r, total, cap, slack):
    """Random power vectors near the boundary of {sum p <= total, p <= cap}."""
    raw = -np.log(rng.random((b, r)))
    p = raw / raw.sum(axis=1, keepdims=True) * total
    for _ in range(4):
        over = np.clip(p - cap, 0.0, None)
        p = np.minimum(p, cap)
        room = np.clip(cap - p, 0.0, None)
        total_room = room.sum(axis=1, keepdims=True)
        give = np.where(total_room > 1e-15, room / np.maximum(total_room, 1e-15), 0.0)
        p = p + give * over.sum(axis=1, keepdims=True)
    p = np.minimum(p, cap)
    shrink = 1.0 - slack * rng.random((b, 1))
    return p * shrink


def random_feasible(constraint, dims, rng, batch=None):
    """Draw feasible matrices by construction (verified to 1e-9).

    ``dims = (rows, cols)``.  With ``batch`` set an array (batch, rows, cols)
    is returned.  Samples concentrate near the constraint boundary so that
    Pareto dominance checks are meaningful.
    """
    m, n = dims
    b = 1 if batch is None else batch
    r = min(m, n)
    if isinstance(constraint, Joint):
        u = _rand_unitary_batch(rng, b, m)
        v = _rand_unitary_batch(rng, b, n)
        p = _fill_budget(rng, b, r, constraint.total, constraint.cap, 0.05)
        x = (u[:, :, :r] * np.sqrt(p)[:, None, :]) @ v[:, :, :r].conj().transpose(0, 2, 1)
    elif isinstance(constraint, Shaping):
        root = hermitian_sqrt(constraint.shape)
        u = _rand_unitary_batch(rng, b, m)
        v = _rand_unitary_batch(rng, b, n)
        sig = rng.random((b, r)) ** 0.25  # bias toward the boundary
        x = root @ (u[:, :, :r] * sig[:, None, :]) @ v[:, :, :r].conj().transpose(0, 2, 1)
    elif isinstance(constraint, Weighted):
        u = _rand_unitary_batch(rng, b, m)
        v = _rand_unitary_batch(rng, b, n)
        sig = rng.random((b, r)) + 0.1
        x = u[:, :, :r] * sig[:, None, :] @ v[:, :, :r].conj().transpose(0, 2, 1)
        gram = x @ x.conj().transpose(0, 2, 1)
        scale = np.full(b, np.inf)
        for omega, budget in constraint.terms:
            tr = np.einsum("ij,bji->b", omega, gram).real
            scale = np.minimum(scale, budget / np.maximum(tr, 1e-300))
        shrink = 1.0 - 0.05 * rng.random(b)
        x = x * (np.sqrt(scale) * shrink)[:, None, None]
    else:
        raise InvalidInputError(f"unknown constraint type {type(constraint)!r}")
    if batch is None:
        x = x[0]
        if constraint_gap(constraint, x) > 1e-9:
            raise InvalidInputError("sampler produced an infeasible point")
    return x


# ---------------------------------------------------------------------------
# projections onto the three families
# ---------------------------------------------------------------------------

def _project_joint(x, total, cap, iters=100):
    u, s, vh = np.linalg.svd(x, full_matrices=False)
    root_cap = np.sqrt(cap)

    def clipped(nu):
        return np.minimum(s / (1.0 + nu), root_cap)

    s_new = clipped(0.0)
    if float(np.sum(s_new ** 2)) > total:
        lo, hi = 0.0, 1.0
        while np.sum(clipped(hi) ** 2) > total:
            hi *= 2.0
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if np.sum(clipped(mid) ** 2) > total:
                lo = mid
            else:
                hi = mid
        s_new = clipped(hi)
    return (u * s_new[None, :]) @ vh


def _project_ellipsoid(z, omega, budget, iters=100):
    """Euclidean projection onto {X : Tr(Ω X X^H) <= budget} (Ω PSD)."""
    val = float(np.trace(omega @ z @ z.conj().T).real)
    if val <= budget:
        return z
    w, q = np.linalg.eigh(omega)
    w = np.clip(w, 0.0, None)
    zt = q.conj().T @ z
    row = np.sum(np.abs(zt) ** 2, axis=1)

    def trace_of(nu):
        return float(np.sum(w * row / (1.0 + nu * w) ** 2))

    lo, hi = 0.0, 1.0
    while trace_of(hi) > budget:
        hi *= 2.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if trace_of(mid) > budget:
            lo = mid
        else:
            hi = mid
    zt = zt / (1.0 + hi * w)[:, None]
    return q @ zt


def _is_per_antenna(constraint):
    for omega, _ in constraint.terms:
        d = np.diag(np.diag(omega))
        if not np.allclose(omega, d) or np.count_nonzero(np.diag(omega).real > 0) != 1:
            return False
    return len(constraint.terms) == constraint.terms[0][0].shape[0]


def project_feasible(constraint, x):
    """Euclidean projection of X onto the feasible set of its family."""
    x = np.asarray(x, dtype=complex)
    if isinstance(constraint, Joint):
        return _project_joint(x, constraint.total, constraint.cap)
    if isinstance(constraint, Shaping):
        root = hermitian_sqrt(constraint.shape)
        inv_root = inv_sqrt_psd(constraint.shape + 1e-14 * np.trace(constraint.shape).real
                                / constraint.shape.shape[0] * np.eye(constraint.shape.shape[0]))
        t = inv_root @ x
        u, s, vh = np.linalg.svd(t, full_matrices=False)
        return root @ (u * np.minimum(s, 1.0)[None, :]) @ vh
    if isinstance(constraint, Weighted):
        if _is_per_antenna(constraint):
            budgets = np.array([p / np.diag(om).real.max() for om, p in constraint.terms])
            order = [int(np.argmax(np.diag(om).real)) for om, _ in constraint.terms]
            lims = np.empty(x.shape[0])
            lims[order] = budgets
            row = np.sum(np.abs(x) ** 2, axis=1)
            scale = np.sqrt(np.minimum(lims / np.maximum(row, 1e-300), 1.0))
            return x * scale[:, None]
        return _dykstra(constraint, x)
    raise InvalidInputError(f"unknown constraint type {type(constraint)!r}")


def _dykstra(constraint, x):
    """Dykstra alternating projections onto the weighted trace ellipsoids."""
    m = len(constraint.terms)
    increments = [np.zeros_like(x) for _ in range(m)]
    z = x.copy()
    for _ in range(DYKSTRA_MAX_ITER):
        z_prev = z.copy()
        for i, (omega, budget) in enumerate(constraint.terms):
            y = z + increments[i]
            z = _project_ellipsoid(y, omega, budget)
            increments[i] = y - z
        if np.linalg.norm(z - z_prev) <= DYKSTRA_TOL * max(1.0, np.linalg.norm(z)):
            break
    return z


# ---------------------------------------------------------------------------
# projected-gradient ascent
# ---------------------------------------------------------------------------

def _check_gradient(objective, gradient, x0, rel_tol=1e-4):
    """Central-difference audit of the analytic gradient at x0."""
    g = gradient(x0)
    rng = np.random.default_rng(0)
    scale = max(1.0, float(np.linalg.norm(x0)))
    h = 1e-5 * scale
    num = 0.0
    den = 0.0
    for _ in range(6):
        d = crandn(rng, *x0.shape)
        d = d / np.linalg.norm(d)
        fp = objective(x0 + h * d)
        fm = objective(x0 - h * d)
        fd = (fp - fm) / (2 * h)
        an = 2.0 * np.real(np.sum(np.conj(g) * d))
        num = max(num, abs(fd - an))
        den = max(den, abs(fd), abs(an))
    if den > 1e-12 and num / den > rel_tol:
        raise InvalidInputError(
            f"analytic gradient disagrees with finite differences ({num / den:.2e})"
        )


def projected_gradient(objective, gradient, constraint, init, steps=500,
                       check_gradient=True, rel_stop=1e-11):
    """Projected-gradient ascent with Armijo backtracking.

    ``objective(X)`` must be a real functional with Wirtinger gradient
    ``gradient(X) = ∂f/∂X*``; the gradient is audited against central finite
    differences before use.  Returns ``(X, OracleReport)``; the objective is
    monotonically non-decreasing across accepted steps.
    """
    x = project_feasible(constraint, np.asarray(init, dtype=complex))
    if check_gradient:
        _check_gradient(objective, gradient, x)
    f = objective(x)
    t = 1.0
    it = 0
    converged = False
    for it in range(1, steps + 1):
        g = gradient(x)
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            x_new = project_feasible(constraint, x + t * g)
            f_new = objective(x_new)
            gain = 2.0 * np.real(np.sum(np.conj(g) * (x_new - x)))
            if f_new >= f + ARMIJO_SLOPE * gain - 1e-15:
                accepted = True
                break
            t *= ARMIJO_SHRINK
        if not accepted:
            break
        moved = np.linalg.norm(x_new - x)
        improved = f_new - f
        x, f = x_new, f_new
        t = min(t * 1.5, 1e6)
        if improved <= rel_stop * max(1.0, abs(f)) and moved <= 1e-9 * max(1.0, np.linalg.norm(x)):
            converged = True
            break
    residual = max(constraint_gap(constraint, x), 0.0)
    report = OracleReport(best_objective=float(f), iterations=it,
                          feasibility_residual=float(residual),
                          converged=converged or residual <= 1e-6)
    return x, report


# ---------------------------------------------------------------------------
# Pareto dominance audit
# ---------------------------------------------------------------------------

def pareto_dominance_check(f_candidate, pi, constraint, samples=10_000, rng=None,
                           strict=1e-6):
    """True iff no sampled feasible point dominates λ(F^H Π F) componentwise."""
    if rng is None:
        rng = np.random.default_rng(0)
    f_candidate = np.asarray(f_candidate, dtype=complex)
    pi = np.asarray(pi, dtype=complex)
    lam_c = np.linalg.eigvalsh(f_candidate.conj().T @ pi @ f_candidate)[::-1]
    xs = random_feasible(constraint, f_candidate.shape, rng, batch=samples)
    quad = xs.conj().transpose(0, 2, 1) @ pi @ xs
    quad = 0.5 * (quad + quad.conj().transpose(0, 2, 1))
    lam = np.linalg.eigvalsh(quad)[:, ::-1]
    geq_all = np.all(lam >= lam_c[None, :] - 1e-9, axis=1)
    strictly = np.any(lam > lam_c[None, :] + strict, axis=1)
    return not bool(np.any(geq_all & strictly))


# ---------------------------------------------------------------------------
# application-level baselines
# ---------------------------------------------------------------------------

def uplink_oracle(channels, weights, noise_cov, constraints, rng,
                  restarts=8, steps=400):
    """Joint projected-gradient ascent on the raw uplink precoders.

    Maximizes log|R_n + Σ H_k X_k W_k X_k^H H_k^H| − log|R_n| over all users
    simultaneously, restarts batched.  Returns (best_rate, best_precoders).
    """
    k_users = len(channels)
    n = channels[0].shape[1]
    hs = np.stack(channels)                      # (K, m, n)
    ws = np.stack(weights)
    _, logdet_rn = np.linalg.slogdet(noise_cov)
    rn_inv_free = noise_cov

    def rate_of(xs):
        # xs: (B, K, n, n)
        m = np.broadcast_to(rn_inv_free, (xs.shape[0],) + noise_cov.shape).copy()
        for k in range(k_users):
            hxw = hs[k] @ xs[:, k]
            m = m + hxw @ ws[k] @ hxw.conj().transpose(0, 2, 1)
        sign, logdet = np.linalg.slogdet(m)
        return logdet.real - logdet_rn.real, m

    def grads_of(xs, m):
        minv = np.linalg.inv(m)
        g = np.empty_like(xs)
        for k in range(k_users):
            g[:, k] = hs[k].conj().T @ minv @ hs[k] @ xs[:, k] @ ws[k]
        return g

    def project_all(xs):
        out = np.empty_like(xs)
        for b in range(xs.shape[0]):
            for k in range(k_users):
                out[b, k] = project_feasible(constraints[k], xs[b, k])
        return out

    xs = np.empty((restarts, k_users, n, n), dtype=complex)
    for k in range(k_users):
        xs[0, k] = project_feasible(constraints[k], np.eye(n, dtype=complex) * 10.0)
        for b in range(1, restarts):
            xs[b, k] = random_feasible(constraints[k], (n, n), rng)
    f, m = rate_of(xs)
    t = np.ones(restarts)
    for _ in range(steps):
        g = grads_of(xs, m)
        pending = np.ones(restarts, dtype=bool)
        x_new, f_new, m_new = xs.copy(), f.copy(), m.copy()
        for _ in range(MAX_BACKTRACKS):
            if not np.any(pending):
                break
            cand = xs.copy()
            cand[pending] = xs[pending] + t[pending, None, None, None] * g[pending]
            cand = project_all(cand)
            fc, mc = rate_of(cand)
            gain = 2.0 * np.real(np.sum(np.conj(g) * (cand - xs), axis=(1, 2, 3)))
            ok = pending & (fc >= f + ARMIJO_SLOPE * gain - 1e-15)
            x_new[ok], f_new[ok], m_new[ok] = cand[ok], fc[ok], mc[ok]
            t[pending & ~ok] *= ARMIJO_SHRINK
            pending = pending & ~ok
        improve = f_new - f
        xs, f, m = x_new, f_new, m_new
        t = np.minimum(t * 1.5, 1e6)
        if np.max(improve) <= 1e-11 * max(1.0, float(np.max(np.abs(f)))):
            break
    best = int(np.argmax(f))
    return float(f[best]), [xs[best, k] for k in range(k_users)]


def sensor_lmmse_baseline(scenario, rng, outer_iters=40, inner_steps=30):
    """Iterative LMMSE benchmark: minimize the sum MSE of estimating the
    stacked source from all sensor links, alternating a closed-form fusion
    combiner with projected-gradient compressor updates, then score the
    result by mutual information.  This mirrors the classic weighted-MMSE
    QCQP benchmark the closed-form solver is compared against.
    """
    from .sensors import mutual_information  # local import avoids a cycle

    c_x = scenario.source_cov
    k_sensors = len(scenario.channels)
    dims = [c.shape[1] for c in scenario.channels]          # tx antennas
    sdims = [r.shape[0] for r in scenario.per_sensor_cov]   # signal dims
    rx = [c.shape[0] for c in scenario.channels]
    n_x = sum(sdims)
    roots = [hermitian_sqrt(r) for r in scenario.per_sensor_cov]
    inv_roots = [inv_sqrt_psd(r) for r in scenario.per_sensor_cov]
    r_blk = np.zeros((sum(rx), sum(rx)), dtype=complex)
    off = 0
    for k in range(k_sensors):
        r_blk[off:off + rx[k], off:off + rx[k]] = scenario.noise_covs[k]
        off += rx[k]
    c_off = np.cumsum([0] + sdims)
    r_off = np.cumsum([0] + rx)

    def big_h(xs):
        h = np.zeros((sum(rx), n_x), dtype=complex)
        for k in range(k_sensors):
            h[r_off[k]:r_off[k + 1], c_off[k]:c_off[k + 1]] = scenario.channels[k] @ xs[k]
        return h

    def mse_and_b(g, h):
        b = g @ h
        e = (np.trace(b @ c_x @ b.conj().T).real
             - 2.0 * np.trace(b @ c_x).real
             + np.trace(c_x).real
             + np.trace(g @ r_blk @ g.conj().T).real)
        return e, b

    # feasible start: scaled identity in the constrained Y = X R^{1/2} domain
    xs = []
    for k in range(k_sensors):
        y0 = np.eye(dims[k], sdims[k], dtype=complex)
        y0 = project_feasible(scenario.constraints[k], y0 * 10.0)
        xs.append(y0 @ inv_roots[k])

    for _ in range(outer_iters):
        h = big_h(xs)
        cov = h @ c_x @ h.conj().T + r_blk
        g = c_x @ h.conj().T @ np.linalg.inv(cov)
        e, b = mse_and_b(g, h)
        for k in range(k_sensors):
            g_k = g[:, r_off[k]:r_off[k + 1]]
            hk = scenario.channels[k]
            step = 1.0
            for _ in range(inner_steps):
                grad = hk.conj().T @ g_k.conj().T @ ((b - np.eye(n_x)) @ c_x)[:, c_off[k]:c_off[k + 1]]
                accepted = False
                for _ in range(MAX_BACKTRACKS):
                    y = (xs[k] - step * grad) @ roots[k]
                    y = project_feasible(scenario.constraints[k], y)
                    x_cand = y @ inv_roots[k]
                    trial = list(xs)
                    trial[k] = x_cand
                    h_c = big_h(trial)
                    e_c, b_c = mse_and_b(g, h_c)
                    gain = -2.0 * np.real(np.sum(np.conj(grad) * (x_cand - xs[k])))
                    if e_c <= e - ARMIJO_SLOPE * gain + 1e-15:
                        accepted = True
                        break
                    step *= ARMIJO_SHRINK
                if not accepted:
                    break
                xs[k], e, b = x_cand, e_c, b_c
                step = min(step * 1.5, 1e6)
    return mutual_information(scenario, xs), xs
