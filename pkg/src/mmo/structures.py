"""Closed-form optimal precoder structures for the three constraint families.

Given the quadratic-form matrix Π (e.g. H^H K^{-1} H for a whitened channel),
the Pareto-optimal designs for ``max λ(F^H Π F)`` are:

* shaping:   any square root of the target; we return the canonical
  Hermitian PSD root.
* joint:     F = U_Π Λ U_arb^H with U_Π the descending eigenbasis of Π and a
  capped water-filling gain allocation (every gain ≤ sqrt(cap)).
* weighted:  F = Ω^{-1/2}(α) U diag(g) U_arb^H with Ω(α) = Σ α_i Ω_i and U the
  descending eigenbasis of Ω^{-1/2} Π Ω^{-1/2}.  The multipliers α ≥ 0 are the
  weighting factors that make the constraints hold; a single term is solved by
  exact bisection on the α scale, several terms by a projected subgradient
  loop.  The gain rule is the Lagrangian (unit water level) form
  p_i = (1 - 1/(w_i s_i))_+, with a final exact rescale of the gains onto the
  tightest constraint boundary.
"""

from dataclasses import dataclass, field

import numpy as np

from .constraints import Joint, Shaping, Weighted, constraint_gap
from .exceptions import InvalidInputError, NotPsdError, UnsupportedRankError
from .linalg import hermitian_sqrt, inv_sqrt_psd, sorted_evd
from .tolerances import DEFAULT, Tolerances
from .waterfill import waterfill_capped, waterfill_floors

__all__ = [
    "StructuredSolution",
    "solve_shaping",
    "solve_joint",
    "solve_weighted",
    "subgradient_weights",
]


@dataclass(frozen=True)
class StructuredSolution:
    """A precoder in factored form plus the realized dense matrix.

    ``dense = left_basis @ diag(gains) @ right_unitary^H`` within 1e-12.
    ``weights_alpha`` holds the α multipliers of the weighted family (None
    otherwise); ``converged`` is False when the subgradient loop hit its
    iteration cap and the best feasible iterate was returned instead.
    """

    left_basis: np.ndarray
    gains: np.ndarray
    right_unitary: np.ndarray
    dense: np.ndarray
    weights_alpha: np.ndarray | None = None
    converged: bool = True

    def with_right_unitary(self, q):
        q = np.asarray(q, dtype=complex)
        dense = self.left_basis @ np.diag(self.gains) @ q.conj().T
        return StructuredSolution(self.left_basis, self.gains, q, dense,
                                  self.weights_alpha, self.converged)


def _assemble(left, gains, alpha=None, converged=True):
    gains = np.asarray(gains, dtype=float)
    right = np.eye(gains.size)
    dense = left * gains[None, :]
    return StructuredSolution(left_basis=left, gains=gains, right_unitary=right,
                              dense=dense, weights_alpha=alpha, converged=converged)


def solve_shaping(shape, target_shape=None, tol: Tolerances = DEFAULT) -> StructuredSolution:
    """Lemma-style shaping solution: F F^H = R_s via the Hermitian root.

    ``target_shape`` is the (rows, cols) of the precoder being designed; the
    rank of the shaping target must not exceed either dimension.
    """
    dec = sorted_evd(shape, tol)
    scale = max(float(dec.eigvals[0]), 0.0) if dec.eigvals.size else 0.0
    if scale and dec.eigvals[-1] < -tol.psd * scale:
        raise NotPsdError("shaping target is not PSD")
    w = np.clip(dec.eigvals, 0.0, None)
    rank = int(np.sum(w > tol.psd_clip * max(scale, 1.0)))
    n = shape.shape[0] if hasattr(shape, "shape") else dec.matrix.shape[0]
    rows, cols = target_shape if target_shape is not None else (n, n)
    if rank > rows or rank > cols:
        raise UnsupportedRankError(
            f"shaping target rank {rank} exceeds precoder shape {rows}x{cols}"
        )
    if rows != n:
        raise InvalidInputError("shaping target size must match precoder rows")
    gains = np.sqrt(w[:cols])
    left = dec.eigvecs[:, :cols]
    if cols == n:
        # realize the canonical Hermitian PSD square root
        right = dec.eigvecs
        dense = (dec.eigvecs * gains[None, :]) @ dec.eigvecs.conj().T
        dense = 0.5 * (dense + dense.conj().T)
        return StructuredSolution(left_basis=left, gains=gains,
                                  right_unitary=right, dense=dense)
    return _assemble(left, gains)


def solve_joint(pi, total, cap, scalarize=None, n_cols=None, floors=None,
                tol: Tolerances = DEFAULT) -> StructuredSolution:
    """Joint power constraint: eigenbasis of Π + capped water-filling gains.

    ``scalarize`` may be a vector of per-mode multiplicative weights w_i
    (descending, paired with the descending eigenvalues of Π); the allocation
    then maximizes Σ log(1 + w_i λ_i(Π) p_i).  Default is w = 1.  ``floors``
    turns the objective into Σ log(a_i + w_i λ_i p_i) for per-mode noise
    floors a_i (paired in the caller's order).
    """
    dec = sorted_evd(pi, tol)
    lam = dec.eigvals
    scale = max(float(lam[0]), 0.0) if lam.size else 0.0
    if scale and lam[-1] < -tol.psd * scale:
        raise NotPsdError("Pi has a significantly negative eigenvalue")
    lam = np.clip(lam, 0.0, None)
    n = lam.size
    r = n if n_cols is None else int(n_cols)
    w = np.ones(r) if scalarize is None else np.asarray(scalarize, dtype=float)[:r]
    eff = w * lam[:r]
    powers = np.zeros(r)
    live = eff > max(scale, 1e-300) * 1e-14
    if np.any(live):
        if floors is None:
            res = waterfill_capped(eff[live], total, cap, tol)
        else:
            a = np.asarray(floors, dtype=float)[:r]
            res = waterfill_floors(eff[live], a[live], total, cap=cap, tol=tol)
        powers[live] = res.powers
    return _assemble(dec.eigvecs[:, :r], np.sqrt(powers))


def subgradient_weights(feasibility_gap, alpha0, budgets=None, step0=None,
                        max_iter=None, tol: Tolerances = DEFAULT):
    """Projected subgradient loop for the weighted-family multipliers.

    ``feasibility_gap(alpha)`` returns the vector Tr(Ω_i F(α) F^H) − P_i.
    Uses the diminishing schedule s_t = s0/sqrt(t) with projection onto
    α ≥ 0, stopping when every gap is below the relative tolerance.  If the
    input is already feasible the initial α is returned unchanged.  After the
    loop a uniform rescale of α is refined by bisection when the gap responds
    monotonically to it (it does for the water-filling builders used here).

    Returns ``(alpha, converged)``; on iteration exhaustion the best iterate
    seen (smallest worst violation) is returned with ``converged=False``.
    """
    alpha = np.asarray(alpha0, dtype=float).copy()
    if np.any(alpha < 0):
        raise InvalidInputError("alpha0 must be non-negative")
    gaps = np.asarray(feasibility_gap(alpha), dtype=float)
    if budgets is None:
        budgets = np.ones_like(gaps)
    budgets = np.asarray(budgets, dtype=float)
    if np.all(gaps <= 0):
        return alpha, True

    if step0 is None:
        step0 = 1.0
    max_iter = tol.subgradient_max_iter if max_iter is None else max_iter
    limit = tol.constraint_rel * budgets

    def worst(g):
        return float(np.max(g / budgets))

    best_alpha, best_viol = alpha.copy(), worst(gaps)
    converged = False
    for t in range(1, max_iter + 1):
        alpha = np.maximum(alpha + (step0 / np.sqrt(t)) * gaps, 0.0)
        if t % 50 == 0 or t == max_iter:
            alpha = _refine_scale(feasibility_gap, alpha, budgets)
        gaps = np.asarray(feasibility_gap(alpha), dtype=float)
        viol = worst(gaps)
        if viol < best_viol:
            best_alpha, best_viol = alpha.copy(), viol
        slack_ok = np.max(np.abs(alpha * gaps)) <= tol.comp_slack
        if np.all(gaps <= limit) and slack_ok:
            converged = True
            break
    if not converged:
        alpha = _refine_scale(feasibility_gap, best_alpha, budgets)
        gaps = np.asarray(feasibility_gap(alpha), dtype=float)
        if np.all(gaps <= limit):
            converged = np.max(np.abs(alpha * gaps)) <= tol.comp_slack
    return alpha, converged


def _refine_scale(feasibility_gap, alpha, budgets, iters=48):
    """Bisect a uniform multiplier so the tightest constraint hits zero gap."""
    if np.all(alpha == 0):
        return alpha

    def worst(c):
        g = np.asarray(feasibility_gap(c * alpha), dtype=float)
        return float(np.max(g / budgets))

    lo, hi = 1.0, 1.0
    w1 = worst(1.0)
    if w1 > 0:
        for _ in range(60):
            hi *= 2.0
            if worst(hi) <= 0:
                break
        else:
            return alpha
    elif w1 < 0:
        for _ in range(60):
            lo *= 0.5
            if worst(lo) >= 0:
                break
        else:
            return alpha  # constraints never bind at any scale
    else:
        return alpha
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if worst(mid) > 0:
            lo = mid
        else:
            hi = mid
    return hi * alpha


def solve_weighted(pi, constraint, scalarize=None, n_cols=None, alpha0=None,
                   floors=None, tol: Tolerances = DEFAULT) -> StructuredSolution:
    """Multiple weighted power constraints via Ω(α)-whitening.

    The α multipliers come from exact bisection (single term) or the
    subgradient loop (several terms); the final gains are rescaled exactly
    onto the tightest constraint boundary, so every Tr(Ω_i F F^H) ≤ P_i holds
    on return.  The gain rule is the unit-water-level Lagrangian form
    p_i = (1 − a_i/(w_i s_i))_+, with floors a_i = 1 by default.
    """
    if isinstance(constraint, (list, tuple)):
        constraint = Weighted(tuple(constraint))
    terms = constraint.terms
    budgets = constraint.budgets
    m = len(terms)
    pi = np.asarray(pi, dtype=complex)
    n = pi.shape[0]
    r = n if n_cols is None else int(n_cols)
    w = np.ones(r) if scalarize is None else np.asarray(scalarize, dtype=float)[:r]
    a = np.ones(r) if floors is None else np.asarray(floors, dtype=float)[:r]

    def build(alpha):
        if float(np.sum(alpha)) <= 0:
            alpha = 1.0 / (m * budgets)
        omega = sum(al * om for al, (om, _) in zip(alpha, terms))
        omega = 0.5 * (omega + omega.conj().T)
        wis = inv_sqrt_psd(omega, tol, regularize=True)
        dec = sorted_evd(wis @ pi @ wis, tol)
        s = np.clip(dec.eigvals[:r], 0.0, None)
        eff = w * s
        powers = np.where(eff > 1e-300, np.maximum(1.0 - a / np.maximum(eff, 1e-300), 0.0), 0.0)
        left = wis @ dec.eigvecs[:, :r]
        return left, np.sqrt(powers)

    def traces(left, gains):
        f = left * gains[None, :]
        gram = f @ f.conj().T
        return np.array([np.trace(om @ gram).real for om, _ in terms])

    if m == 1:
        alpha = _bisect_single(lambda a: traces(*build(np.array([a])))[0],
                               budgets[0], tol)
        alpha = np.array([alpha])
        converged = True
    else:
        if alpha0 is None:
            alpha0 = 1.0 / (m * budgets)

        def gap(a):
            # clipped to +-10 budgets: a multiplier projected to zero makes
            # the regularized whitening blow its antenna power up by ~1e10,
            # and an unclipped subgradient step would catapult the multiplier
            raw = traces(*build(a)) - budgets
            return np.clip(raw, -10.0 * budgets, 10.0 * budgets)

        step0 = 1.0 / max(np.linalg.norm(om, 2) for om, _ in terms)
        alpha, converged = subgradient_weights(gap, alpha0, budgets=budgets,
                                               step0=step0, tol=tol)
    left, gains = build(alpha)
    tr = traces(left, gains)
    used = tr > 1e-300
    if np.any(used):
        factor = np.sqrt(np.min(budgets[used] / tr[used]))
        gains = gains * factor
    return _assemble(left, gains, alpha=alpha, converged=converged)


def _bisect_single(trace_of_alpha, budget, tol: Tolerances):
    """Exact α for one weighted term: realized trace is decreasing in α."""
    lo = hi = 1.0
    t1 = trace_of_alpha(1.0)
    if t1 > budget:
        for _ in range(200):
            hi *= 2.0
            if trace_of_alpha(hi) <= budget:
                break
    elif t1 < budget:
        for _ in range(200):
            lo *= 0.5
            if trace_of_alpha(lo) >= budget:
                break
        else:
            return lo
    else:
        return 1.0
    for _ in range(tol.bisection_iters):
        mid = 0.5 * (lo + hi)
        if trace_of_alpha(mid) > budget:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def verify_solution(solution, constraint, tol: Tolerances = DEFAULT) -> float:
    """Constraint gap of the realized dense matrix (<= 0 means feasible)."""
    return constraint_gap(constraint, solution.dense)
