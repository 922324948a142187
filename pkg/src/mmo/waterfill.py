"""Water-filling power allocation and its capped/floored variants.

The classic problem solved here is

    maximize   sum_i log(1 + g_i p_i)
    subject to sum_i p_i <= P,  0 <= p_i (<= cap)

whose KKT solution equalizes ``1/g_i + p_i`` to a common water level mu on
active channels.  ``waterfill_floors`` generalizes the objective to
``log(a_i + g_i p_i)`` (per-mode noise floors), which is what the sensor
compressor allocation needs; ``allocate_concave`` handles arbitrary concave
per-stream utilities (relay objectives) by bisecting the shared marginal
value.  All water levels are located by bisection, which is monotone and
robust.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError
from .tolerances import DEFAULT, Tolerances

__all__ = [
    "WaterfillResult",
    "waterfill",
    "waterfill_capped",
    "waterfill_floors",
    "allocate_concave",
]


@dataclass(frozen=True)
class WaterfillResult:
    powers: np.ndarray
    water_level: float
    active_mask: np.ndarray


def _check_inputs(gains, budget):
    gains = np.asarray(gains, dtype=float)
    if gains.size == 0:
        raise InvalidInputError("empty gain vector")
    if not np.all(np.isfinite(gains)) or np.any(gains <= 0):
        raise InvalidInputError("gains must be finite and strictly positive")
    if not np.isfinite(budget) or budget <= 0:
        raise InvalidInputError("budget must be a positive number")
    return gains


def _bisect_level(alloc, target, lo, hi, iters):
    """Find mu with sum(alloc(mu)) == target; alloc must be non-decreasing."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if float(np.sum(alloc(mid))) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def waterfill(gains, budget, tol: Tolerances = DEFAULT) -> WaterfillResult:
    """Classic water-filling for ``sum log(1 + g_i p_i)`` under a sum budget."""
    gains = _check_inputs(gains, budget)
    inv = 1.0 / gains
    alloc = lambda mu: np.maximum(mu - inv, 0.0)
    mu = _bisect_level(alloc, budget, float(inv.min()), float(inv.max()) + budget,
                       tol.bisection_iters)
    powers = alloc(mu)
    # exact budget: distribute the float residue over active channels
    active = powers > 0
    resid = budget - powers.sum()
    if np.any(active) and resid > 0:
        powers[active] += resid / active.sum()
        mu = float((inv[active] + powers[active]).mean())
    return WaterfillResult(powers=powers, water_level=float(mu), active_mask=active)


def waterfill_capped(gains, budget, cap, tol: Tolerances = DEFAULT) -> WaterfillResult:
    """Water-filling with an additional per-channel cap ``p_i <= cap``.

    Capped channels sit at ``cap``; the remaining active channels share a
    common water level; channels whose inverse gain exceeds the level get
    zero power.  When the caps alone cannot absorb the budget every channel
    is simply capped.
    """
    gains = _check_inputs(gains, budget)
    if not np.isfinite(cap) or cap <= 0:
        raise InvalidInputError("cap must be a positive number")
    inv = 1.0 / gains
    n = gains.size
    if n * cap <= budget + 1e-15:
        powers = np.full(n, cap)
        mu = float(inv.max() + cap)
        return WaterfillResult(powers=powers, water_level=mu,
                               active_mask=np.ones(n, dtype=bool))
    alloc = lambda mu: np.clip(mu - inv, 0.0, cap)
    hi = float(inv.max()) + max(budget, cap) * (1 + 1e-12)
    mu = _bisect_level(alloc, budget, float(inv.min()), hi, tol.bisection_iters)
    powers = alloc(mu)
    free = (powers > 0) & (powers < cap)
    resid = budget - powers.sum()
    if np.any(free) and resid > 0:
        powers[free] += resid / free.sum()
        mu = float((inv[free] + powers[free]).mean())
    return WaterfillResult(powers=powers, water_level=float(mu),
                           active_mask=powers > 0)


def waterfill_floors(gains, floors, budget, cap=None,
                     tol: Tolerances = DEFAULT) -> WaterfillResult:
    """Maximize ``sum log(a_i + g_i p_i)`` under a sum budget (optional cap).

    ``floors`` are the per-mode constants a_i >= 0; ``floors = 1`` recovers
    :func:`waterfill`.  The KKT condition is ``a_i/g_i + p_i = mu`` on active
    uncapped channels.
    """
    gains = _check_inputs(gains, budget)
    floors = np.asarray(floors, dtype=float)
    if floors.shape != gains.shape or np.any(floors < 0):
        raise InvalidInputError("floors must be non-negative, same length as gains")
    base = floors / gains
    if cap is not None:
        if not np.isfinite(cap) or cap <= 0:
            raise InvalidInputError("cap must be a positive number")
        if gains.size * cap <= budget + 1e-15:
            powers = np.full(gains.size, float(cap))
            return WaterfillResult(powers=powers,
                                   water_level=float(base.max() + cap),
                                   active_mask=np.ones(gains.size, dtype=bool))
        alloc = lambda mu: np.clip(mu - base, 0.0, cap)
        hi = float(base.max()) + max(budget, cap) * (1 + 1e-12)
    else:
        alloc = lambda mu: np.maximum(mu - base, 0.0)
        hi = float(base.max()) + budget
    mu = _bisect_level(alloc, budget, float(base.min()), hi, tol.bisection_iters)
    powers = alloc(mu)
    free = powers > 0 if cap is None else (powers > 0) & (powers < cap)
    resid = budget - powers.sum()
    if np.any(free) and resid > 0:
        powers[free] += resid / free.sum()
        mu = float((base[free] + powers[free]).mean())
    return WaterfillResult(powers=powers, water_level=float(mu),
                           active_mask=powers > 0)


def _invert_marginal(uprime, target, caps, iters):
    """Per-stream p with uprime(p) == target on [0, cap] (uprime decreasing)."""
    lo = np.zeros_like(caps)
    hi = caps.copy()
    take_cap = uprime(caps) >= target  # marginal still above target at the cap
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = uprime(mid) > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    p = 0.5 * (lo + hi)
    p[take_cap] = caps[take_cap]
    p[uprime(np.zeros_like(caps)) <= target] = 0.0
    return p


def allocate_concave(uprime, budget, caps, tol: Tolerances = DEFAULT):
    """Budgeted allocation for arbitrary concave per-stream utilities.

    ``uprime(p)`` must return the elementwise marginal utility of a power
    vector and be strictly decreasing per stream.  Returns the powers that
    maximize ``sum_i u_i(p_i)`` subject to ``sum p <= budget, 0 <= p <= caps``
    by bisecting the common marginal value.
    """
    caps = np.asarray(caps, dtype=float)
    if float(caps.sum()) <= budget:
        return caps.copy()
    m_hi = float(np.max(uprime(np.zeros_like(caps)))) * (1 + 1e-12)
    m_lo = 0.0
    inner = 80
    for _ in range(tol.bisection_iters):
        mid = 0.5 * (m_lo + m_hi)
        p = _invert_marginal(uprime, mid, caps, inner)
        if float(p.sum()) > budget:
            m_lo = mid
        else:
            m_hi = mid
    p = _invert_marginal(uprime, m_hi, caps, inner)
    if float(p.sum()) > budget:
        p *= budget / float(p.sum())
    return p
