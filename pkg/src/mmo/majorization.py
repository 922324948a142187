"""Additive and multiplicative majorization predicates.

Used as test oracles for the rotation optimality results: equal-diagonal
solutions are the minimizers of (additively/multiplicatively) Schur-convex
functions, so the achieved diagonal vectors must sit at the bottom of these
partial orders.
"""

import numpy as np

from .exceptions import InvalidInputError

__all__ = ["majorizes_additive", "majorizes_multiplicative"]


def majorizes_additive(x, y, rel_tol=1e-9) -> bool:
    """True iff y majorizes x additively (x ≺+ y).

    All partial sums of descending-sorted x must not exceed those of y, with
    equal totals (within ``rel_tol`` relative).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError("vectors must be 1-D with equal lengths")
    cx = np.cumsum(np.sort(x)[::-1])
    cy = np.cumsum(np.sort(y)[::-1])
    scale = max(1.0, float(np.max(np.abs(cx))), float(np.max(np.abs(cy))))
    if abs(cx[-1] - cy[-1]) > rel_tol * scale:
        return False
    return bool(np.all(cx[:-1] <= cy[:-1] + rel_tol * scale))


def majorizes_multiplicative(x, y, rel_tol=1e-9) -> bool:
    """True iff y majorizes x multiplicatively (x ≺× y); entries must be >= 0.

    Partial products of descending-sorted x must not exceed those of y, with
    equal total products (within ``rel_tol`` relative).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError("vectors must be 1-D with equal lengths")
    if np.any(x < 0) or np.any(y < 0):
        raise InvalidInputError("multiplicative majorization needs non-negative entries")
    px = np.cumprod(np.sort(x)[::-1])
    py = np.cumprod(np.sort(y)[::-1])
    scale = np.maximum(np.abs(py), 1e-300)
    if abs(px[-1] - py[-1]) > rel_tol * max(scale[-1], abs(px[-1])):
        return False
    return bool(np.all(px[:-1] <= py[:-1] + rel_tol * scale[:-1]))
