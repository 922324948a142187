"""The three right-unitarily-invariant power constraint families.

* ``Shaping``  — X X^H ⪯ R_s (transmit covariance bounded by a target).
* ``Joint``    — Tr(X X^H) ≤ P together with the spectral cap X X^H ⪯ τ I.
* ``Weighted`` — Tr(Ω_i X X^H) ≤ P_i for PSD weights Ω_i; subsumes the sum
  power (Ω = I) and per-antenna (Ω_i = e_i e_i^T) models.

Every family satisfies ψ(X Q) = ψ(X) for unitary Q, which is what lets the
solvers factor X = F Q and optimize the two parts separately.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInputError, NotPsdError
from .tolerances import DEFAULT, Tolerances

__all__ = [
    "Shaping",
    "Joint",
    "Weighted",
    "sum_power",
    "per_antenna",
    "constraint_gap",
    "is_feasible",
]


def _as_psd(m, name, tol: Tolerances = DEFAULT):
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"{name} must be a square matrix")
    if not np.all(np.isfinite(m.real)) or not np.all(np.isfinite(m.imag)):
        raise InvalidInputError(f"{name} has non-finite entries")
    m = 0.5 * (m + m.conj().T)
    w = np.linalg.eigvalsh(m)
    if w[0] < -tol.psd * max(w[-1], 1.0):
        raise NotPsdError(f"{name} has eigenvalue {w[0]:.3e}, not PSD")
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class Shaping:
    shape: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shape", _as_psd(self.shape, "shaping matrix"))


@dataclass(frozen=True)
class Joint:
    total: float
    cap: float

    def __post_init__(self):
        if not (np.isfinite(self.total) and self.total > 0):
            raise InvalidInputError("joint constraint needs total > 0")
        if not (np.isfinite(self.cap) and self.cap > 0):
            raise InvalidInputError("joint constraint needs cap > 0")


@dataclass(frozen=True)
class Weighted:
    terms: tuple = field(default_factory=tuple)  # ((Omega_i, P_i), ...)

    def __post_init__(self):
        if not self.terms:
            raise InvalidInputError("weighted constraint needs at least one term")
        checked = []
        n = None
        for omega, budget in self.terms:
            omega = _as_psd(omega, "weight matrix")
            if n is None:
                n = omega.shape[0]
            elif omega.shape[0] != n:
                raise InvalidInputError("weight matrices differ in size")
            if not (np.isfinite(budget) and budget > 0):
                raise InvalidInputError("weighted budgets must be positive")
            checked.append((omega, float(budget)))
        object.__setattr__(self, "terms", tuple(checked))

    @property
    def budgets(self):
        return np.array([p for _, p in self.terms])


def sum_power(total, n):
    """Sum power constraint Tr(X X^H) <= total as a single weighted term."""
    return Weighted(((np.eye(n), float(total)),))


def per_antenna(budgets):
    """Per-antenna power limits as rank-one weighted terms."""
    budgets = np.asarray(budgets, dtype=float)
    n = budgets.size
    terms = []
    for i, p in enumerate(budgets):
        e = np.zeros((n, n))
        e[i, i] = 1.0
        terms.append((e, float(p)))
    return Weighted(tuple(terms))


def constraint_gap(constraint, x) -> float:
    """Worst absolute constraint violation of X (<= 0 means feasible)."""
    x = np.asarray(x, dtype=complex)
    gram = x @ x.conj().T
    if isinstance(constraint, Shaping):
        diff = gram - constraint.shape
        return float(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))[-1])
    if isinstance(constraint, Joint):
        trace_gap = float(np.trace(gram).real) - constraint.total
        eig_gap = float(np.linalg.eigvalsh(gram)[-1]) - constraint.cap
        return max(trace_gap, eig_gap)
    if isinstance(constraint, Weighted):
        gaps = [float(np.trace(omega @ gram).real) - p
                for omega, p in constraint.terms]
        return max(gaps)
    raise InvalidInputError(f"unknown constraint type {type(constraint)!r}")


def is_feasible(constraint, x, slack=None, tol: Tolerances = DEFAULT) -> bool:
    if slack is None:
        slack = tol.feasibility
    return constraint_gap(constraint, x) <= slack
