"""Central numeric tolerance settings.

Every module pulls its default tolerances from :data:`DEFAULT`, so a single
record documents (and can override) all the magic numbers used by the
decompositions, water-filling, subgradient and alternating solvers.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # decompositions
    hermitian: float = 1e-10          # allowed asymmetry before symmetrizing
    reconstruction: float = 1e-10     # EVD/SVD reconstruction residual (relative)
    tie_gap: float = 1e-10            # eigenvalue gap treated as degenerate
    psd: float = 1e-6                 # relative negative-eigenvalue rejection
    psd_clip: float = 1e-10           # absolute clamp for tiny negative eigenvalues
    sqrt_residual: float = 1e-9

    # water-filling
    bisection_iters: int = 200
    kkt: float = 1e-8

    # weighted-constraint subgradient
    subgradient_max_iter: int = 5000
    constraint_rel: float = 1e-6      # max allowed Tr(Omega_i F F^H) - P_i, relative
    comp_slack: float = 1e-4          # |alpha_i * gap_i| after convergence

    # conditioning guards
    cond_limit: float = 1e12
    reg_scale: float = 1e-10
    denominator_guard: float = 1e-6   # robust-structure trace must stay <= 1 - guard

    # alternating solvers
    rel_tol: float = 1e-6
    max_iter: int = 200
    monotone_slack: float = 1e-8

    # feasibility checks
    feasibility: float = 1e-8
    factored_product: float = 1e-12


DEFAULT = Tolerances()
