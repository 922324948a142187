"""Multi-variable matrix-monotonic optimization toolkit.

Closed-form precoder/compressor/forwarding-matrix structures under shaping,
joint-power and multiple-weighted-power constraints, three application
solvers (MU-MIMO uplink, distributed sensor fusion, robust multi-hop AF
relaying), an independent numerical oracle, and a Monte-Carlo simulation
harness.
"""

from .constraints import Joint, Shaping, Weighted, per_antenna, sum_power
from .linalg import hermitian_sqrt, sorted_evd, sorted_svd
from .majorization import majorizes_additive, majorizes_multiplicative
from .structures import (StructuredSolution, solve_joint, solve_shaping,
                         solve_weighted, subgradient_weights)
from .tolerances import DEFAULT as DEFAULT_TOLERANCES
from .tolerances import Tolerances
from .waterfill import (WaterfillResult, allocate_concave, waterfill,
                        waterfill_capped, waterfill_floors)

__all__ = [
    "Joint", "Shaping", "Weighted", "per_antenna", "sum_power",
    "hermitian_sqrt", "sorted_evd", "sorted_svd",
    "majorizes_additive", "majorizes_multiplicative",
    "StructuredSolution", "solve_joint", "solve_shaping", "solve_weighted",
    "subgradient_weights",
    "Tolerances", "DEFAULT_TOLERANCES",
    "WaterfillResult", "allocate_concave", "waterfill", "waterfill_capped",
    "waterfill_floors",
]

__version__ = "0.1.0"
