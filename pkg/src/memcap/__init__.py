"""Capacity of discrete-time Gaussian MIMO channels with memory.

Closed-form water-filling under a total power budget, a dual-decomposition
solver for per-antenna / interference / harvesting constraints, and
brute-force reference implementations for cross-checking.
"""

__version__ = "0.1.0"

from .channel_model import (  # noqa: E402
    AdmissibilityReport,
    ChannelSpec,
    check_admissibility,
    noise_psd,
    transfer_function,
)
from .errors import (  # noqa: E402
    AllModesSingular,
    FormMismatch,
    Infeasible,
    MemcapError,
    MNotPositive,
    NoConvergence,
    NoiseIndefinite,
    NoiseSingular,
    NotRankOne,
    OracleBudgetExceeded,
    SpecError,
)
from .joint_solver import (  # noqa: E402
    ConstraintSet,
    JointOptions,
    JointResult,
    LinkConstraint,
    extract_rank_one,
    feasibility_check,
    inner_waterfill,
    solve_joint,
)
from .spectral import FrequencyGrid, SpectralField, trapezoid_grid, uniform_grid, whiten, whiten_grid  # noqa: E402
from .waterfill import (  # noqa: E402
    TpcResult,
    capacity_tpc,
    identity_channel_psd,
    optimal_psd,
    solve_tpc,
    solve_water_level,
)
