"""2D particle packing / initialization for boundary-integral SPH."""

__version__ = "0.1.0"

from .geometry import (
    BoundaryError,
    BoundarySet,
    contains,
    nearest_boundary,
    parse_boundary,
    refine_segments,
    seed_grid,
)
from .kernel import KernelSpec, grad_w, w
from .neighbors import NeighborIndex, select_near_boundary
from .packing import (
    IterationRecord,
    Packer,
    PackingConfig,
    PackResult,
    run_packing,
)
from .particles import ParticleSet
from .wallgamma import (
    GammaResult,
    WallEvaluator,
    gamma,
    gamma_gradients,
    gamma_halfplane,
    grad_gamma_segment,
)
from .wcsph import (
    DropResult,
    FluidConfig,
    FluidSolver,
    FluidState,
    HydroResult,
    NumericalAbort,
    drop_oracle,
    eos,
    kinetic_energy,
    rms_errors,
    run_drop,
    run_hydrostatic,
    stable_dt,
)

__all__ = [
    "BoundaryError",
    "BoundarySet",
    "DropResult",
    "FluidConfig",
    "FluidSolver",
    "FluidState",
    "GammaResult",
    "HydroResult",
    "IterationRecord",
    "KernelSpec",
    "NeighborIndex",
    "NumericalAbort",
    "Packer",
    "PackingConfig",
    "PackResult",
    "ParticleSet",
    "WallEvaluator",
    "contains",
    "drop_oracle",
    "eos",
    "gamma",
    "gamma_gradients",
    "gamma_halfplane",
    "grad_gamma_segment",
    "grad_w",
    "kinetic_energy",
    "nearest_boundary",
    "parse_boundary",
    "refine_segments",
    "rms_errors",
    "run_drop",
    "run_hydrostatic",
    "run_packing",
    "seed_grid",
    "select_near_boundary",
    "stable_dt",
    "w",
]
