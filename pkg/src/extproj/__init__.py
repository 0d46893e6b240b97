"""Covering-map lifts, extension-projection networks and bistable approximation checks."""

from .covering import (CoveringMapSpec, LiftedCover, build_lift, check_lift, compute_patches,
                       assign_indices, eval_g, eval_h, verify_covering)
from .epnet import EPNetwork
from .errors import ExtProjError
from .metrics import bistable_report, hausdorff, wasserstein2_exact
from .simplicial import SimplicialComplex, build_complex, locate_point, star_subdivide_at

__all__ = [
    "CoveringMapSpec", "EPNetwork", "ExtProjError", "LiftedCover", "SimplicialComplex",
    "assign_indices", "bistable_report", "build_complex", "build_lift", "check_lift",
    "compute_patches", "eval_g", "eval_h", "hausdorff", "locate_point", "star_subdivide_at",
    "verify_covering", "wasserstein2_exact",
]
__version__ = "0.1.0"
