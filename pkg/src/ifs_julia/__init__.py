"""Julia sets of quasiregular maps and semigroups built from planar conformal IFS attractors."""
from .ifs_core import (ConformalIFS, attractor_chaos_game, attractor_disk_cover,
                       build_separation_plan, iterate_system, load_ifs)
from .plane_geometry import AffineContraction, Disk, Mobius
from .quad_glue import build_quadratic, figure_eight, validate_containment
from .rendering import GridMask, PixelGrid, hausdorff_pixels
from .semigroup import build_generator, build_semigroup, julia_estimate_grid, run_orbit
from .uqr import build_uqr, check_strong_disk_osc, evaluate_uqr, plan_uqr, verify_uqr

__version__ = "0.1.0"

__all__ = [
    "AffineContraction", "ConformalIFS", "Disk", "GridMask", "Mobius", "PixelGrid",
    "attractor_chaos_game", "attractor_disk_cover", "build_generator", "build_quadratic",
    "build_semigroup", "build_separation_plan", "build_uqr", "check_strong_disk_osc",
    "evaluate_uqr", "figure_eight", "hausdorff_pixels", "iterate_system",
    "julia_estimate_grid", "load_ifs", "plan_uqr", "run_orbit", "validate_containment",
    "verify_uqr",
]
