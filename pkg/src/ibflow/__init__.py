"""Cartesian-grid incompressible Navier-Stokes solver with implicit immersed
boundary forcing, specialized for internal flows."""

__version__ = "0.1.0"

from .grid import (BoxDomain, EulerianGrid, FieldState, build_grid,
                   crop_active_region, divergence, gradient, laplacian)
from .surface import (LagrangianCloud, TriangleSurface, facet_stats,
                      load_surface, point_in_solid, resample_uniform)
from .kernel import (CouplingMatrix, build_coupling, delta_1d, interpolate,
                     kernel_3d, spread)
from .ibforce import (ForceSystem, assemble_A, assemble_B, build_force_system,
                      correct_velocity, solve_forces)
from .ipcs import (BoundaryConditionSet, BoundaryPatch, FluidProperties,
                   Stepper, TimeControls, steady_monitor)
from .post import (DerivativeOperators, ErrorReport, WSSField, build_dcpse,
                   error_norms, poiseuille_exact, wall_shear_stress)
from .config import CaseConfig, load_config, save_config
from .runner import CaseResult, convergence_study, run_case
