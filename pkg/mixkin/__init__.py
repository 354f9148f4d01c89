"""
mixkin — Mixed semi-Lagrangian / conservative finite-difference Hermite-WENO
solvers for the 2D guiding-centre and 4D drift-kinetic models on Cartesian
grids with embedded boundaries.

Provides:
  - Uniform grids, node fields and quadrature (grid)
  - Embedded domains with ghost-point normal extrapolation (geometry)
  - Hermite-WENO interpolation and flux kernels (hweno)
  - Semi-Lagrangian and RK4 finite-difference steppers, Strang splitting (transport)
  - Embedded Poisson, Newton steady state and quasi-neutrality solvers (elliptic)
  - Scenario setup for the D-shape and ITG experiments (models)
  - Conserved quantities and error monitors (diagnostics)
  - TOML configuration and run orchestration (app)
"""

from .errors import (
    CFLError,
    ConfigError,
    ConvergenceError,
    GeometryError,
    MixkinError,
    NonFiniteError,
    SnapshotError,
)
from .grid import Axis, Field, Grid, line_view, reduce_integral, write_line
from .geometry import (
    Disk,
    DShape,
    EmbeddedDomain,
    NodeClass,
    Polygon,
    build_ghost_stencils,
    classify,
    embed,
    project_to_boundary,
)
from .hweno import derivative_4th, flux_minus, flux_plus, sl_interpolate
from .transport import (
    Phase,
    StepperState,
    TransportSetup,
    VelocityField,
    check_switch,
    fd_rhs_1d,
    rk4_step,
    sl_advect_1d,
    strang_step_dk,
)
from .elliptic import (
    EllipticProblem,
    NewtonState,
    QuasiNeutralitySolver,
    assemble,
    gradient,
    quasi_neutrality_solve,
    solve_linear,
    solve_newton_steady,
)
from .models import ITGParameters, build_profiles, init_itg, perturb_gc, xi2_of_point
from .diagnostics import DiagnosticsRecord, conserved_dk, conserved_gc, phi_amplitude, relative_error
from .store import read_snapshot, write_snapshot

__version__ = "0.1.0"

__all__ = [
    "MixkinError",
    "ConfigError",
    "GeometryError",
    "ConvergenceError",
    "CFLError",
    "SnapshotError",
    "NonFiniteError",
    "Axis",
    "Grid",
    "Field",
    "line_view",
    "write_line",
    "reduce_integral",
    "Disk",
    "DShape",
    "Polygon",
    "EmbeddedDomain",
    "NodeClass",
    "classify",
    "project_to_boundary",
    "build_ghost_stencils",
    "embed",
    "derivative_4th",
    "sl_interpolate",
    "flux_minus",
    "flux_plus",
    "VelocityField",
    "StepperState",
    "TransportSetup",
    "Phase",
    "sl_advect_1d",
    "fd_rhs_1d",
    "rk4_step",
    "strang_step_dk",
    "check_switch",
    "EllipticProblem",
    "NewtonState",
    "QuasiNeutralitySolver",
    "assemble",
    "solve_linear",
    "solve_newton_steady",
    "quasi_neutrality_solve",
    "gradient",
    "ITGParameters",
    "build_profiles",
    "init_itg",
    "perturb_gc",
    "xi2_of_point",
    "DiagnosticsRecord",
    "conserved_dk",
    "conserved_gc",
    "relative_error",
    "phi_amplitude",
    "read_snapshot",
    "write_snapshot",
]
