from .builders import (
    KINDS,
    Formulation,
    FormulationResult,
    build,
    build_quad_surface,
    build_thinned_curves,
    build_triangle_surface,
    extract_solution,
    read_result,
    solve_formulation,
)
from .milp import (
    BACKENDS,
    HighsAdapter,
    MilpModel,
    MilpResult,
    ScipAdapter,
    SolverAdapter,
    emulate_sos,
    get_adapter,
    to_lp_format,
)
