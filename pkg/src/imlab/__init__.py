"""Desk-scale laboratory for inertial manifolds of 1D advection-reaction-
diffusion systems: the nonlocal change of variables, the transformed flow
with small advection, the weighted-space backward fixed point, and the
Neumann / gradient-nonlinearity reductions."""

from .spectral import (
    BasisKind,
    Grid,
    SpectralBasis,
    SpectralField,
    analyze,
    derivative_field,
    eigenvalue,
    gap_difference,
    gap_ratio,
    get_basis,
    norms,
    project_high,
    project_low,
    random_field,
    synthesize,
)
from .nonlin import (
    GradientNonlinearity,
    Nonlinearity,
    burgers_cutoff,
    constant_matrix_nonlinearity,
    coupled_2d,
    gradient_product,
    make_cutoff_nonlinearity,
    zero_nonlinearity,
)
from .dynamics import (
    MonitorReport,
    Trajectory,
    dissipative_monitor,
    evolve,
    measure_absorbing_radius,
    rda_rhs,
    step_imex,
)
from .diffeo import (
    MatrixField,
    estimate_k0,
    forward_map,
    inverse_map,
    inverse_matrix,
    lipschitz_probe,
    solve_a_of_u,
    solve_a_of_v,
)
from .transform import (
    CutoffSpec,
    LipschitzReport,
    TransformedSystem,
    advection_residual,
    calibrate_cutoff,
    coeff_time_derivative,
    equivalence_check,
    measure_lipschitz,
    transformed_rhs,
    zero_order_term,
)
from .manifold import (
    GapReport,
    ManifoldGraph,
    PerronConfig,
    build_manifold,
    choose_parameters,
    invariance_residual,
    make_perron_config,
    manifold_graph_eval,
    perron_solve,
    resolvent_apply,
    resolvent_norm_report,
    spectral_gap_check,
    tracking_verify,
)
from .neumann import (
    EllipticConfig,
    ExtendedRdaSystem,
    ExtendedState,
    TransformedExtendedSystem,
    derived_rhs,
    embed,
    nonlocal_rhs,
    smoothing_dx_u,
    smoothing_dx_w,
    upsilon_solve,
)
from .space import Block, ProductSpace, dirichlet_space, neumann_space

__version__ = "0.1.0"
