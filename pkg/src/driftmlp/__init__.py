"""Monte Carlo solver for finite-horizon drift control of reflected
Brownian motion on the nonnegative orthant.

The estimator is a full-history recursive multilevel scheme built on a
reference diffusion that is simulated either exactly (independent
reflected coordinates, no time discretization) or by projected Euler
steps.  Value and gradient are estimated together; the gradient feeds
a bang-bang policy readout.
"""

from .errors import (
    DriftmlpError,
    InvalidArgumentError,
    NumericalFailureError,
    UnsupportedCombinationError,
)
from .streams import RngStream
from .problem import (
    ProblemSpec,
    ReferenceProcess,
    WeightFn,
    hamiltonian_bar,
    hamiltonian_general,
    policy_readout,
    weight,
    zero_terminal,
    TERMINAL_COSTS,
)
from .exact import (
    CoordinateTriple,
    SampleTuple,
    assemble_tuple,
    normalizing_constant,
    sample_coordinate_triple,
    sample_hitting_time,
    sample_meander_at,
    sample_random_time,
    sample_rbm_marginal_from_zero,
)
from .skorokhod import (
    DerivativeState,
    DiscretePath,
    WeightedPathResult,
    complementarity_residual,
    euler_reference_step,
    simulate_weighted_path,
    skorokhod_map_1d,
    skorokhod_map_orthant,
)
from .engine import (
    MlpConfig,
    MlpEstimate,
    PicardDiagnostics,
    expected_sampler_calls,
    mlp_estimate,
    mlp_estimate_family,
    mlp_estimate_variance_reduced,
    picard_reference_iteration,
    summarize_replicates,
)
from .benchmark import (
    BaselineResult,
    PolicyCell,
    build_open_chain,
    grid_states,
    lc_optimality_check,
    least_control_cost,
    least_control_paths,
    open_chain_control_matrix,
    policy_grid,
    policy_grid_rows,
    switching_curve_reference,
    value_difference_rows,
)

__version__ = "0.1.0"

__all__ = [
    "DriftmlpError",
    "InvalidArgumentError",
    "NumericalFailureError",
    "UnsupportedCombinationError",
    "RngStream",
    "ProblemSpec",
    "ReferenceProcess",
    "WeightFn",
    "hamiltonian_bar",
    "hamiltonian_general",
    "policy_readout",
    "weight",
    "zero_terminal",
    "TERMINAL_COSTS",
    "CoordinateTriple",
    "SampleTuple",
    "assemble_tuple",
    "normalizing_constant",
    "sample_coordinate_triple",
    "sample_hitting_time",
    "sample_meander_at",
    "sample_random_time",
    "sample_rbm_marginal_from_zero",
    "DerivativeState",
    "DiscretePath",
    "WeightedPathResult",
    "complementarity_residual",
    "euler_reference_step",
    "simulate_weighted_path",
    "skorokhod_map_1d",
    "skorokhod_map_orthant",
    "MlpConfig",
    "MlpEstimate",
    "PicardDiagnostics",
    "expected_sampler_calls",
    "mlp_estimate",
    "mlp_estimate_family",
    "mlp_estimate_variance_reduced",
    "picard_reference_iteration",
    "summarize_replicates",
    "BaselineResult",
    "PolicyCell",
    "build_open_chain",
    "grid_states",
    "lc_optimality_check",
    "least_control_cost",
    "least_control_paths",
    "open_chain_control_matrix",
    "policy_grid",
    "policy_grid_rows",
    "switching_curve_reference",
    "value_difference_rows",
    "__version__",
]
