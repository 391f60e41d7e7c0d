"""Optimal stopping on finite chains and 1-D diffusions.

Snell envelopes, the Doob-Meyer decomposition and its density with respect
to the gains compensator, martingale dual bounds, and the scale-function /
concave-majorant construction with smooth-fit diagnostics.
"""

from .chain_model import (
    ChainModel,
    PayoffSpec,
    build_random_walk,
    call_payoff,
    compensated_increments,
    discrete_generator,
    discretize_diffusion,
    payoff_from_function,
    power_payoff,
    put_payoff,
)
from .diffusion_scale import (
    DiffusionSpec,
    HarmonicPair,
    TransformedPayoff,
    brownian,
    chain_harmonic_pair,
    gbm,
    generator_residual,
    harmonic_pair,
    hitting_decomposition,
    scale_function,
    transform_payoff,
)
from .doob_meyer import (
    ApproxReport,
    BoundReport,
    Decomposition,
    decompose,
    increment_bound_check,
    mu_density,
    partition_approximation,
)
from .dual_bounds import (
    ControlledTriple,
    DualEstimate,
    MartingaleSpec,
    controlled_trajectory,
    dual_bound_exact,
    dual_bound_mc,
    enumerate_paths,
    martingale_from_function,
)
from .errors import (
    AbsoluteContinuityViolated,
    NonMonotoneError,
    NumericalError,
    PathCapExceeded,
    ProbabilityOutOfRange,
    SnellkitError,
    ValidationError,
)
from .majorant_smoothfit import (
    MajorantSolution,
    PiecewiseLinear,
    SmoothFitReport,
    concave_majorant,
    estimate_boundary,
    smooth_fit_check,
    solve_by_majorant,
    stopping_region,
    value_from_majorant,
)
from .snell_engine import (
    PerpetualSolution,
    SnellSolution,
    StoppingRule,
    evaluate_rule,
    rule_values,
    solve_perpetual,
    solve_snell,
    stopping_rule,
)

__version__ = "0.1.0"

__all__ = [
    "AbsoluteContinuityViolated",
    "ApproxReport",
    "BoundReport",
    "brownian",
    "build_random_walk",
    "call_payoff",
    "chain_harmonic_pair",
    "ChainModel",
    "compensated_increments",
    "concave_majorant",
    "controlled_trajectory",
    "ControlledTriple",
    "decompose",
    "Decomposition",
    "DiffusionSpec",
    "discrete_generator",
    "discretize_diffusion",
    "dual_bound_exact",
    "dual_bound_mc",
    "DualEstimate",
    "enumerate_paths",
    "estimate_boundary",
    "evaluate_rule",
    "gbm",
    "generator_residual",
    "harmonic_pair",
    "HarmonicPair",
    "hitting_decomposition",
    "increment_bound_check",
    "MajorantSolution",
    "martingale_from_function",
    "MartingaleSpec",
    "mu_density",
    "NonMonotoneError",
    "NumericalError",
    "partition_approximation",
    "PathCapExceeded",
    "payoff_from_function",
    "PayoffSpec",
    "PerpetualSolution",
    "PiecewiseLinear",
    "power_payoff",
    "ProbabilityOutOfRange",
    "put_payoff",
    "rule_values",
    "scale_function",
    "smooth_fit_check",
    "SmoothFitReport",
    "SnellkitError",
    "SnellSolution",
    "solve_by_majorant",
    "solve_perpetual",
    "solve_snell",
    "stopping_region",
    "stopping_rule",
    "StoppingRule",
    "transform_payoff",
    "TransformedPayoff",
    "ValidationError",
    "value_from_majorant",
]
