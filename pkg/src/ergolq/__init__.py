"""Stationary and ergodic linear-quadratic control with random coefficients."""

from .closedloop import (
    BurnInResult,
    DatkoFit,
    FeedbackLaw,
    burn_in_init,
    continue_paths,
    datko_fit,
    moment_cost,
    stationarity_check,
    stationary_moments_constant,
    synthesize_feedback,
)
from .costate import CostateSolution, affine_term, solve_stationary_costate
from .ergodic import (
    SweepReport,
    discounted_spec,
    discounted_value,
    optimality_gap,
    solve_discounted,
    stationary_cost_formula,
    vanishing_discount_sweep,
)
from .model import (
    BoundedMatrix,
    Dims,
    FactorDynamics,
    FactorModel,
    ProblemSpec,
    constant_spec,
    load_spec,
    save_spec,
    validate,
)
from .riccati import (
    FactorGrid,
    GainSet,
    RiccatiSolution,
    gains,
    minimal_stationary,
    residual_norm,
    solve_finite_horizon,
    stability_certificate,
)
from .simulate import (
    CostEstimate,
    LinearFeedback,
    SimConfig,
    discounted_cost_mc,
    simulate_paths,
    stationary_cost_mc,
)

__version__ = "0.1.0"
