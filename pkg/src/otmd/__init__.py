"""Entropy-regularized optimal transport solvers and benchmarks."""

from .core import (
    ApproxParams,
    CostMatrix,
    EntropicProblem,
    OTError,
    SimplexVector,
    TransportPlan,
    derive_params,
    entropy,
    marginal_residual,
    objective_value,
    smooth_marginals,
    transport_cost,
    validate_simplex,
)
from .counting import OpCounter
from .pdasmd import (
    ApproxResult,
    SolveResult,
    SolverConfig,
    approximate_ot,
    pdasmd_batch_solve,
    pdasmd_solve,
)
from .rounding import round_to_feasible
from .semidual import (
    DualPoint,
    NormKind,
    SmoothnessProfile,
    primal_from_dual,
    semidual_component_grad,
    semidual_full_grad,
    semidual_value,
    smoothness_constants,
    tau_of_lambda,
)
from .sinkhorn import (
    ScalingPair,
    Side,
    approximate_ot_classical,
    approximate_ot_stochastic,
    increasing_probability,
    kl_violation,
    plan_from_scalings,
    sinkhorn_solve,
    sinkhorn_step,
    stochastic_sinkhorn_solve,
)
from .bench import (
    ExperimentRecord,
    ImageMarginal,
    exact_ot_small,
    fit_loglog_slope,
    gen_synthetic_image,
    image_pair_to_problem,
    make_instance,
    run_batch_experiment,
    run_eps_experiment,
    run_scaling_experiment,
)

__version__ = "0.1.0"
