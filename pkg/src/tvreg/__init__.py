"""Total-variation regularized regression of tensor outcomes on scalars."""

from .analyze import (
    BootstrapBand,
    BoundCheck,
    CvReport,
    TheoryDiag,
    bootstrap_bands,
    compat_lower_bound,
    cross_validate,
    estimate_sigma,
    inverse_scaling_factor,
    lambda_recommend,
    oracle_bound_check,
)
from .fused import Fl1dProblem, GflResult, fused_lasso_1d, gfl_prox, kkt_residual
from .graphs import (
    IncidenceOperator,
    PenaltyGraph,
    TrailDecomposition,
    add_periodic_edges,
    build_chain,
    build_grid,
    connected_components,
    incidence,
    load_edge_list,
    trail_decompose,
)
from .simulate import (
    BenchReport,
    Scenario,
    baseline_ols,
    baseline_ols_tv,
    baseline_tv_ols,
    generate,
    mean_deviation,
    run_benchmark,
)
from .solver import (
    SolverConfig,
    TvtrFit,
    convergence_trace,
    eta_update,
    fit,
    mu_update,
    objective,
    theta_update,
)
from .tensor import (
    Dataset,
    RankDeficientError,
    SpanProjector,
    TensorLayout,
    gamma_from_theta,
    make_projector,
    mat_index,
    matricize,
    vec_index,
    vectorize,
)

__version__ = "0.1.0"
