"""Simulation-extrapolation estimation for single-index regression.

Covariates observed with additive Gaussian noise bias the index and link
estimates of a single-index model; this package remeasures the surrogates
at a grid of inflated noise levels, refits by local linear smoothing and
Fisher scoring on the unit sphere, and extrapolates the noise level back
to zero measurement error.
"""

from .bandwidth import (
    BandwidthSet,
    cv_bandwidth,
    cv_bandwidth_set,
    cv_scores,
    default_candidates,
    rule_of_thumb,
    select_candidate,
)
from .data import Dataset, MeasurementErrorSpec
from .errors import (
    ConfigError,
    DataError,
    DegenerateIndex,
    EstimationError,
    MissingColumn,
    OutOfBall,
    ParseError,
    RankDeficient,
    SingularDesign,
    SingularFit,
    SingularInformation,
    SisimexError,
    TooManyFailures,
    ZeroSlope,
)
from .io import error_spec_from_replicates, load_dataset, save_dataset
from .mc import (
    CellResult,
    DgpSpec,
    LinkStats,
    McReport,
    MethodStats,
    angle_grid_search,
    generate,
    quadratic_link,
    replication_seed,
    rmse,
    run_study,
)
from .simex import (
    ExtrapolantFit,
    LinkEstimate,
    SimexBetaResult,
    SimexConfig,
    SimexDiagnostics,
    default_lambda_grid,
    default_link_grid,
    estimate_beta,
    estimate_link,
    pseudo_noise_rng,
    quadratic_extrapolate,
    remeasure,
)
from .smoothing import (
    KernelFamily,
    KernelSpec,
    LocalLinearFit,
    batch_local_linear,
    kernel_eval,
    kernel_moments,
    local_linear_fit,
    smoother_weights,
)
from .solver import (
    SolverConfig,
    SolverResult,
    estimating_function,
    initial_beta,
    least_squares_objective,
    solve,
)
from .sphere import (
    ReducedIndex,
    UnitIndex,
    align_sign,
    expand_index,
    expand_jacobian,
    reduce_index,
    unit_index_from,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
