"""Continuous-discrete Gaussian smoothing for nonlinear SDEs.

Statistical linear regression of the drift, diffusion, and measurement
model against Gaussian marginals, continuous-discrete Gaussian filtering
with exact zeroth-order-hold discretization, Type I*/II/III smoothing
passes, and the iterated posterior-linearization outer loop, together
with the reentry and coordinated-turn tracking benchmarks and a Monte
Carlo metrics harness.
"""

from .discretize import DiscreteAffine, Mesh, propagate_moments, zoh_discretize
from .errors import (
    CdsmoothError,
    DegenerateCovariance,
    DegenerateInnovation,
    Diverged,
    NumericalFault,
)
from .filtering import (
    FilterTrajectory,
    KalmanUpdateReport,
    kalman_update,
    predict_interval,
    run_filter,
    wrap_angle,
)
from .gaussian import (
    CUBATURE,
    TAYLOR1,
    GaussianMarginal,
    MomentApproximator,
    approx_moments,
    cubature_points,
    symmetrize_psd,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    SimPath,
    TrialReport,
    block_rmse,
    chi2_mean_band,
    euler_maruyama,
    nees,
    run_experiment,
    sample_measurements,
)
from .iteration import (
    IterationConfig,
    IterationState,
    init_iteration,
    iterate_once,
    run_iterated,
)
from .linearize import (
    LinearDrift,
    LinearMeasurement,
    slr_drift,
    slr_measurement,
    trace_gap,
)
from .models import (
    Benchmark,
    CoordTurnParams,
    ModelSpec,
    ReentryParams,
    affine_model,
    benchmark,
    coordturn_benchmark,
    linear_benchmark,
    model_card,
    reentry_benchmark,
)
from .smoothing import (
    GainSegment,
    SmoothTrajectory,
    smooth_linear,
    smooth_type1star,
    smooth_type2,
    smooth_type3,
)

__version__ = "0.1.0"
