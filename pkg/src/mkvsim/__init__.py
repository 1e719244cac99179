"""Simulation and order-testing toolkit for mean-field SDEs with common noise."""

from .grid import AffinePath, TimeGrid, interpolate_affine, interpolate_functional
from .noise import NoisePlan, derive_seed
from .coefficients import (
    CoefficientSet,
    MeasureHandle,
    MODEL_BUILDERS,
    cfs,
    cfs_loadings,
    cfs_sigmoid,
    custom_affine,
    gbm,
    linear_meanfield,
    make_coefficients,
)
from .sde import (
    ParticleEnsemble,
    SimulationBlowupError,
    read_ensemble_binary,
    simulate_particle_system,
    simulate_truncated,
    simulate_with_increments,
    solo_mkv_path,
    truncate_gaussian,
    truncation_threshold,
    write_ensemble_binary,
    write_ensemble_csv,
)
from .measures import (
    EmpiricalMeasure1D,
    EmpiricalMeasureND,
    MeasurePath,
    load_samples_csv,
    stop_loss,
    sup_wasserstein,
    tvar,
    wasserstein_p_1d,
    wp_to_dirac0,
)
from .order import (
    OrderReport,
    ProbeFamily,
    ProbeResult,
    SystemSpec,
    block_matrix_order_check,
    check_conditional,
    check_cv_1d,
    check_icv_1d,
    functional_probe,
    matrix_partial_order,
)
from .systemic import (
    CfsParams,
    EsdEstimate,
    SweepConfig,
    calibrate_discretization_allowance,
    cfs_mean_paths,
    esd,
    esd_analytic_oracle,
    figure1_sweep,
    mean_variance_rate,
    simulate_cfs,
    write_sweep_csv,
)
from .control_lq import FeedbackControl, LqSpec, compare_values, evaluate_cost
from .convergence import StrongRateResult, aggregate_increments, strong_rate_study

__version__ = "0.1.0"
