"""Trajectory reconstruction of moving acoustic point sources.

Two-stage pipeline: a per-period direct-sampling sweep gives coarse source
locations, which then seed and anchor per-period Metropolis-Hastings chains
under an approximate (static-kernel) forward model.
"""

from .adsm import (
    CoarsePath,
    IndicatorField,
    extract_peaks,
    indicator,
    probe_field,
    run_adsm,
    sweep,
)
from .bayes import (
    Chain,
    GaussianJoint,
    NoiseModel,
    Prior,
    approx_forward,
    batch_means_se,
    gaussian_condition,
    log_posterior,
    mh_chain,
    run_adsm_mcmc,
    run_uniform_mcmc,
)
from .core import (
    AdsmOptions,
    McmcOptions,
    Pulse,
    SamplingGrid,
    ScenarioConfig,
    SensorArray,
    TimeGrid,
    Trajectory,
    build_sensor_set,
    read_config,
    ricker,
    trajectory_eval,
    write_config,
)
from .experiments import (
    PathMetrics,
    PipelineResult,
    Scenario,
    build_scenario,
    path_error,
    run_pipeline,
    true_positions,
)
from .forward import (
    FieldRecord,
    add_noise,
    lw_field,
    point_source_field,
    quasistatic_field,
    read_record,
    retarded_time,
    simulate_record,
    write_record,
)

__version__ = "0.1.0"
