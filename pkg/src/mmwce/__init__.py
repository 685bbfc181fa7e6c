"""Overlapped-beam mmWave channel estimation: simulators, detectors and bounds."""

from .analysis import LinkBudget, min_energy_bound, pairwise_error_prob, pee_multistage, pee_single_stage
from .codebook import (
    default_design_K3_M4,
    generator,
    min_column_distance,
    refine_partition,
    search_optimal_design,
    synthesize_beamformer,
)
from .detector import MeasurementStack, detect, log_likelihood, posterior
from .estimators import EstimatorConfig, estimate_multipath, lmmse_alpha, run_multistage
from .grid import PathParams, SteeringAngleGrid, build_channel, measure, sample_paths, steering_vector
from .harness import SweepConfig, emit_bounds, emit_csv, run_sweep

__version__ = "0.1.0"
