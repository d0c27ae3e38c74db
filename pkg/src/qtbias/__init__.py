"""Biased quantum trajectories of a monitored qubit and their Fisher information."""

from .bias import (BiasSchedule, TiltedSchedule, bias_energy, build_tilted_schedule,
                   closed_form_g_squared, small_dt_tilted_kraus, tilted_schedule_for,
                   tilted_trajectory_probability)
from .collapse import (CollapseDataset, CollapseResult, CollapseSet, fit_exponents, measure,
                       measure_known, quality_factor, read_collapse_csv, rescale)
from .collision import (KrausPair, ModelParams, apply_channel, build_hamiltonian,
                        completeness_defect, exact_kraus, first_order_kraus)
from .config import ExperimentConfig, config_hash, dump_config, parse_config
from .dynamics import (collision_limit_error, integrate_lme, population_deviation, sample_sse,
                       sse_ensemble)
from .optimize import (local_bias_pattern, run_global, run_local, select_max_precision_trajectory,
                       sweep_bias_strength)
from .trajectory import (FIEstimate, TrajectoryRecord, dlogp_domega, estimate_fi_mc,
                         exact_fi_enumerate, fm_histogram, sample_batch, sample_trajectory,
                         trajectory_logprob, trajectory_precision)

__version__ = "0.1.0"
