"""Toolkit for synthesising discontinuous stabilising feedbacks from
cost-aware control Lyapunov functions, running the resulting sampled
closed loops, extracting their refinement limits, and numerically
certifying the stability and regulated-cost guarantees."""

from .bridge import (BridgeTables, add_delta_table, bridge_over, bridge_under,
                     build_bridge_tables, distance_comparison, r_of_delta,
                     schedule_delta)
from .certify import (CandidateMRF, CertReport, RateFunction,
                      certify_decrease, certify_distance_rate,
                      certify_omrf_local, compact_radius_table,
                      fit_distance_rate, fit_rate_gamma)
from .core import (ControlSetDesc, ControlSystem, MonotoneTable, Partition,
                   SamplingRun, SystemBounds, TargetDesc, distance_to_target,
                   make_partition, min_hamiltonian)
from .euler import EulerLimit, check_euler_cost, check_euler_stability, euler_limit
from .feedback import Feedback, feedback_margin, synthesize_feedback
from .regularize import (RegularityEstimates, alpha_schedule, build_psi,
                         build_semiconcave_mrf, check_halved_decrease,
                         inf_convolution, load_mrf_grid, save_mrf_grid)
from .simulate import (KLEnvelope, check_cost_bound, check_interval_decrease,
                       check_min_transit, check_rR_stability, check_time_bound,
                       fit_KL_beta, min_transit_time, sampling_trajectory,
                       stable_entry_time, telescoped_decrease)

__version__ = "0.1.0"

__all__ = [
    "BridgeTables", "CandidateMRF", "CertReport", "ControlSetDesc",
    "ControlSystem", "EulerLimit", "Feedback", "KLEnvelope", "MonotoneTable",
    "Partition", "RateFunction", "RegularityEstimates", "SamplingRun",
    "SystemBounds", "TargetDesc", "add_delta_table", "alpha_schedule",
    "bridge_over", "bridge_under", "build_bridge_tables", "build_psi",
    "build_semiconcave_mrf", "certify_decrease", "certify_distance_rate",
    "certify_omrf_local", "check_cost_bound", "check_euler_cost",
    "check_euler_stability", "check_halved_decrease",
    "check_interval_decrease", "check_min_transit", "check_rR_stability",
    "check_time_bound", "compact_radius_table", "distance_comparison",
    "distance_to_target", "euler_limit", "feedback_margin", "fit_KL_beta",
    "fit_distance_rate", "fit_rate_gamma", "inf_convolution", "load_mrf_grid",
    "make_partition", "min_hamiltonian", "min_transit_time", "r_of_delta",
    "sampling_trajectory", "save_mrf_grid", "schedule_delta",
    "stable_entry_time", "synthesize_feedback", "telescoped_decrease",
]
