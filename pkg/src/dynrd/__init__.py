"""Dynamic regression discontinuity estimation."""

from .aggregate import (AggregateResult, CohortEstimate, EstimationConfig, EventStudy,
                        aggregate_tau, cohort_weights, event_study, pretrend_study)
from .bandwidth import (BandwidthConfig, BandwidthPair, PluginPrelim, plugin_prelim,
                        select_b_mse, select_bandwidths, select_h_mse)
from .data import (EventSample, Panel, RdVectors, build_event_sample, load_panel,
                   make_pretrend_vectors, make_rd_vectors)
from .estimator import (NnConfig, RobustEstimate, adte_point, bias_estimate, estimate, nn_cov,
                        robust_variance, sharp_rd)
from .localpoly import Kernel, bias_factor, design_matrices, fit_one_side, kernel_weight
from .pretrend import PretrendResult, joint_test, pretrend_side
from .sim import DgpParams, McReport, monte_carlo, simulate_panel, true_theta

__version__ = "0.1.0"
