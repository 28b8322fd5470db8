"""Estimate the Brownian dimension of a multivariate Itô process from discrete observations."""

from .minors import minor_sums, minor_sums_enum, numerical_rank
from .pathdata import SamplePath, load_csv, save_csv, subsample
from .estimators import EstimatorPanel, build_panel, lbar_n, xi_n, z_n
from .deciders import (ThresholdSchedule, DecisionReport, decide, decide_absolute,
                       decide_absolute_sup, decide_relative, decide_relative_prime,
                       decide_relative_sup, ci_test, ci_lbar)
from .simulator import make_model, simulate_euler, simulate_batch, osc_closed_form
from .oracle import CoeffPath, lbar_true, xi_true, s_true, rank_true, gamma_mc, gamma2_mc, z_true
from .experiment import ExperimentPlan, run_replications, power_estimate, ci_level_power, rate_check

__version__ = "0.1.0"
