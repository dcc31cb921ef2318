"""Experiment drivers, predictors and reports."""

from .experiments import (concentration_experiment, contraction_experiment, index_selection_experiment,
                          mixing_experiment, orbit_statistics_experiment, radial_ks, start_positions,
                          uniformization_experiment)
from .predict import (PhasePointQuery, TStarPrediction, check_selection_condition, empirical_deviation,
                      leapfrog_mixing_step, phase_boundary_asymptotic, phase_boundary_constant,
                      phase_boundary_ratio, phase_membership, phase_scan, predict_t_star, uniformization_bound)
from .report import ExperimentReport, Table

__all__ = [
    "concentration_experiment",
    "contraction_experiment",
    "index_selection_experiment",
    "mixing_experiment",
    "orbit_statistics_experiment",
    "uniformization_experiment",
    "radial_ks",
    "start_positions",
    "PhasePointQuery",
    "TStarPrediction",
    "check_selection_condition",
    "empirical_deviation",
    "leapfrog_mixing_step",
    "phase_boundary_asymptotic",
    "phase_boundary_constant",
    "phase_boundary_ratio",
    "phase_membership",
    "phase_scan",
    "predict_t_star",
    "uniformization_bound",
    "ExperimentReport",
    "Table",
]
