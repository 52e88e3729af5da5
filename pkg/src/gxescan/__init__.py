"""Robust identification of gene-environment interactions for censored
survival outcomes: Kaplan-Meier-weighted exponential squared loss with
lasso penalization, comparator estimators, and a simulation/evaluation
harness."""

from .data import (MarginalDesign, SurvivalDataset, build_design, load_csv,
                   normalize, sort_and_weight, write_csv)
from .robust import (MarginalFit, RobustTuning, SolutionSurface, TuningGrid,
                     cd_mm_fit, exp_sq_loss, fit_surface, grad_and_mm_curvature,
                     grid_from_data, kkt_check, refit_hierarchy)
from .baselines import (StuteFit, quantile_lasso_fit, stute_fit, wls_lasso_fit)
from .sim import (GroundTruth, ScenarioConfig, calibrate_censoring,
                  gen_covariates, gen_dataset, gen_error, gen_truth)
from .evaluate import (ExperimentReport, InteractionRanking, overlap_table,
                       rank_interactions, roc_auc, run_experiment,
                       select_top_k, stability_loo)

__version__ = "0.1.0"

__all__ = [
    "SurvivalDataset", "MarginalDesign", "sort_and_weight", "build_design",
    "normalize", "load_csv", "write_csv",
    "RobustTuning", "MarginalFit", "TuningGrid", "SolutionSurface",
    "exp_sq_loss", "grad_and_mm_curvature", "cd_mm_fit", "grid_from_data",
    "fit_surface", "kkt_check", "refit_hierarchy",
    "StuteFit", "wls_lasso_fit", "stute_fit", "quantile_lasso_fit",
    "ScenarioConfig", "GroundTruth", "gen_covariates", "gen_truth",
    "gen_error", "calibrate_censoring", "gen_dataset",
    "InteractionRanking", "ExperimentReport", "rank_interactions", "roc_auc",
    "run_experiment", "stability_loo", "overlap_table", "select_top_k",
    "__version__",
]
