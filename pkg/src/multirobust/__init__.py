"""Multiply robust average treatment effect estimation.

The estimator consumes a pool of candidate propensity and outcome models,
reweights each treatment group so that every candidate's predictions average
out to their full-sample means, and contrasts the reweighted outcome means.
Consistency needs only one usable candidate anywhere in the pool.
"""

from .data import (
    AteEstimate,
    CausalDataset,
    ConstraintMatrices,
    EstimateDiagnostics,
    ModelPredictions,
    PredictionBundle,
    build_constraint_matrices,
    load_dataset_csv,
    load_predictions_csv,
    validate_dataset,
    write_predictions_csv,
)
from .el import ELCalibration, SideDiagnostics, calibrate, solve_side
from .errors import (
    AllReplicationsFailedError,
    DegeneratePSError,
    DimensionMismatchError,
    EmptyGroupError,
    ImbalanceExhaustedError,
    InvalidInputError,
    MultirobustError,
    NonBinaryTreatmentError,
    NonConvergenceError,
    NonFiniteError,
    OneClassOnlyError,
    OracleUnavailableError,
    SingularDesignError,
    SingularSystemError,
    TooManyFailuresError,
)
from .estimators import (
    EstimatorConfig,
    bootstrap_se,
    dr_estimates,
    estimate_general_ee,
    estimate_mr,
    general_ee_estimate,
    mr_estimate,
    mr_variance,
)
from .learners import (
    KfoldSelection,
    LearnerSpec,
    MlpNetwork,
    PredictionMetrics,
    auc_score,
    compute_metrics,
    fit_learner,
    fit_predict,
    geo_score,
    kfold_select,
    r2_score,
)
from .simulation import (
    ArmSummary,
    EstimatorArm,
    FUNCTION_BANK,
    OracleTruth,
    ReplicationRecord,
    SimulationReport,
    SimulationScenario,
    generate_dataset,
    pool_builder,
    run_monte_carlo,
    run_scenario_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "AteEstimate",
    "CausalDataset",
    "ConstraintMatrices",
    "EstimateDiagnostics",
    "ModelPredictions",
    "PredictionBundle",
    "build_constraint_matrices",
    "load_dataset_csv",
    "load_predictions_csv",
    "validate_dataset",
    "write_predictions_csv",
    "ELCalibration",
    "SideDiagnostics",
    "calibrate",
    "solve_side",
    "EstimatorConfig",
    "bootstrap_se",
    "dr_estimates",
    "estimate_general_ee",
    "estimate_mr",
    "general_ee_estimate",
    "mr_estimate",
    "mr_variance",
    "KfoldSelection",
    "LearnerSpec",
    "MlpNetwork",
    "PredictionMetrics",
    "auc_score",
    "compute_metrics",
    "fit_learner",
    "fit_predict",
    "geo_score",
    "kfold_select",
    "r2_score",
    "ArmSummary",
    "EstimatorArm",
    "FUNCTION_BANK",
    "OracleTruth",
    "ReplicationRecord",
    "SimulationReport",
    "SimulationScenario",
    "generate_dataset",
    "pool_builder",
    "run_monte_carlo",
    "run_scenario_sweep",
    "MultirobustError",
    "InvalidInputError",
    "EmptyGroupError",
    "NonBinaryTreatmentError",
    "NonFiniteError",
    "DimensionMismatchError",
    "NonConvergenceError",
    "SingularSystemError",
    "DegeneratePSError",
    "TooManyFailuresError",
    "OneClassOnlyError",
    "SingularDesignError",
    "OracleUnavailableError",
    "ImbalanceExhaustedError",
    "AllReplicationsFailedError",
]
