"""Average treatment effect estimators.

The calibration-weighted estimator takes its weights from
:mod:`multirobust.el` and never inverts a propensity score, so no clipping is
applied on that path. The inverse-weighting comparison family does divide by
fitted propensities and therefore clips them away from 0 and 1 first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import (
    AteEstimate,
    CausalDataset,
    EstimateDiagnostics,
    PredictionBundle,
    build_constraint_matrices,
)
from .el import ELCalibration, calibrate
from .errors import (
    DegeneratePSError,
    DimensionMismatchError,
    EmptyGroupError,
    InvalidInputError,
    NonConvergenceError,
    SingularSystemError,
    TooManyFailuresError,
)

DR_METHODS = ("IPW", "nIPW", "AIPW", "nAIPW")


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs shared by the estimation entry points.

    ``eta0``/``eta1`` are the augmentation intercepts of the wider estimating
    equation family; zero for both recovers the plain calibration-weighted
    estimator. ``ps_clip`` only affects the inverse-weighting comparisons.
    """

    alpha: float = 0.05
    eta0: float = 0.0
    eta1: float = 0.0
    normalized_weights: bool = True
    ps_clip: float = 0.01
    bootstrap_reps: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInputError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.ps_clip < 0.5:
            raise InvalidInputError(f"ps_clip must be in (0, 0.5), got {self.ps_clip}")


def _assemble(method: str, beta1: float, beta0: float, variance: float,
              alpha: float, diagnostics: EstimateDiagnostics) -> AteEstimate:
    beta = beta1 - beta0
    se = math.sqrt(variance)
    z = float(norm.ppf(1.0 - alpha / 2.0))
    return AteEstimate(
        method=method,
        beta1=beta1,
        beta0=beta0,
        beta=beta,
        variance=variance,
        se=se,
        ci_low=beta - z * se,
        ci_high=beta + z * se,
        diagnostics=diagnostics,
    )


def _calibration_diagnostics(cal: ELCalibration, dropped_columns: int) -> EstimateDiagnostics:
    return EstimateDiagnostics(
        iterations_treated=cal.iterations_treated,
        iterations_control=cal.iterations_control,
        residual_treated=cal.residual_treated,
        residual_control=cal.residual_control,
        dropped_columns=dropped_columns,
    )


def mr_variance(ds: CausalDataset, cal: ELCalibration, beta1: float, beta0: float) -> float:
    """Plug-in variance: weight-squared residuals summed over both groups."""
    r1 = ds.y - beta1
    r0 = ds.y - beta0
    a = ds.a
    w1 = cal.weights_treated
    w0 = cal.weights_control
    return float(np.sum(a * w1**2 * r1**2 + (1 - a) * w0**2 * r0**2))


def mr_estimate(
    ds: CausalDataset,
    cal: ELCalibration,
    cfg: EstimatorConfig | None = None,
    *,
    dropped_columns: int = 0,
) -> AteEstimate:
    """Calibration-weighted mean difference with its plug-in interval."""
    cfg = cfg or EstimatorConfig()
    beta1 = float(np.dot(cal.weights_treated, ds.y))
    beta0 = float(np.dot(cal.weights_control, ds.y))
    variance = mr_variance(ds, cal, beta1, beta0)
    return _assemble("MR", beta1, beta0, variance, cfg.alpha,
                     _calibration_diagnostics(cal, dropped_columns))


def general_ee_estimate(
    ds: CausalDataset,
    cal: ELCalibration,
    cfg: EstimatorConfig | None = None,
    *,
    dropped_columns: int = 0,
) -> AteEstimate:
    """Member of the wider estimating-equation family indexed by eta0/eta1.

    Solves sum_i [a_i w_i (y_i - b1) - eta1 (1 - a_i w_i)] = 0 and its control
    mirror, which under weights summing to one gives the closed forms below.
    Both intercepts zero reduces to :func:`mr_estimate` exactly.
    """
    cfg = cfg or EstimatorConfig()
    a = ds.a
    n = ds.n
    w1 = cal.weights_treated
    w0 = cal.weights_control
    sum_w1 = float(np.dot(a, w1))
    sum_w0 = float(np.dot(1 - a, w0))
    beta1 = float(np.dot(w1, ds.y)) - cfg.eta1 * (n - sum_w1)
    beta0 = float(np.dot(w0, ds.y)) + cfg.eta0 * (n - sum_w0)
    if cfg.eta0 == 0.0 and cfg.eta1 == 0.0:
        variance = mr_variance(ds, cal, beta1, beta0)
    else:
        phi1 = a * w1 * (ds.y - beta1) - cfg.eta1 * (1.0 - a * w1)
        phi0 = (1 - a) * w0 * (ds.y - beta0) + cfg.eta0 * (1.0 - (1 - a) * w0)
        variance = float(np.sum(phi1**2 + phi0**2))
    return _assemble("GeneralEE", beta1, beta0, variance, cfg.alpha,
                     _calibration_diagnostics(cal, dropped_columns))


def estimate_mr(ds: CausalDataset, pb: PredictionBundle,
                cfg: EstimatorConfig | None = None) -> AteEstimate:
    """Full pipeline: constraint construction, calibration, estimation."""
    cfg = cfg or EstimatorConfig()
    cm = build_constraint_matrices(ds, pb)
    cal = calibrate(ds, cm, normalized=cfg.normalized_weights)
    return mr_estimate(ds, cal, cfg, dropped_columns=cm.dropped_count)


def estimate_general_ee(ds: CausalDataset, pb: PredictionBundle,
                        cfg: EstimatorConfig | None = None) -> AteEstimate:
    """Pipeline variant ending in :func:`general_ee_estimate`."""
    cfg = cfg or EstimatorConfig()
    cm = build_constraint_matrices(ds, pb)
    cal = calibrate(ds, cm, normalized=cfg.normalized_weights)
    return general_ee_estimate(ds, cal, cfg, dropped_columns=cm.dropped_count)


# ---------------------------------------------------------------------------
# inverse-weighting comparison family
# ---------------------------------------------------------------------------


def dr_estimates(
    ds: CausalDataset,
    g: np.ndarray,
    q1: np.ndarray,
    q0: np.ndarray,
    cfg: EstimatorConfig | None = None,
) -> dict[str, AteEstimate]:
    """Classical inverse-weighting estimators from a single model triple.

    Returns IPW, its ratio-normalized form, the augmented estimator, and the
    augmented estimator with ratio-normalized correction terms. Variances are
    plug-in sums of squared per-row influence contributions.
    """
    cfg = cfg or EstimatorConfig()
    g = np.asarray(g, dtype=float).reshape(-1)
    q1 = np.asarray(q1, dtype=float).reshape(-1)
    q0 = np.asarray(q0, dtype=float).reshape(-1)
    if g.shape[0] != ds.n or q1.shape[0] != ds.n or q0.shape[0] != ds.n:
        raise DimensionMismatchError("model columns must align with the dataset rows")
    g = np.clip(g, cfg.ps_clip, 1.0 - cfg.ps_clip)
    if not np.all(np.isfinite(g)) or np.any(g <= 0.0) or np.any(g >= 1.0):
        raise DegeneratePSError("propensity values unusable even after clipping")

    a = ds.a.astype(float)
    y = ds.y
    n = ds.n
    w1 = a / g
    w0 = (1.0 - a) / (1.0 - g)
    out: dict[str, AteEstimate] = {}

    # Plain inverse weighting and its ratio-normalized form.
    beta1 = float(np.mean(w1 * y))
    beta0 = float(np.mean(w0 * y))
    psi = w1 * y - w0 * y - (beta1 - beta0)
    out["IPW"] = _assemble("IPW", beta1, beta0, float(np.sum(psi**2)) / n**2,
                           cfg.alpha, EstimateDiagnostics())

    u_tilde = w1 / w1.sum()
    v_tilde = w0 / w0.sum()
    beta1 = float(np.dot(u_tilde, y))
    beta0 = float(np.dot(v_tilde, y))
    variance = float(np.sum(u_tilde**2 * (y - beta1) ** 2 + v_tilde**2 * (y - beta0) ** 2))
    out["nIPW"] = _assemble("nIPW", beta1, beta0, variance, cfg.alpha, EstimateDiagnostics())

    # Augmented forms: model predictions plus reweighted residual corrections.
    r1 = w1 * (y - q1)
    r0 = w0 * (y - q0)
    beta1 = float(np.mean(r1 + q1))
    beta0 = float(np.mean(r0 + q0))
    psi = r1 - r0 + (q1 - q0) - (beta1 - beta0)
    out["AIPW"] = _assemble("AIPW", beta1, beta0, float(np.sum(psi**2)) / n**2,
                            cfg.alpha, EstimateDiagnostics())

    h1 = n * r1 / w1.sum()
    h0 = n * r0 / w0.sum()
    beta1 = float(np.mean(h1 + q1))
    beta0 = float(np.mean(h0 + q0))
    psi = h1 - h0 + (q1 - q0) - (beta1 - beta0)
    out["nAIPW"] = _assemble("nAIPW", beta1, beta0, float(np.sum(psi**2)) / n**2,
                             cfg.alpha, EstimateDiagnostics())
    return out


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------

_BOOTSTRAP_FAILURE_SHARE = 0.2


def _bootstrap_replicate(ds: CausalDataset, pb: PredictionBundle,
                         cfg: EstimatorConfig, rng: np.random.Generator) -> float:
    """One joint resample of rows and their prediction columns."""
    idx = rng.integers(0, ds.n, size=ds.n)
    ds_b = ds.take(idx)
    pb_b = pb.take(idx)
    return estimate_mr(ds_b, pb_b, cfg).beta


def bootstrap_se(ds: CausalDataset, pb: PredictionBundle,
                 cfg: EstimatorConfig | None = None) -> float:
    """Resampling standard error of the calibration-weighted estimate.

    Rows are resampled jointly with their prediction columns and the whole
    calibration is redone per replicate. Replicates whose calibration fails
    are dropped; more than 20% of them failing aborts the run.
    """
    cfg = cfg or EstimatorConfig()
    reps = cfg.bootstrap_reps
    if reps < 2:
        raise InvalidInputError(f"bootstrap needs at least 2 replicates, got {reps}")
    betas = []
    failed = 0
    for r in range(reps):
        rng = np.random.default_rng([cfg.seed, r])
        try:
            betas.append(_bootstrap_replicate(ds, pb, cfg, rng))
        except (EmptyGroupError, NonConvergenceError, SingularSystemError):
            failed += 1
    if failed > _BOOTSTRAP_FAILURE_SHARE * reps:
        raise TooManyFailuresError(f"{failed} of {reps} bootstrap replicates failed")
    return float(np.std(betas, ddof=1))
