"""Synthetic-data generator and Monte Carlo harness.

Covariates arrive in four equal blocks: confounders, instruments, outcome-only
predictors, and irrelevant noise. Treatment assignment mixes nonlinear
features of the first two blocks; the outcome mixes (independently selected)
nonlinear features of the confounder and outcome-only blocks, so the effect of
treatment itself is purely additive and the true average effect equals the
configured coefficient exactly.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from math import ceil

import numpy as np
from scipy.linalg import toeplitz
from scipy.special import expit

from .data import CausalDataset, ModelPredictions, PredictionBundle
from .el import calibrate
from .errors import (
    AllReplicationsFailedError,
    EmptyGroupError,
    ImbalanceExhaustedError,
    InvalidInputError,
    MultirobustError,
)
from .estimators import (
    EstimatorConfig,
    dr_estimates,
    estimate_general_ee,
    estimate_mr,
)
from .learners import LearnerSpec, fit_learner, kfold_select

logger = logging.getLogger(__name__)

POOL_MODES = (
    "no_oracle",
    "with_oracle_ps",
    "with_oracle_outcome",
    "with_both_oracles",
    "oracle_only",
)

ARM_ESTIMATORS = ("mr", "general_ee", "diff_means", "ipw", "nipw", "aipw", "naipw")

_DR_KEYS = {"ipw": "IPW", "nipw": "nIPW", "aipw": "AIPW", "naipw": "nAIPW"}


# ---------------------------------------------------------------------------
# nonlinear feature bank
# ---------------------------------------------------------------------------


def _step_scale_a(x):
    # Piecewise-constant levels; interval edges resolved half-open so every
    # point gets exactly one level.
    return np.select([x <= -1.0, x <= 0.0, x < 2.0], [-2.0, -1.0, 1.0], default=3.0)


def _step_scale_b(x):
    return np.select([x <= 0.0, x < 1.0], [-5.0, -2.0], default=3.0)


FUNCTION_BANK = (
    lambda x1, x2: np.exp(x1 * x2 / 2.0),
    lambda x1, x2: x1 / (1.0 + np.exp(x2)),
    lambda x1, x2: (x1 * x2 / 10.0 + 2.0) ** 3,
    lambda x1, x2: (x1 + x2 + 3.0) ** 2,
    lambda x1, x2: _step_scale_a(x1) * _step_scale_b(x2),
    lambda x1, x2: (x1 >= 0.0).astype(float) * (x2 >= 1.0).astype(float),
)


# ---------------------------------------------------------------------------
# scenario description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationScenario:
    """Everything needed to draw one synthetic dataset family.

    ``coef_ranges`` is (low, high) for the confounder/outcome coefficient draws
    followed by (low, high) for the instrument coefficients. ``block_sizes``
    defaults to four equal blocks of p/4.
    """

    n: int
    p: int
    reps: int = 100
    seed: int = 0
    beta_true: float = 1.0
    rho_corr: float = 0.5
    noise_sd: float = 1.0
    coef_ranges: tuple[float, float, float, float] = (0.0, 0.25, 0.0, 0.25)
    selection_fraction: float = 0.3
    block_sizes: tuple[int, int, int, int] | None = None
    min_group_fraction: float = 0.25
    max_regen_attempts: int = 100

    def __post_init__(self):
        if self.n < 2:
            raise InvalidInputError(f"n must be at least 2, got {self.n}")
        if self.block_sizes is None:
            if self.p % 4 != 0:
                raise InvalidInputError(f"p must be divisible by 4, got {self.p}")
            object.__setattr__(self, "block_sizes", (self.p // 4,) * 4)
        else:
            object.__setattr__(self, "block_sizes", tuple(int(b) for b in self.block_sizes))
            if len(self.block_sizes) != 4 or sum(self.block_sizes) != self.p:
                raise InvalidInputError("block_sizes must be four widths summing to p")
        if any(b < 1 for b in self.block_sizes):
            raise InvalidInputError("every covariate block needs at least one column")
        if not -1.0 < self.rho_corr < 1.0:
            raise InvalidInputError(f"rho_corr must be in (-1, 1), got {self.rho_corr}")
        if not 0.0 < self.selection_fraction <= 1.0:
            raise InvalidInputError("selection_fraction must be in (0, 1]")
        if not 0.0 <= self.min_group_fraction < 0.5:
            raise InvalidInputError("min_group_fraction must be in [0, 0.5)")
        ranges = tuple(float(r) for r in self.coef_ranges)
        if len(ranges) != 4 or ranges[0] > ranges[1] or ranges[2] > ranges[3]:
            raise InvalidInputError("coef_ranges must be (low, high, low, high)")
        object.__setattr__(self, "coef_ranges", ranges)
        if self.noise_sd < 0:
            raise InvalidInputError("noise_sd must be nonnegative")
        if self.reps < 1:
            raise InvalidInputError("reps must be at least 1")


@dataclass(frozen=True, eq=False)
class OracleTruth:
    """Generating propensities and counterfactual means, row-aligned."""

    g: np.ndarray
    q1: np.ndarray
    q0: np.ndarray

    def take(self, idx: np.ndarray) -> "OracleTruth":
        return OracleTruth(self.g[idx], self.q1[idx], self.q0[idx])


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------


def ar1_factor(width: int, rho: float) -> np.ndarray:
    """Lower-triangular factor of the banded correlation with decay rho^|j-k|."""
    return np.linalg.cholesky(toeplitz(rho ** np.arange(width)))


def _nonlinear_features(block: np.ndarray, fraction: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Standardized nonlinear feature columns from randomly paired columns.

    Selects ceil(fraction * width) columns without replacement, pairs them
    consecutively (a leftover pairs with the first selected), applies one bank
    function per pair, and standardizes each output in-sample. A feature with
    no in-sample variation is zeroed out rather than divided by zero.
    """
    width = block.shape[1]
    m = ceil(fraction * width)
    selected = rng.choice(width, size=m, replace=False)
    pairs = [(selected[i], selected[i + 1]) for i in range(0, m - 1, 2)]
    if m % 2 == 1:
        pairs.append((selected[m - 1], selected[0]))
    feats = np.empty((block.shape[0], len(pairs)))
    for j, (i1, i2) in enumerate(pairs):
        fn = FUNCTION_BANK[rng.integers(0, len(FUNCTION_BANK))]
        col = fn(block[:, i1], block[:, i2])
        sd = col.std()
        feats[:, j] = (col - col.mean()) / sd if sd > 1e-12 else 0.0
    return feats


def _generate_once(sc: SimulationScenario, rng: np.random.Generator):
    blocks = []
    for width in sc.block_sizes:
        factor = ar1_factor(width, sc.rho_corr)
        blocks.append(rng.standard_normal((sc.n, width)) @ factor.T)
    x_conf, x_instr, x_out, x_noise = blocks
    r1, r2, r3, r4 = sc.coef_ranges

    f_treat = _nonlinear_features(x_conf, sc.selection_fraction, rng)
    coef_conf = rng.uniform(r1, r2, f_treat.shape[1])
    g_treat = _nonlinear_features(x_instr, sc.selection_fraction, rng)
    coef_instr = rng.uniform(r3, r4, g_treat.shape[1])
    f_out = _nonlinear_features(x_conf, sc.selection_fraction, rng)
    coef_conf_out = rng.uniform(r1, r2, f_out.shape[1])
    g_out = _nonlinear_features(x_out, sc.selection_fraction, rng)
    coef_out = rng.uniform(r1, r2, g_out.shape[1])

    eta = f_treat @ coef_conf + g_treat @ coef_instr
    g = expit(eta)
    a = rng.binomial(1, g)
    mu = 3.0 + f_out @ coef_conf_out + g_out @ coef_out
    y = mu + sc.beta_true * a + rng.normal(0.0, sc.noise_sd, sc.n)

    w = np.column_stack(blocks)
    ds = CausalDataset.from_arrays(y, a, w)
    truth = OracleTruth(g=g, q1=mu + sc.beta_true, q0=mu.copy())
    return ds, truth


def generate_dataset(sc: SimulationScenario, rep_index: int) -> tuple[CausalDataset, OracleTruth]:
    """Draw one dataset from its own (seed, replication, attempt) stream.

    Draws whose smaller treatment group falls below the configured fraction
    are rejected and redrawn with an incremented attempt key, so accepted
    datasets stay reproducible regardless of how many attempts they took.
    """
    for attempt in range(sc.max_regen_attempts):
        rng = np.random.default_rng([sc.seed, rep_index, attempt])
        try:
            ds, truth = _generate_once(sc, rng)
        except EmptyGroupError:
            continue
        if min(ds.n1, ds.n0) / ds.n >= sc.min_group_fraction:
            return ds, truth
    raise ImbalanceExhaustedError(
        f"no draw reached group fraction {sc.min_group_fraction} "
        f"in {sc.max_regen_attempts} attempts (rep {rep_index})"
    )


# ---------------------------------------------------------------------------
# prediction pools
# ---------------------------------------------------------------------------


def pool_builder(
    ds: CausalDataset,
    truth: OracleTruth,
    mode: str,
    pool_size: int,
    grid,
    rng: np.random.Generator,
) -> PredictionBundle:
    """Assemble a prediction pool from sampled learners and/or oracle columns.

    ``pool_size`` learners are sampled from ``grid`` without replacement and
    fitted on the dataset; depending on ``mode`` the true propensity column,
    the true outcome pair, both, or only the oracle columns are appended.
    """
    if mode not in POOL_MODES:
        raise InvalidInputError(f"unknown pool mode {mode!r}; choose from {POOL_MODES}")
    models: list[ModelPredictions] = []
    if mode != "oracle_only":
        grid = list(grid)
        if pool_size > len(grid):
            raise InvalidInputError(
                f"pool_size {pool_size} exceeds grid size {len(grid)}"
            )
        chosen = rng.choice(len(grid), size=pool_size, replace=False) if grid else []
        for i in chosen:
            model = fit_learner(grid[i], ds, truth)
            models.append(model.columns(ds.w, np.arange(ds.n)))
    if mode in ("with_oracle_ps", "with_both_oracles"):
        models.append(ModelPredictions(label="oracle-ps", ps=truth.g))
    if mode in ("with_oracle_outcome", "with_both_oracles"):
        models.append(ModelPredictions(label="oracle-outcome", q1=truth.q1, q0=truth.q0))
    if mode == "oracle_only":
        models.append(ModelPredictions(label="oracle", ps=truth.g, q1=truth.q1, q0=truth.q0))
    return PredictionBundle.from_models(models, ds.n)


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorArm:
    """One estimator configuration tracked across replications.

    For calibration-weighted arms the pool is rebuilt per replication from
    ``pool_mode``/``pool_size``. Inverse-weighting arms use the oracle triple
    when ``nuisance`` is "oracle"; otherwise they fit their nuisance models,
    selecting among the grid by k-fold when ``folds`` is at least 2 and
    falling back to the first grid entry otherwise.
    """

    name: str
    estimator: str = "mr"
    pool_mode: str = "no_oracle"
    pool_size: int = 0
    eta0: float = 0.0
    eta1: float = 0.0
    nuisance: str = "oracle"  # oracle | fit
    folds: int = 0
    select_by: str = "geo"

    def __post_init__(self):
        if self.estimator not in ARM_ESTIMATORS:
            raise InvalidInputError(f"unknown arm estimator {self.estimator!r}")
        if self.pool_mode not in POOL_MODES:
            raise InvalidInputError(f"unknown pool mode {self.pool_mode!r}")
        if self.nuisance not in ("oracle", "fit"):
            raise InvalidInputError(f"nuisance must be 'oracle' or 'fit', got {self.nuisance!r}")


@dataclass(frozen=True)
class ReplicationRecord:
    """One (replication, arm) result; failures carry an error tag instead."""

    rep: int
    arm: str
    beta_hat: float
    se: float
    covered: bool
    error: str | None = None


@dataclass(frozen=True)
class ArmSummary:
    """Aggregate performance of one arm across successful replications."""

    name: str
    estimator: str
    n_reps: int
    n_failed: int
    mean_estimate: float
    bias: float
    mc_sd: float
    rmse: float
    mean_se: float
    coverage: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "estimator": self.estimator,
            "n_reps": self.n_reps,
            "n_failed": self.n_failed,
            "mean_estimate": self.mean_estimate,
            "bias": self.bias,
            "mc_sd": self.mc_sd,
            "rmse": self.rmse,
            "mean_se": self.mean_se,
            "coverage": self.coverage,
        }


@dataclass(frozen=True, eq=False)
class SimulationReport:
    """Replication-level records plus per-arm aggregates for one scenario."""

    scenario: SimulationScenario
    arms: tuple[ArmSummary, ...]
    replications: tuple[ReplicationRecord, ...]

    def arm(self, name: str) -> ArmSummary:
        for summary in self.arms:
            if summary.name == name:
                return summary
        raise KeyError(name)


def _run_arm(arm: EstimatorArm, ds: CausalDataset, truth: OracleTruth,
             grid, cfg: EstimatorConfig, rng: np.random.Generator):
    if arm.estimator in ("mr", "general_ee"):
        pb = pool_builder(ds, truth, arm.pool_mode, arm.pool_size, grid, rng)
        if arm.estimator == "mr":
            return estimate_mr(ds, pb, cfg)
        arm_cfg = replace(cfg, eta0=arm.eta0, eta1=arm.eta1)
        return estimate_general_ee(ds, pb, arm_cfg)
    if arm.estimator == "diff_means":
        return estimate_mr(ds, PredictionBundle.empty(ds.n), cfg)

    # inverse-weighting arms need one (g, q1, q0) triple
    if arm.nuisance == "oracle":
        g, q1, q0 = truth.g, truth.q1, truth.q0
    else:
        grid = list(grid)
        if not grid:
            raise InvalidInputError(f"arm {arm.name!r} fits nuisances but the grid is empty")
        if arm.folds >= 2:
            spec = kfold_select(grid, ds, folds=arm.folds, criterion=arm.select_by,
                                seed=int(rng.integers(0, 2**31)), truth=truth).best_spec
        else:
            spec = grid[0]
        cols = fit_learner(spec, ds, truth).columns(ds.w, np.arange(ds.n))
        if cols.ps is None or cols.q1 is None:
            raise InvalidInputError(
                f"arm {arm.name!r} needs a learner producing both propensity and outcomes"
            )
        g, q1, q0 = cols.ps, cols.q1, cols.q0
    return dr_estimates(ds, g, q1, q0, cfg)[_DR_KEYS[arm.estimator]]


def _one_replication(sc: SimulationScenario, arms, grid, cfg: EstimatorConfig,
                     rep: int) -> list[ReplicationRecord]:
    records = []
    try:
        ds, truth = generate_dataset(sc, rep)
    except MultirobustError as exc:
        return [ReplicationRecord(rep, arm.name, float("nan"), float("nan"), False, exc.tag)
                for arm in arms]
    for arm_index, arm in enumerate(arms):
        rng = np.random.default_rng([sc.seed, rep, 7919, arm_index])
        try:
            est = _run_arm(arm, ds, truth, grid, cfg, rng)
            covered = bool(est.ci_low <= sc.beta_true <= est.ci_high)
            records.append(ReplicationRecord(rep, arm.name, est.beta, est.se, covered))
        except MultirobustError as exc:
            records.append(ReplicationRecord(rep, arm.name, float("nan"), float("nan"),
                                             False, exc.tag))
    return records


def run_monte_carlo(
    sc: SimulationScenario,
    arms,
    *,
    grid=(),
    cfg: EstimatorConfig | None = None,
    threads: int = 1,
) -> SimulationReport:
    """Run every arm on every replication and aggregate.

    Each replication draws its dataset from a stream keyed by (seed, rep), so
    results are independent of execution order and of ``threads``. Aggregates
    use the population variance so that rmse^2 = bias^2 + variance holds
    exactly; failed replications are excluded from aggregates but counted.
    """
    arms = list(arms)
    if not arms:
        raise InvalidInputError("need at least one estimator arm")
    names = [arm.name for arm in arms]
    if len(set(names)) != len(names):
        raise InvalidInputError("arm names must be unique")
    cfg = cfg or EstimatorConfig()

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_rep = list(pool.map(
                lambda rep: _one_replication(sc, arms, grid, cfg, rep), range(sc.reps)
            ))
    else:
        per_rep = []
        for rep in range(sc.reps):
            per_rep.append(_one_replication(sc, arms, grid, cfg, rep))
            if sc.reps >= 50 and (rep + 1) % 50 == 0:
                logger.info("completed %d/%d replications", rep + 1, sc.reps)

    records = tuple(rec for recs in per_rep for rec in recs)
    summaries = []
    for arm in arms:
        rows = [r for r in records if r.arm == arm.name]
        good = [r for r in rows if r.error is None]
        if not good:
            raise AllReplicationsFailedError(f"arm {arm.name!r}: all {len(rows)} replications failed")
        betas = np.array([r.beta_hat for r in good])
        ses = np.array([r.se for r in good])
        mean_est = float(betas.mean())
        bias = mean_est - sc.beta_true
        mc_var = float(betas.var())  # population form; keeps the rmse identity exact
        rmse = float(np.sqrt(np.mean((betas - sc.beta_true) ** 2)))
        summaries.append(ArmSummary(
            name=arm.name,
            estimator=arm.estimator,
            n_reps=len(good),
            n_failed=len(rows) - len(good),
            mean_estimate=mean_est,
            bias=bias,
            mc_sd=float(np.sqrt(mc_var)),
            rmse=rmse,
            mean_se=float(ses.mean()),
            coverage=float(np.mean([r.covered for r in good])),
        ))
    return SimulationReport(scenario=sc, arms=tuple(summaries), replications=records)


def run_scenario_sweep(
    sc: SimulationScenario,
    arms,
    n_values,
    *,
    grid=(),
    cfg: EstimatorConfig | None = None,
    threads: int = 1,
) -> list[tuple[int, SimulationReport]]:
    """Re-run the same scenario at several sample sizes."""
    out = []
    for n in n_values:
        report = run_monte_carlo(replace(sc, n=int(n)), arms, grid=grid, cfg=cfg,
                                 threads=threads)
        out.append((int(n), report))
    return out
