"""Core data types: datasets, candidate-model predictions, and the centered
constraint matrices consumed by the calibration solver.

Constraint construction follows one convention throughout: every candidate
column is centered at its *full-sample* mean, never a group mean. The treated
side keeps propensity columns with their natural sign, the control side negates
them, and outcome columns enter each side from that side's own counterfactual
predictions without negation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (
    DimensionMismatchError,
    EmptyGroupError,
    InvalidInputError,
    NonBinaryTreatmentError,
    NonFiniteError,
)

# Columns closer than this (max-abs) are treated as duplicates; columns whose
# max-abs value is below it carry no constraint at all.
DEDUP_TOL = 1e-12


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.flags.writeable = False
    return out


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CausalDataset:
    """Outcome, binary treatment, and covariates for one estimation problem.

    Arrays are stored read-only; ``n_dropped`` records rows removed during
    ingestion because they contained missing or non-finite values.
    """

    y: np.ndarray
    a: np.ndarray
    w: np.ndarray
    n1: int
    n0: int
    n_dropped: int = 0

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.w.shape[1]

    @property
    def treated(self) -> np.ndarray:
        return self.a == 1

    @classmethod
    def from_arrays(cls, y, a, w=None, n_dropped: int = 0) -> "CausalDataset":
        """Validate raw arrays and build an immutable dataset.

        Raises:
            NonFiniteError: y or w contains NaN or infinity.
            NonBinaryTreatmentError: any treatment entry is not exactly 0 or 1.
            EmptyGroupError: either treatment group is empty.
        """
        y = np.asarray(y, dtype=float).reshape(-1)
        a_arr = np.asarray(a, dtype=float).reshape(-1)
        n = y.shape[0]
        if w is None:
            w = np.zeros((n, 0))
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w.reshape(-1, 1)
        if a_arr.shape[0] != n or w.shape[0] != n:
            raise DimensionMismatchError(
                f"y has {n} rows, a has {a_arr.shape[0]}, w has {w.shape[0]}"
            )
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(w)):
            raise NonFiniteError("outcome or covariates contain non-finite values")
        if not np.all(np.isfinite(a_arr)) or not np.all((a_arr == 0) | (a_arr == 1)):
            raise NonBinaryTreatmentError("treatment entries must be exactly 0 or 1")
        a_int = a_arr.astype(np.int64)
        n1 = int(a_int.sum())
        n0 = n - n1
        if n1 == 0 or n0 == 0:
            raise EmptyGroupError(f"group sizes n1={n1}, n0={n0}; both must be positive")
        a_final = np.array(a_int, copy=True)
        a_final.flags.writeable = False
        return cls(
            y=_readonly(y),
            a=a_final,
            w=_readonly(w),
            n1=n1,
            n0=n0,
            n_dropped=int(n_dropped),
        )

    def take(self, idx: np.ndarray) -> "CausalDataset":
        """Row-subset (or resample) the dataset; revalidates group counts."""
        return CausalDataset.from_arrays(self.y[idx], self.a[idx], self.w[idx])


def validate_dataset(records, *, outcome_col: str = "y", treatment_col: str = "a") -> CausalDataset:
    """Clean tabular records into a :class:`CausalDataset`.

    Accepts anything :func:`pandas.DataFrame` accepts. Rows containing missing
    or non-numeric values in any column are dropped and counted; all columns
    other than the outcome and treatment are taken as covariates in order.
    """
    frame = pd.DataFrame(records)
    if treatment_col not in frame.columns:
        raise InvalidInputError(f"treatment column {treatment_col!r} missing")
    if outcome_col not in frame.columns:
        raise InvalidInputError(f"outcome column {outcome_col!r} missing")
    if len(frame) < 2:
        raise InvalidInputError("need at least 2 rows")
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    values = numeric.to_numpy(dtype=float)
    keep = np.all(np.isfinite(values), axis=1)
    n_dropped = int(len(frame) - keep.sum())
    if not keep.any():
        raise NonFiniteError("cleaning removed every row")
    clean = numeric.loc[keep]
    cov_cols = [c for c in frame.columns if c not in (outcome_col, treatment_col)]
    w = clean[cov_cols].to_numpy(dtype=float) if cov_cols else None
    return CausalDataset.from_arrays(
        clean[outcome_col].to_numpy(dtype=float),
        clean[treatment_col].to_numpy(dtype=float),
        w,
        n_dropped=n_dropped,
    )


# ---------------------------------------------------------------------------
# candidate-model predictions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelPredictions:
    """Prediction columns contributed by a single fitted model.

    A model may supply a propensity column, an outcome pair, or both. Outcome
    predictions always come as a (treated, control) counterfactual pair.
    """

    label: str
    ps: np.ndarray | None = None
    q1: np.ndarray | None = None
    q0: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class PredictionBundle:
    """A pool of candidate predictions aligned row-for-row with a dataset.

    ``ps`` holds K propensity columns, ``out1``/``out0`` hold L counterfactual
    outcome columns each. ``labels`` names the K propensity columns followed by
    the L outcome pairs.
    """

    ps: np.ndarray
    out1: np.ndarray
    out0: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        ps = np.atleast_2d(np.asarray(self.ps, dtype=float))
        out1 = np.atleast_2d(np.asarray(self.out1, dtype=float))
        out0 = np.atleast_2d(np.asarray(self.out0, dtype=float))
        n = ps.shape[0]
        if out1.shape[0] != n or out0.shape[0] != n:
            raise DimensionMismatchError("prediction columns disagree on row count")
        if out1.shape[1] != out0.shape[1]:
            raise DimensionMismatchError(
                f"{out1.shape[1]} treated outcome columns vs {out0.shape[1]} control"
            )
        for name, arr in (("ps", ps), ("out1", out1), ("out0", out0)):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"{name} contains non-finite values")
        if ps.shape[1] and not np.all((ps > 0.0) & (ps < 1.0)):
            raise InvalidInputError("propensity predictions must lie strictly in (0, 1)")
        labels = tuple(self.labels)
        if labels and len(labels) != ps.shape[1] + out1.shape[1]:
            raise DimensionMismatchError("need one label per propensity column plus one per outcome pair")
        if not labels:
            labels = tuple(f"ps_{k + 1}" for k in range(ps.shape[1])) + tuple(
                f"outcome_{j + 1}" for j in range(out1.shape[1])
            )
        object.__setattr__(self, "ps", _readonly(ps))
        object.__setattr__(self, "out1", _readonly(out1))
        object.__setattr__(self, "out0", _readonly(out0))
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.ps.shape[0]

    @property
    def n_ps(self) -> int:
        return self.ps.shape[1]

    @property
    def n_outcome(self) -> int:
        return self.out1.shape[1]

    @classmethod
    def empty(cls, n: int) -> "PredictionBundle":
        return cls(np.zeros((n, 0)), np.zeros((n, 0)), np.zeros((n, 0)))

    @classmethod
    def from_models(cls, models: Sequence[ModelPredictions], n: int) -> "PredictionBundle":
        """Stack per-model prediction columns into one pool."""
        ps_cols, ps_labels = [], []
        out1_cols, out0_cols, out_labels = [], [], []
        for m in models:
            if m.ps is not None:
                ps_cols.append(np.asarray(m.ps, dtype=float).reshape(-1))
                ps_labels.append(m.label)
            if (m.q1 is None) != (m.q0 is None):
                raise InvalidInputError(f"model {m.label!r} supplies only half an outcome pair")
            if m.q1 is not None:
                out1_cols.append(np.asarray(m.q1, dtype=float).reshape(-1))
                out0_cols.append(np.asarray(m.q0, dtype=float).reshape(-1))
                out_labels.append(m.label)
        ps = np.column_stack(ps_cols) if ps_cols else np.zeros((n, 0))
        out1 = np.column_stack(out1_cols) if out1_cols else np.zeros((n, 0))
        out0 = np.column_stack(out0_cols) if out0_cols else np.zeros((n, 0))
        if ps.shape[0] != n or out1.shape[0] != n:
            raise DimensionMismatchError("model predictions disagree with dataset row count")
        return cls(ps, out1, out0, tuple(ps_labels) + tuple(out_labels))

    def take(self, idx: np.ndarray) -> "PredictionBundle":
        return PredictionBundle(self.ps[idx], self.out1[idx], self.out0[idx], self.labels)


# ---------------------------------------------------------------------------
# constraint matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConstraintMatrices:
    """Centered constraint columns for the treated and control systems.

    ``kept_columns`` maps each stored column back to its position in the
    original pool (propensity columns first, then outcome pairs); columns that
    were near-zero or duplicated another kept column are absent.
    """

    c1: np.ndarray
    c0: np.ndarray
    kept_columns: tuple[int, ...]
    n_input_columns: int
    n_duplicates: int = 0
    n_near_zero: int = 0

    @property
    def n(self) -> int:
        return self.c1.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.c1.shape[1]

    @property
    def dropped_count(self) -> int:
        return self.n_input_columns - len(self.kept_columns)


def build_constraint_matrices(ds: CausalDataset, pb: PredictionBundle) -> ConstraintMatrices:
    """Center the candidate columns and deduplicate them.

    Propensity columns enter the treated side as deviations from their
    full-sample mean and the control side negated; outcome columns enter each
    side from that side's own counterfactual predictions, also centered at
    full-sample means. A column is dropped only if it is redundant on *both*
    sides at once, so the two systems always share one column index map.
    """
    if pb.n != ds.n:
        raise DimensionMismatchError(f"dataset has {ds.n} rows, predictions have {pb.n}")

    # Each column is centered on its own contiguous copy so the result is
    # bit-identical no matter how many other columns share the pool.
    def centered(col: np.ndarray) -> np.ndarray:
        col = np.ascontiguousarray(col, dtype=float)
        return col - col.mean()

    ps_cols = [centered(pb.ps[:, j]) for j in range(pb.n_ps)]
    c1_cols = ps_cols + [centered(pb.out1[:, j]) for j in range(pb.n_outcome)]
    c0_cols = [-c for c in ps_cols] + [centered(pb.out0[:, j]) for j in range(pb.n_outcome)]

    kept: list[int] = []
    kept_stacked: list[np.ndarray] = []
    n_zero = 0
    n_dup = 0
    for j, (top, bottom) in enumerate(zip(c1_cols, c0_cols)):
        col = np.concatenate([top, bottom])
        if np.max(np.abs(col)) < DEDUP_TOL:
            n_zero += 1
            continue
        if any(np.max(np.abs(col - other)) < DEDUP_TOL for other in kept_stacked):
            n_dup += 1
            continue
        kept.append(j)
        kept_stacked.append(col)

    empty = np.empty((ds.n, 0))
    return ConstraintMatrices(
        c1=_readonly(np.column_stack([c1_cols[j] for j in kept]) if kept else empty),
        c0=_readonly(np.column_stack([c0_cols[j] for j in kept]) if kept else empty),
        kept_columns=tuple(kept),
        n_input_columns=len(c1_cols),
        n_duplicates=n_dup,
        n_near_zero=n_zero,
    )


# ---------------------------------------------------------------------------
# estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimateDiagnostics:
    """Solver and preprocessing details attached to an estimate."""

    iterations_treated: int = 0
    iterations_control: int = 0
    residual_treated: float = 0.0
    residual_control: float = 0.0
    dropped_columns: int = 0

    def to_dict(self) -> dict:
        return {
            "iterations_treated": self.iterations_treated,
            "iterations_control": self.iterations_control,
            "residual_treated": self.residual_treated,
            "residual_control": self.residual_control,
            "dropped_columns": self.dropped_columns,
        }


@dataclass(frozen=True)
class AteEstimate:
    """A point estimate of the average treatment effect with its interval."""

    method: str
    beta1: float
    beta0: float
    beta: float
    variance: float
    se: float
    ci_low: float
    ci_high: float
    diagnostics: EstimateDiagnostics = field(default_factory=EstimateDiagnostics)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "beta1": self.beta1,
            "beta0": self.beta0,
            "beta": self.beta,
            "variance": self.variance,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "diagnostics": self.diagnostics.to_dict(),
        }


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------


def load_dataset_csv(path) -> CausalDataset:
    """Read a dataset CSV with columns ``y``, ``a``, then covariates."""
    try:
        frame = pd.read_csv(path)
    except (OSError, ValueError, pd.errors.ParserError) as exc:
        raise InvalidInputError(f"cannot read dataset CSV {path}: {exc}") from exc
    return validate_dataset(frame)


def _numbered_columns(columns: Sequence[str], prefix: str) -> list[str]:
    """Return prefix_1..prefix_k, requiring a contiguous 1-based numbering."""
    found = {}
    for c in columns:
        if c.startswith(prefix):
            suffix = c[len(prefix):]
            if suffix.isdigit():
                found[int(suffix)] = c
    if not found:
        return []
    if sorted(found) != list(range(1, len(found) + 1)):
        raise InvalidInputError(f"{prefix}* columns must be numbered 1..{len(found)} without gaps")
    return [found[i] for i in range(1, len(found) + 1)]


def load_predictions_csv(path, n: int) -> PredictionBundle:
    """Read a prediction CSV (``ps_*``, ``q1_*``, ``q0_*``) aligned to n rows."""
    try:
        frame = pd.read_csv(path)
    except (OSError, ValueError, pd.errors.ParserError) as exc:
        raise InvalidInputError(f"cannot read prediction CSV {path}: {exc}") from exc
    if len(frame) != n:
        raise DimensionMismatchError(f"prediction CSV has {len(frame)} rows, dataset has {n}")
    ps_cols = _numbered_columns(frame.columns, "ps_")
    q1_cols = _numbered_columns(frame.columns, "q1_")
    q0_cols = _numbered_columns(frame.columns, "q0_")
    if len(q1_cols) != len(q0_cols):
        raise InvalidInputError("q1_* and q0_* column counts differ")
    ps = frame[ps_cols].to_numpy(dtype=float) if ps_cols else np.zeros((n, 0))
    out1 = frame[q1_cols].to_numpy(dtype=float) if q1_cols else np.zeros((n, 0))
    out0 = frame[q0_cols].to_numpy(dtype=float) if q0_cols else np.zeros((n, 0))
    labels = tuple(ps_cols) + tuple(f"q_{i + 1}" for i in range(len(q1_cols)))
    return PredictionBundle(ps, out1, out0, labels)


def write_predictions_csv(pb: PredictionBundle, path) -> None:
    """Write a bundle in the prediction CSV layout."""
    data = {}
    for k in range(pb.n_ps):
        data[f"ps_{k + 1}"] = pb.ps[:, k]
    for j in range(pb.n_outcome):
        data[f"q1_{j + 1}"] = pb.out1[:, j]
    for j in range(pb.n_outcome):
        data[f"q0_{j + 1}"] = pb.out0[:, j]
    pd.DataFrame(data).to_csv(path, index=False)
