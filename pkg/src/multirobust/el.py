"""Empirical-likelihood calibration of observation weights.

Each treatment group gets its own concave dual problem: maximize

    F(g) = sum over group members of log(1 + g . C_i)

whose stationary point makes every constraint column average out to zero under
the implied weights. The maximizer is found by damped Newton steps with
step-halving, keeping every denominator 1 + g . C_i strictly positive so the
weights stay positive throughout.

Convergence requires both the raw score sum(C_i / (1 + g . C_i)) and its
weight-normalized counterpart to be small. The raw score alone can decay to
zero along a divergent path when zero sits outside the convex hull of the
group's constraint rows (all denominators grow without bound); the normalized
form stays bounded away from zero in that case and forces the iteration budget
to run out, which is reported as non-convergence rather than a fake solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CausalDataset, ConstraintMatrices
from .errors import EmptyGroupError, NonConvergenceError, SingularSystemError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
DENOMINATOR_FLOOR = 1e-10
_MAX_HALVINGS = 60


@dataclass(frozen=True)
class SideDiagnostics:
    """Convergence record for one group's solve."""

    iterations: int
    residual: float
    feasibility_margin: float
    objective_trace: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class ELCalibration:
    """Calibrated weights for both groups plus solver diagnostics.

    Each weight vector is full length with zeros off-group. Under the default
    normalized form each group's weights sum to one.
    """

    multipliers_treated: np.ndarray
    multipliers_control: np.ndarray
    weights_treated: np.ndarray
    weights_control: np.ndarray
    iterations_treated: int
    iterations_control: int
    residual_treated: float
    residual_control: float
    feasibility_margin: float
    normalized: bool = True


def _residual(rows: np.ndarray, denom: np.ndarray) -> float:
    """Max-abs of the raw score and of its weight-normalized form."""
    raw = rows.T @ (1.0 / denom)
    scale = float(np.sum(1.0 / denom))
    raw_max = float(np.max(np.abs(raw))) if raw.size else 0.0
    return raw_max * max(1.0, 1.0 / scale)


def solve_side(
    constraints: np.ndarray,
    membership: np.ndarray,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[np.ndarray, np.ndarray, SideDiagnostics]:
    """Solve one group's constraint system.

    Args:
        constraints: full-length (n, k) centered constraint matrix.
        membership: boolean (or 0/1) vector selecting the group's rows.
        tol: max-abs residual required for convergence.
        max_iter: Newton iteration budget.

    Returns:
        ``(multipliers, weights, diagnostics)`` where ``weights`` is full
        length, normalized to sum to one over the group, and zero elsewhere.

    Raises:
        EmptyGroupError: the membership vector selects no rows.
        SingularSystemError: a damped Newton solve failed outright.
        NonConvergenceError: the residual never reached ``tol``.
    """
    member = np.asarray(membership).astype(bool)
    rows = np.asarray(constraints, dtype=float)[member]
    m, k = rows.shape
    if m == 0:
        raise EmptyGroupError("cannot calibrate an empty group")

    n = member.shape[0]
    if k == 0:
        weights = np.zeros(n)
        weights[member] = 1.0 / m
        diag = SideDiagnostics(0, 0.0, 1.0, (0.0,))
        return np.zeros(0), weights, diag

    mult = np.zeros(k)
    denom = np.ones(m)
    f_val = 0.0
    trace = [f_val]
    iterations = 0

    for _ in range(max_iter):
        if _residual(rows, denom) <= tol:
            break
        inv = 1.0 / denom
        grad = rows.T @ inv
        neg_hess = (rows * inv[:, None] ** 2).T @ rows
        damping = 1e-10 * (1.0 + float(np.trace(neg_hess))) / k
        try:
            step = np.linalg.solve(neg_hess + damping * np.eye(k), grad)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"damped Newton solve failed: {exc}") from exc
        if not np.all(np.isfinite(step)):
            raise SingularSystemError("damped Newton solve produced non-finite step")

        # Halve until all denominators stay clear of zero and the objective
        # does not decrease; concavity guarantees a small enough step works.
        # The acceptance allows an ulp-scale dip: near the maximum every
        # candidate can round one ulp below the incumbent, and rejecting them
        # all would freeze the multipliers with the residual stuck just
        # above tol.
        plateau = 1e-12 * (1.0 + abs(f_val))
        scale = 1.0
        accepted = False
        for _ in range(_MAX_HALVINGS):
            cand = mult + scale * step
            cand_denom = 1.0 + rows @ cand
            if np.min(cand_denom) >= DENOMINATOR_FLOOR:
                cand_f = float(np.sum(np.log(cand_denom)))
                if cand_f >= f_val - plateau:
                    accepted = True
                    break
            scale *= 0.5
        iterations += 1
        if not accepted:
            continue
        mult, denom, f_val = cand, cand_denom, cand_f
        trace.append(f_val)

    residual = _residual(rows, denom)
    diag = SideDiagnostics(iterations, residual, float(np.min(denom)), tuple(trace))
    if residual > tol:
        raise NonConvergenceError(
            f"residual {residual:.3e} above tolerance {tol:.1e} after "
            f"{iterations} iterations (zero may lie outside the constraint hull)",
            diagnostics=diag,
        )

    inv = 1.0 / denom
    weights = np.zeros(n)
    weights[member] = inv / inv.sum()
    return mult, weights, diag


def calibrate(
    ds: CausalDataset,
    cm: ConstraintMatrices,
    *,
    normalized: bool = True,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ELCalibration:
    """Calibrate both groups against the same kept constraint columns.

    The two sides are independent problems; solving them in either order gives
    identical results. With ``normalized=False`` the weights are the plain
    reciprocal form 1 / (group size * (1 + g . C_i)) instead of being rescaled
    to sum to one.
    """
    treated = ds.treated
    try:
        mult_t, w_t, diag_t = solve_side(cm.c1, treated, tol=tol, max_iter=max_iter)
    except NonConvergenceError as exc:
        raise NonConvergenceError(f"treated side: {exc}", diagnostics=exc.diagnostics) from exc
    try:
        mult_c, w_c, diag_c = solve_side(cm.c0, ~treated, tol=tol, max_iter=max_iter)
    except NonConvergenceError as exc:
        raise NonConvergenceError(f"control side: {exc}", diagnostics=exc.diagnostics) from exc

    if not normalized:
        w_t = np.where(treated, 1.0 / (ds.n1 * (1.0 + cm.c1 @ mult_t)), 0.0)
        w_c = np.where(~treated, 1.0 / (ds.n0 * (1.0 + cm.c0 @ mult_c)), 0.0)

    return ELCalibration(
        multipliers_treated=mult_t,
        multipliers_control=mult_c,
        weights_treated=w_t,
        weights_control=w_c,
        iterations_treated=diag_t.iterations,
        iterations_control=diag_c.iterations,
        residual_treated=diag_t.residual,
        residual_control=diag_c.residual,
        feasibility_margin=min(diag_t.feasibility_margin, diag_c.feasibility_margin),
        normalized=normalized,
    )
