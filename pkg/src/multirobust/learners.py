"""Candidate nuisance-model learners and prediction-quality metrics.

Learners share one output shape: a :class:`ModelPredictions` column set with a
propensity column, a counterfactual outcome pair, or both. Propensity outputs
of fitted models are squashed into (1e-6, 1 - 1e-6); counterfactual outcomes
come from refitting nothing, just toggling the treatment input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .data import CausalDataset, ModelPredictions
from .errors import (
    InvalidInputError,
    MultirobustError,
    OneClassOnlyError,
    OracleUnavailableError,
    SingularDesignError,
)

PS_FLOOR = 1e-6


@dataclass(frozen=True)
class LearnerSpec:
    """Configuration of one candidate learner.

    ``hidden_layers=None`` means three hidden layers as wide as the input;
    ``batch_size=None`` means three times the input width. ``mlp_mode`` picks
    between a shared trunk with two heads ("joint") and two separate networks
    ("disjoint").
    """

    kind: str  # logistic | ridge | mlp | oracle
    label: str = ""
    mlp_mode: str = "joint"
    hidden_layers: tuple[int, ...] | None = None
    l1_strength: float = 0.0
    learning_rate: float = 0.01
    momentum_beta1: float = 0.95
    epochs: int = 200
    batch_size: int | None = None
    ridge_lambda: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("logistic", "ridge", "mlp", "oracle"):
            raise InvalidInputError(f"unknown learner kind {self.kind!r}")
        if self.mlp_mode not in ("joint", "disjoint"):
            raise InvalidInputError(f"unknown mlp_mode {self.mlp_mode!r}")
        if self.hidden_layers is not None:
            object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if not self.label:
            object.__setattr__(self, "label", self._default_label())

    def _default_label(self) -> str:
        if self.kind == "mlp":
            return f"mlp-{self.mlp_mode}-s{self.seed}"
        if self.kind == "ridge":
            return f"ridge-{self.ridge_lambda:g}"
        return self.kind


@dataclass(frozen=True)
class PredictionMetrics:
    """Discrimination and fit summary for one model's predictions."""

    auc: float
    r2: float
    d: float
    geo: float


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def auc_score(scores, labels) -> float:
    """Rank-statistic AUC; tied scores get half credit."""
    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels, dtype=float).reshape(-1)
    if scores.shape != labels.shape:
        raise InvalidInputError("scores and labels must align")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnlyError("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def r2_score(predictions, targets) -> float:
    """Fraction of variance explained; can be negative, never above one."""
    predictions = np.asarray(predictions, dtype=float).reshape(-1)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if predictions.shape != targets.shape:
        raise InvalidInputError("predictions and targets must align")
    if targets.shape[0] < 2:
        raise InvalidInputError("need at least 2 targets")
    sst = float(np.sum((targets - targets.mean()) ** 2))
    if sst == 0.0:
        return 0.0
    sse = float(np.sum((targets - predictions) ** 2))
    return 1.0 - sse / sst

def geo_score(r2: float, auc: float) -> float:
    """Combined quality score: cube root of r2 * d * (1 - d) with d = 2(auc - 1/2).

    Zero whenever the product is not strictly positive, i.e. when r2 <= 0 or
    d falls outside (0, 1).
    """
    d = 2.0 * (auc - 0.5)
    radicand = r2 * d * (1.0 - d)
    if radicand <= 0.0:
        return 0.0
    return float(np.cbrt(radicand))


def compute_metrics(scores, labels, predictions, targets) -> PredictionMetrics:
    """All four metrics from a propensity column and an outcome column."""
    auc = auc_score(scores, labels)
    r2 = r2_score(predictions, targets)
    return PredictionMetrics(auc=auc, r2=r2, d=2.0 * (auc - 0.5), geo=geo_score(r2, auc))


# ---------------------------------------------------------------------------
# classical learners
# ---------------------------------------------------------------------------


def _fit_logistic_coefs(x: np.ndarray, a: np.ndarray, *, max_iter: int = 50,
                        tol: float = 1e-8) -> np.ndarray:
    """Damped Newton logistic fit; the damping keeps separated fits bounded."""
    n, d = x.shape
    beta = np.zeros(d)
    loglik = -n * np.log(2.0)
    for _ in range(max_iter):
        z = x @ beta
        p = expit(z)
        grad = x.T @ (a - p)
        if float(np.max(np.abs(grad))) <= tol:
            break
        curv = p * (1.0 - p)
        hess = (x * curv[:, None]).T @ x
        damping = 1e-10 * (1.0 + float(np.trace(hess))) / d
        try:
            step = np.linalg.solve(hess + damping * np.eye(d), grad)
        except np.linalg.LinAlgError as exc:
            raise SingularDesignError(f"logistic Newton solve failed: {exc}") from exc
        scale = 1.0
        for _ in range(60):
            cand = beta + scale * step
            zc = x @ cand
            cand_loglik = float(np.sum(a * zc - np.logaddexp(0.0, zc)))
            if cand_loglik >= loglik:
                beta, loglik = cand, cand_loglik
                break
            scale *= 0.5
    return beta


@dataclass(frozen=True, eq=False)
class _FittedLogistic:
    coefs: np.ndarray
    label: str

    def columns(self, w: np.ndarray, idx=None) -> ModelPredictions:
        z = np.column_stack([np.ones(w.shape[0]), w]) @ self.coefs
        ps = np.clip(expit(z), PS_FLOOR, 1.0 - PS_FLOOR)
        return ModelPredictions(label=self.label, ps=ps)


@dataclass(frozen=True, eq=False)
class _FittedRidge:
    coefs: np.ndarray  # intercept, treatment, covariates
    label: str

    def columns(self, w: np.ndarray, idx=None) -> ModelPredictions:
        base = self.coefs[0] + w @ self.coefs[2:]
        return ModelPredictions(label=self.label, q1=base + self.coefs[1], q0=base)


def _fit_ridge(spec: LearnerSpec, ds: CausalDataset) -> _FittedRidge:
    x = np.column_stack([np.ones(ds.n), ds.a.astype(float), ds.w])
    d = x.shape[1]
    if spec.ridge_lambda < 0:
        raise InvalidInputError("ridge_lambda must be nonnegative")
    if spec.ridge_lambda == 0 and np.linalg.matrix_rank(x) < d:
        raise SingularDesignError("rank-deficient outcome design with zero ridge penalty")
    penalty = spec.ridge_lambda * np.eye(d)
    penalty[0, 0] = 0.0  # intercept unpenalized
    try:
        coefs = np.linalg.solve(x.T @ x + penalty, x.T @ ds.y)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError(f"ridge solve failed: {exc}") from exc
    return _FittedRidge(coefs=coefs, label=spec.label)


@dataclass(frozen=True, eq=False)
class _FittedOracle:
    g: np.ndarray
    q1: np.ndarray
    q0: np.ndarray
    label: str

    def columns(self, w: np.ndarray, idx=None) -> ModelPredictions:
        if idx is None:
            idx = np.arange(self.g.shape[0])
        return ModelPredictions(label=self.label, ps=self.g[idx],
                                q1=self.q1[idx], q0=self.q0[idx])


# ---------------------------------------------------------------------------
# multilayer perceptron
# ---------------------------------------------------------------------------


class MlpNetwork:
    """Small fully connected ReLU network trained with Adam.

    Heads: a sigmoid head for the binary target, a linear head for the
    continuous target, or both sharing the trunk. With ``direct_treatment``
    the linear head additionally receives the raw treatment indicator, so
    counterfactual predictions just toggle that one input.

    Parameters live in ``self.params`` as a flat list of arrays (weights and
    biases interleaved, heads last). The L1 penalty applies to weights only,
    with the zero subgradient at exact zeros.
    """

    def __init__(self, n_inputs: int, hidden: tuple[int, ...], *,
                 ps_head: bool, y_head: bool, direct_treatment: bool = False,
                 rng: np.random.Generator):
        if not (ps_head or y_head):
            raise InvalidInputError("network needs at least one head")
        self.n_inputs = n_inputs
        self.hidden = tuple(hidden)
        self.ps_head = ps_head
        self.y_head = y_head
        self.direct_treatment = direct_treatment and y_head

        self.params: list[np.ndarray] = []
        self._weight_slots: list[int] = []
        sizes = [n_inputs, *self.hidden]
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self._weight_slots.append(len(self.params))
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))
        top = sizes[-1]
        bound = 1.0 / np.sqrt(top)
        if ps_head:
            self._ps_slot = len(self.params)
            self._weight_slots.append(len(self.params))
            self.params.append(rng.uniform(-bound, bound, size=top))
            self.params.append(np.zeros(1))
        if y_head:
            self._y_slot = len(self.params)
            self._weight_slots.append(len(self.params))
            self.params.append(rng.uniform(-bound, bound, size=top))
            self.params.append(np.zeros(1))
            if self.direct_treatment:
                self._a_slot = len(self.params)
                self._weight_slots.append(len(self.params))
                self.params.append(np.zeros(1))

        self._adam_m = [np.zeros_like(p) for p in self.params]
        self._adam_v = [np.zeros_like(p) for p in self.params]
        self._adam_t = 0

    # -- forward ------------------------------------------------------------

    def _trunk(self, x: np.ndarray, keep_cache: bool = False):
        h = x
        cache = []
        n_layers = len(self.hidden)
        for layer in range(n_layers):
            w = self.params[2 * layer]
            b = self.params[2 * layer + 1]
            z = h @ w + b
            if keep_cache:
                cache.append((h, z))
            h = np.maximum(z, 0.0)
        return (h, cache) if keep_cache else h

    def predict_ps(self, x: np.ndarray) -> np.ndarray:
        h = self._trunk(np.asarray(x, dtype=float))
        z = h @ self.params[self._ps_slot] + self.params[self._ps_slot + 1][0]
        return expit(z)

    def predict_y(self, x: np.ndarray, a: np.ndarray | None = None) -> np.ndarray:
        h = self._trunk(np.asarray(x, dtype=float))
        z = h @ self.params[self._y_slot] + self.params[self._y_slot + 1][0]
        if self.direct_treatment:
            z = z + self.params[self._a_slot][0] * np.asarray(a, dtype=float)
        return z

    # -- loss and gradient ----------------------------------------------------

    def loss_and_grad(self, x: np.ndarray, a: np.ndarray | None = None,
                      y: np.ndarray | None = None, l1_strength: float = 0.0):
        """Mean batch loss (plus L1 penalty) and gradients per parameter.

        The sigmoid head contributes mean binary cross-entropy, the linear
        head mean squared error; with both heads the two terms are summed.
        """
        x = np.asarray(x, dtype=float)
        batch = x.shape[0]
        h, cache = self._trunk(x, keep_cache=True)
        grads = [np.zeros_like(p) for p in self.params]
        loss = 0.0
        dh = np.zeros_like(h)

        if self.ps_head:
            w_ps = self.params[self._ps_slot]
            z = h @ w_ps + self.params[self._ps_slot + 1][0]
            a = np.asarray(a, dtype=float)
            loss += float(np.mean(np.logaddexp(0.0, z) - a * z))
            dz = (expit(z) - a) / batch
            grads[self._ps_slot] = h.T @ dz
            grads[self._ps_slot + 1] = np.array([dz.sum()])
            dh += np.outer(dz, w_ps)

        if self.y_head:
            w_y = self.params[self._y_slot]
            z = h @ w_y + self.params[self._y_slot + 1][0]
            if self.direct_treatment:
                a_vec = np.asarray(a, dtype=float)
                z = z + self.params[self._a_slot][0] * a_vec
            y = np.asarray(y, dtype=float)
            resid = z - y
            loss += float(np.mean(resid**2))
            dz = 2.0 * resid / batch
            grads[self._y_slot] = h.T @ dz
            grads[self._y_slot + 1] = np.array([dz.sum()])
            if self.direct_treatment:
                grads[self._a_slot] = np.array([float(np.dot(dz, a_vec))])
            dh += np.outer(dz, w_y)

        for layer in reversed(range(len(self.hidden))):
            inp, z = cache[layer]
            dz = dh * (z > 0.0)
            grads[2 * layer] = inp.T @ dz
            grads[2 * layer + 1] = dz.sum(axis=0)
            dh = dz @ self.params[2 * layer].T

        if l1_strength > 0.0:
            for slot in self._weight_slots:
                loss += l1_strength * float(np.sum(np.abs(self.params[slot])))
                grads[slot] = grads[slot] + l1_strength * np.sign(self.params[slot])
        return loss, grads

    # -- training -------------------------------------------------------------

    def _adam_step(self, grads, learning_rate: float, beta1: float,
                   beta2: float = 0.999, eps: float = 1e-8) -> None:
        self._adam_t += 1
        correct1 = 1.0 - beta1**self._adam_t
        correct2 = 1.0 - beta2**self._adam_t
        for i, g in enumerate(grads):
            self._adam_m[i] = beta1 * self._adam_m[i] + (1.0 - beta1) * g
            self._adam_v[i] = beta2 * self._adam_v[i] + (1.0 - beta2) * g**2
            m_hat = self._adam_m[i] / correct1
            v_hat = self._adam_v[i] / correct2
            self.params[i] = self.params[i] - learning_rate * m_hat / (np.sqrt(v_hat) + eps)

    def train(self, x: np.ndarray, a: np.ndarray | None, y: np.ndarray | None,
              spec: LearnerSpec, rng: np.random.Generator) -> None:
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        batch = spec.batch_size if spec.batch_size is not None else 3 * self.n_inputs
        batch = max(1, min(batch, n))
        for _ in range(spec.epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch):
                sel = order[start:start + batch]
                _, grads = self.loss_and_grad(
                    x[sel],
                    a[sel] if a is not None else None,
                    y[sel] if y is not None else None,
                    l1_strength=spec.l1_strength,
                )
                self._adam_step(grads, spec.learning_rate, spec.momentum_beta1)


@dataclass(frozen=True, eq=False)
class _FittedMlp:
    ps_net: MlpNetwork | None
    y_net: MlpNetwork | None
    joint: bool
    label: str

    def columns(self, w: np.ndarray, idx=None) -> ModelPredictions:
        n = w.shape[0]
        ones = np.ones(n)
        zeros = np.zeros(n)
        if self.joint:
            net = self.ps_net  # same network carries both heads
            ps = net.predict_ps(w)
            q1 = net.predict_y(w, ones)
            q0 = net.predict_y(w, zeros)
        else:
            ps = self.ps_net.predict_ps(w)
            q1 = self.y_net.predict_y(np.column_stack([ones, w]))
            q0 = self.y_net.predict_y(np.column_stack([zeros, w]))
        ps = np.clip(ps, PS_FLOOR, 1.0 - PS_FLOOR)
        return ModelPredictions(label=self.label, ps=ps, q1=q1, q0=q0)


def _resolve_hidden(spec: LearnerSpec, n_inputs: int) -> tuple[int, ...]:
    if spec.hidden_layers is not None:
        return spec.hidden_layers
    return (n_inputs, n_inputs, n_inputs)


def _fit_mlp(spec: LearnerSpec, ds: CausalDataset) -> _FittedMlp:
    rng = np.random.default_rng(spec.seed)
    a = ds.a.astype(float)
    hidden = _resolve_hidden(spec, ds.p)
    if spec.mlp_mode == "joint":
        net = MlpNetwork(ds.p, hidden, ps_head=True, y_head=True,
                         direct_treatment=True, rng=rng)
        net.train(ds.w, a, ds.y, spec, rng)
        return _FittedMlp(ps_net=net, y_net=net, joint=True, label=spec.label)
    ps_net = MlpNetwork(ds.p, hidden, ps_head=True, y_head=False, rng=rng)
    ps_net.train(ds.w, a, None, spec, rng)
    y_net = MlpNetwork(ds.p + 1, hidden, ps_head=False, y_head=True, rng=rng)
    y_net.train(np.column_stack([a, ds.w]), None, ds.y, spec, rng)
    return _FittedMlp(ps_net=ps_net, y_net=y_net, joint=False, label=spec.label)


# ---------------------------------------------------------------------------
# unified fitting interface
# ---------------------------------------------------------------------------


def fit_learner(spec: LearnerSpec, ds: CausalDataset, truth=None):
    """Fit one learner; returns an object with ``columns(w, idx)``.

    ``truth`` (only available inside simulations) carries the generating
    propensity and counterfactual means; the oracle learner simply indexes
    into it and every other learner ignores it.
    """
    if spec.kind == "logistic":
        x = np.column_stack([np.ones(ds.n), ds.w])
        coefs = _fit_logistic_coefs(x, ds.a.astype(float))
        return _FittedLogistic(coefs=coefs, label=spec.label)
    if spec.kind == "ridge":
        return _fit_ridge(spec, ds)
    if spec.kind == "mlp":
        return _fit_mlp(spec, ds)
    if spec.kind == "oracle":
        if truth is None:
            raise OracleUnavailableError("oracle learner requires simulation truth")
        return _FittedOracle(g=np.asarray(truth.g, dtype=float),
                             q1=np.asarray(truth.q1, dtype=float),
                             q0=np.asarray(truth.q0, dtype=float),
                             label=spec.label)
    raise InvalidInputError(f"unknown learner kind {spec.kind!r}")


def fit_predict(spec: LearnerSpec, ds: CausalDataset, truth=None) -> ModelPredictions:
    """Fit on the full dataset and return in-sample prediction columns."""
    model = fit_learner(spec, ds, truth)
    return model.columns(ds.w, np.arange(ds.n))


# ---------------------------------------------------------------------------
# k-fold model selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KfoldSelection:
    """Winner of a k-fold comparison plus everything needed to audit it."""

    best_spec: LearnerSpec
    best_index: int
    oof: ModelPredictions
    scores: tuple[float, ...]
    failures: tuple[str | None, ...]


def _fold_metric(criterion: str, cols: ModelPredictions, y, a) -> float:
    auc = r2 = None
    if criterion in ("auc", "geo"):
        if cols.ps is None:
            raise InvalidInputError("criterion needs a propensity column")
        auc = auc_score(cols.ps, a)
    if criterion in ("r2", "geo"):
        if cols.q1 is None:
            raise InvalidInputError("criterion needs outcome columns")
        pred = np.where(a == 1, cols.q1, cols.q0)
        r2 = r2_score(pred, y)
    if criterion == "auc":
        return auc
    if criterion == "r2":
        return r2
    return geo_score(r2, auc)


def kfold_select(
    specs,
    ds: CausalDataset,
    *,
    folds: int = 5,
    criterion: str = "geo",
    seed: int = 0,
    truth=None,
) -> KfoldSelection:
    """Pick the best spec by average out-of-fold metric.

    Fold assignment is a single seeded shuffle of the row indices. A learner
    or metric error inside any fold fails that spec only; ties go to the
    earliest spec in the list.
    """
    specs = list(specs)
    if not specs:
        raise InvalidInputError("no learner specs supplied")
    if criterion not in ("auc", "r2", "geo"):
        raise InvalidInputError(f"unknown criterion {criterion!r}")
    if folds < 2 or folds > ds.n:
        raise InvalidInputError(f"folds must be in [2, {ds.n}], got {folds}")
    rng = np.random.default_rng(seed)
    fold_indices = np.array_split(rng.permutation(ds.n), folds)

    scores: list[float] = []
    failures: list[str | None] = []
    oof_by_spec: list[ModelPredictions | None] = []
    for spec in specs:
        ps = np.full(ds.n, np.nan)
        q1 = np.full(ds.n, np.nan)
        q0 = np.full(ds.n, np.nan)
        has_ps = has_q = False
        fold_scores = []
        try:
            for test_idx in fold_indices:
                mask = np.ones(ds.n, dtype=bool)
                mask[test_idx] = False
                train_idx = np.flatnonzero(mask)
                model = fit_learner(spec, ds.take(train_idx), truth)
                cols = model.columns(ds.w[test_idx], test_idx)
                if cols.ps is not None:
                    ps[test_idx] = cols.ps
                    has_ps = True
                if cols.q1 is not None:
                    q1[test_idx] = cols.q1
                    q0[test_idx] = cols.q0
                    has_q = True
                fold_scores.append(
                    _fold_metric(criterion, cols, ds.y[test_idx], ds.a[test_idx])
                )
        except MultirobustError as exc:
            scores.append(-np.inf)
            failures.append(f"{exc.tag}: {exc}")
            oof_by_spec.append(None)
            continue
        scores.append(float(np.mean(fold_scores)))
        failures.append(None)
        oof_by_spec.append(ModelPredictions(
            label=spec.label,
            ps=ps if has_ps else None,
            q1=q1 if has_q else None,
            q0=q0 if has_q else None,
        ))

    best_index = 0
    for i in range(1, len(specs)):
        if scores[i] > scores[best_index]:
            best_index = i
    if oof_by_spec[best_index] is None:
        raise InvalidInputError("every learner spec failed during k-fold selection")
    return KfoldSelection(
        best_spec=specs[best_index],
        best_index=best_index,
        oof=oof_by_spec[best_index],
        scores=tuple(scores),
        failures=tuple(failures),
    )
