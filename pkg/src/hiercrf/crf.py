"""Linear-chain CRF over sparse binary features.

Scores decompose per position (feature weights plus a label bias) and per
adjacent label pair (a K x K transition matrix). All sequence-level sums are
computed in the log domain with log-sum-exp, so long sequences never
underflow. The transition matrix can be frozen at zero, which reduces the
chain to independent per-position logistic scoring while keeping the same
interfaces.

Training minimizes the L2-regularized negative log-likelihood by batch
gradient descent with an Armijo backtracking line search (backtrack factor
0.5, initial step 1.0 at every iteration). The objective is strictly convex
for finite sigma^2, so the optimum is unique and the default zero
initialization makes runs reproducible bit for bit.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import DegenerateLabels, LengthMismatch
from .features import FeatureTemplate, FeatureVectorSequence
from .series import ANOMALY, NORMAL

DEFAULT_LABELS = ("NORMAL", "ANOMALY")

Batch = Sequence[tuple[FeatureVectorSequence, np.ndarray]]


@dataclass(frozen=True)
class ChainCrfModel:
    labels: tuple[str, ...]
    unary: np.ndarray        # [feature_count, K]
    transitions: np.ndarray  # [K, K]; frozen to zero when freeze_transitions
    bias: np.ndarray         # [K]
    l2_sigma2: float = 10.0
    freeze_transitions: bool = False
    template: Optional[FeatureTemplate] = None
    degenerate_labels: bool = False
    training_meta: Optional[Mapping] = None

    def __post_init__(self) -> None:
        K = len(self.labels)
        unary = np.asarray(self.unary, dtype=np.float64)
        trans = np.asarray(self.transitions, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64)
        if unary.ndim != 2 or unary.shape[1] != K:
            raise ValueError("unary weights must be [feature_count, K]")
        if trans.shape != (K, K) or bias.shape != (K,):
            raise ValueError("transition/bias shapes inconsistent with label count")
        if not (np.isfinite(unary).all() and np.isfinite(trans).all() and np.isfinite(bias).all()):
            raise ValueError("weights must be finite")
        if self.l2_sigma2 <= 0:
            raise ValueError("l2_sigma2 must be positive")
        for arr in (unary, trans, bias):
            arr.setflags(write=False)
        object.__setattr__(self, "unary", unary)
        object.__setattr__(self, "transitions", trans)
        object.__setattr__(self, "bias", bias)

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    @property
    def feature_count(self) -> int:
        return self.unary.shape[0]


@dataclass(frozen=True)
class PredictionSequence:
    """Decoded labels plus the posterior marginals behind them."""

    labels: np.ndarray     # [T], int8, after confidence filtering
    marginals: np.ndarray  # [T, K], unfiltered posteriors

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.int8)
        marg = np.asarray(self.marginals, dtype=np.float64)
        labels.setflags(write=False)
        marg.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "marginals", marg)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def confidence(self) -> np.ndarray:
        """Posterior probability of the reported label at each position."""
        return self.marginals[np.arange(len(self.labels)), self.labels]


def new_model(
    feature_count: int,
    labels: tuple[str, ...] = DEFAULT_LABELS,
    l2_sigma2: float = 10.0,
    freeze_transitions: bool = False,
    template: Optional[FeatureTemplate] = None,
) -> ChainCrfModel:
    """Zero-initialized model; the canonical deterministic starting point."""
    K = len(labels)
    return ChainCrfModel(
        labels=labels,
        unary=np.zeros((feature_count, K)),
        transitions=np.zeros((K, K)),
        bias=np.zeros(K),
        l2_sigma2=l2_sigma2,
        freeze_transitions=freeze_transitions,
        template=template,
    )


# --- sparse feature plumbing -------------------------------------------------


class _Indexed:
    """Flattened view of one feature sequence for vectorized scoring."""

    __slots__ = ("T", "ids", "pos", "counts")

    def __init__(self, features: FeatureVectorSequence) -> None:
        self.T = len(features)
        counts = np.fromiter((len(a) for a in features.active), dtype=np.int64, count=self.T)
        self.counts = counts
        self.ids = np.fromiter(
            (i for a in features.active for i in a), dtype=np.int64, count=int(counts.sum())
        )
        self.pos = np.repeat(np.arange(self.T), counts)


def _unary_matrix(model: ChainCrfModel, idx: _Indexed) -> np.ndarray:
    """U[t, k] = bias[k] + sum of unary weights of ids active at t."""
    K = model.n_labels
    U = np.tile(model.bias, (idx.T, 1))
    if len(idx.ids):
        rows = model.unary[idx.ids]
        for k in range(K):
            U[:, k] += np.bincount(idx.pos, weights=rows[:, k], minlength=idx.T)
    return U


def _check_lengths(features: FeatureVectorSequence, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if len(y) != len(features):
        raise LengthMismatch(f"features span {len(features)}, labels span {len(y)}")
    return y


# --- inference ----------------------------------------------------------------


def sequence_score(model: ChainCrfModel, features: FeatureVectorSequence, y) -> float:
    """Unnormalized log score of a label sequence."""
    y = _check_lengths(features, y)
    idx = _Indexed(features)
    U = _unary_matrix(model, idx)
    score = float(U[np.arange(idx.T), y].sum())
    if idx.T > 1:
        score += float(model.transitions[y[:-1], y[1:]].sum())
    return score


def _forward(U: np.ndarray, W: np.ndarray) -> np.ndarray:
    T, K = U.shape
    alpha = np.empty((T, K))
    alpha[0] = U[0]
    for t in range(1, T):
        alpha[t] = U[t] + _logsumexp_cols(alpha[t - 1][:, None] + W)
    return alpha


def _backward(U: np.ndarray, W: np.ndarray) -> np.ndarray:
    T, K = U.shape
    beta = np.zeros((T, K))
    for t in range(T - 2, -1, -1):
        beta[t] = _logsumexp_cols((W + (U[t + 1] + beta[t + 1])[None, :]).T)
    return beta


def _logsumexp_cols(m: np.ndarray) -> np.ndarray:
    """log-sum-exp down each column of a [K, K] score matrix."""
    mx = m.max(axis=0)
    return mx + np.log(np.exp(m - mx).sum(axis=0))


def _logsumexp_vec(v: np.ndarray) -> float:
    mx = float(v.max())
    return mx + float(np.log(np.exp(v - mx).sum()))


def log_partition(model: ChainCrfModel, features: FeatureVectorSequence) -> float:
    """log Z by the forward recursion in the log domain."""
    idx = _Indexed(features)
    U = _unary_matrix(model, idx)
    alpha = _forward(U, model.transitions)
    return _logsumexp_vec(alpha[-1])


def marginals(
    model: ChainCrfModel, features: FeatureVectorSequence
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior node marginals [T, K] and pair marginals [T-1, K, K]."""
    idx = _Indexed(features)
    U = _unary_matrix(model, idx)
    _, node, pair = _forward_backward(U, model.transitions)
    return node, pair


def _forward_backward(
    U: np.ndarray, W: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    T, K = U.shape
    alpha = _forward(U, W)
    beta = _backward(U, W)
    log_z = _logsumexp_vec(alpha[-1])
    node = np.exp(alpha + beta - log_z)
    pair = np.empty((max(T - 1, 0), K, K))
    for t in range(1, T):
        pair[t - 1] = np.exp(
            alpha[t - 1][:, None] + W + (U[t] + beta[t])[None, :] - log_z
        )
    return log_z, node, pair


def viterbi(
    model: ChainCrfModel, features: FeatureVectorSequence
) -> tuple[np.ndarray, float]:
    """Highest-scoring label path; ties break toward the earlier label."""
    idx = _Indexed(features)
    U = _unary_matrix(model, idx)
    W = model.transitions
    T, K = U.shape
    delta = U[0].copy()
    back = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, None] + W  # [prev, cur]
        back[t] = np.argmax(scores, axis=0)  # first max = earlier label
        delta = U[t] + scores[back[t], np.arange(K)]
    path = np.empty(T, dtype=np.int8)
    path[-1] = int(np.argmax(delta))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, float(delta.max())


# --- training -------------------------------------------------------------------


@dataclass(frozen=True)
class TrainOptions:
    max_iters: int = 500
    grad_tol: float = 1e-5
    initial_step: float = 1.0
    backtrack: float = 0.5
    armijo_c: float = 1e-4
    max_backtracks: int = 60
    strict_labels: bool = False


class _Params:
    """Mutable (unary, transitions, bias) bundle used inside the optimizer."""

    __slots__ = ("lam", "W", "V")

    def __init__(self, lam: np.ndarray, W: np.ndarray, V: np.ndarray) -> None:
        self.lam, self.W, self.V = lam, W, V

    @classmethod
    def from_model(cls, model: ChainCrfModel) -> "_Params":
        return cls(model.unary.copy(), model.transitions.copy(), model.bias.copy())

    def stepped(self, g: "_Params", step: float, freeze_w: bool) -> "_Params":
        return _Params(
            self.lam - step * g.lam,
            self.W if freeze_w else self.W - step * g.W,
            self.V - step * g.V,
        )

    def sq_norm(self, freeze_w: bool) -> float:
        total = float((self.lam ** 2).sum() + (self.V ** 2).sum())
        if not freeze_w:
            total += float((self.W ** 2).sum())
        return total

    def inf_norm(self, freeze_w: bool) -> float:
        parts = [np.abs(self.lam).max(initial=0.0), np.abs(self.V).max(initial=0.0)]
        if not freeze_w:
            parts.append(np.abs(self.W).max(initial=0.0))
        return float(max(parts))


class _BatchCache:
    """Per-sequence index structures and empirical counts (training constants)."""

    def __init__(self, batch: Batch, K: int, feature_count: int) -> None:
        self.items: list[tuple[_Indexed, np.ndarray]] = []
        self.emp = _Params(
            np.zeros((feature_count, K)), np.zeros((K, K)), np.zeros(K)
        )
        for features, y in batch:
            y = _check_lengths(features, y)
            idx = _Indexed(features)
            self.items.append((idx, y))
            if len(idx.ids):
                np.add.at(self.emp.lam, (idx.ids, y[idx.pos]), 1.0)
            self.emp.V += np.bincount(y, minlength=K).astype(np.float64)
            if idx.T > 1:
                np.add.at(self.emp.W, (y[:-1], y[1:]), 1.0)


def _nll_value(params: _Params, cache: _BatchCache, sigma2: float, freeze_w: bool) -> float:
    nll = 0.5 * params.sq_norm(freeze_w) / sigma2
    for idx, y in cache.items:
        U = _unary_matrix_raw(params, idx)
        alpha = _forward(U, params.W)
        gold = float(U[np.arange(idx.T), y].sum())
        if idx.T > 1:
            gold += float(params.W[y[:-1], y[1:]].sum())
        nll += _logsumexp_vec(alpha[-1]) - gold
    return nll


def _unary_matrix_raw(params: _Params, idx: _Indexed) -> np.ndarray:
    K = params.V.shape[0]
    U = np.tile(params.V, (idx.T, 1))
    if len(idx.ids):
        rows = params.lam[idx.ids]
        for k in range(K):
            U[:, k] += np.bincount(idx.pos, weights=rows[:, k], minlength=idx.T)
    return U


def _nll_and_gradient_raw(
    params: _Params, cache: _BatchCache, sigma2: float, freeze_w: bool
) -> tuple[float, _Params]:
    K = params.V.shape[0]
    grad = _Params(params.lam / sigma2, np.zeros_like(params.W), params.V / sigma2)
    if not freeze_w:
        grad.W += params.W / sigma2
    nll = 0.5 * params.sq_norm(freeze_w) / sigma2
    for idx, y in cache.items:
        U = _unary_matrix_raw(params, idx)
        log_z, node, pair = _forward_backward(U, params.W)
        gold = float(U[np.arange(idx.T), y].sum())
        if idx.T > 1:
            gold += float(params.W[y[:-1], y[1:]].sum())
        nll += log_z - gold
        if len(idx.ids):
            np.add.at(grad.lam, idx.ids, node[idx.pos])
        grad.V += node.sum(axis=0)
        if not freeze_w and idx.T > 1:
            grad.W += pair.sum(axis=0)
    grad.lam -= cache.emp.lam
    grad.V -= cache.emp.V
    if not freeze_w:
        grad.W -= cache.emp.W
    return nll, grad


def nll_and_gradient(
    model: ChainCrfModel, batch: Batch
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Regularized NLL and its gradient over (unary, transitions, bias).

    The gradient is expected counts minus empirical counts plus weights over
    sigma^2; the transition gradient is all zero when transitions are frozen.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    params = _Params.from_model(model)
    cache = _BatchCache(batch, model.n_labels, model.feature_count)
    nll, grad = _nll_and_gradient_raw(params, cache, model.l2_sigma2, model.freeze_transitions)
    return nll, grad.lam, grad.W, grad.V


def train(model: ChainCrfModel, batch: Batch, options: TrainOptions = TrainOptions()) -> ChainCrfModel:
    """Gradient descent with Armijo backtracking from the given model.

    Stops when the gradient infinity norm drops below grad_tol or after
    max_iters accepted steps. Every accepted step decreases the objective,
    so the returned NLL never exceeds the initial one.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    classes = np.unique(np.concatenate([np.asarray(y) for _, y in batch]))
    degenerate = len(classes) < 2
    if degenerate:
        if options.strict_labels:
            raise DegenerateLabels(f"training labels contain only class {classes.tolist()}")
        warnings.warn(
            "training labels contain a single class; model flagged degenerate",
            stacklevel=2,
        )
    cache = _BatchCache(batch, model.n_labels, model.feature_count)
    params = _Params.from_model(model)
    sigma2 = model.l2_sigma2
    freeze_w = model.freeze_transitions
    nll, grad = _nll_and_gradient_raw(params, cache, sigma2, freeze_w)
    iterations = 0
    for _ in range(options.max_iters):
        if grad.inf_norm(freeze_w) < options.grad_tol:
            break
        g2 = grad.sq_norm(freeze_w)
        step = options.initial_step
        accepted = None
        for _ in range(options.max_backtracks):
            candidate = params.stepped(grad, step, freeze_w)
            cand_nll = _nll_value(candidate, cache, sigma2, freeze_w)
            if cand_nll <= nll - options.armijo_c * step * g2:
                accepted = (candidate, cand_nll)
                break
            step *= options.backtrack
        if accepted is None:
            break  # step underflow: gradient numerically flat
        params, nll = accepted
        nll, grad = _nll_and_gradient_raw(params, cache, sigma2, freeze_w)
        iterations += 1
    meta = {
        "iterations": iterations,
        "final_nll": nll,
        "grad_inf_norm": grad.inf_norm(freeze_w),
        "converged": grad.inf_norm(freeze_w) < options.grad_tol,
    }
    return ChainCrfModel(
        labels=model.labels,
        unary=params.lam,
        transitions=params.W,
        bias=params.V,
        l2_sigma2=sigma2,
        freeze_transitions=freeze_w,
        template=model.template,
        degenerate_labels=degenerate or model.degenerate_labels,
        training_meta=meta,
    )


def predict(
    model: ChainCrfModel,
    features: FeatureVectorSequence,
    confidence_threshold: float = 0.6,
) -> PredictionSequence:
    """Viterbi decode, then demote low-confidence anomaly calls.

    An anomaly position whose posterior anomaly marginal is below the
    threshold is reported as normal; the marginals themselves are reported
    unmodified.
    """
    path, _ = viterbi(model, features)
    node, _ = marginals(model, features)
    labels = path.copy()
    demote = (labels == ANOMALY) & (node[:, ANOMALY] < confidence_threshold)
    labels[demote] = NORMAL
    return PredictionSequence(labels=labels, marginals=node)


# --- serialization -----------------------------------------------------------------


def model_to_dict(model: ChainCrfModel) -> dict:
    nz = np.nonzero(model.unary)
    triplets = [
        [int(i), int(k), float(model.unary[i, k])] for i, k in zip(*nz)
    ]
    return {
        "labels": list(model.labels),
        "feature_count": model.feature_count,
        "unary_triplets": triplets,
        "transitions": model.transitions.tolist(),
        "bias": model.bias.tolist(),
        "l2_sigma2": model.l2_sigma2,
        "freeze_transitions": model.freeze_transitions,
        "degenerate_labels": model.degenerate_labels,
        "template": model.template.to_dict() if model.template else None,
        "training_meta": dict(model.training_meta) if model.training_meta else None,
    }


def model_from_dict(d: Mapping) -> ChainCrfModel:
    K = len(d["labels"])
    unary = np.zeros((int(d["feature_count"]), K))
    for i, k, v in d["unary_triplets"]:
        unary[int(i), int(k)] = float(v)
    template = FeatureTemplate.from_dict(d["template"]) if d.get("template") else None
    return ChainCrfModel(
        labels=tuple(d["labels"]),
        unary=unary,
        transitions=np.array(d["transitions"], dtype=np.float64),
        bias=np.array(d["bias"], dtype=np.float64),
        l2_sigma2=float(d["l2_sigma2"]),
        freeze_transitions=bool(d["freeze_transitions"]),
        template=template,
        degenerate_labels=bool(d.get("degenerate_labels", False)),
        training_meta=d.get("training_meta"),
    )


def save_model(model: ChainCrfModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), sort_keys=True, indent=2))


def load_model(path: str | Path) -> ChainCrfModel:
    return model_from_dict(json.loads(Path(path).read_text()))
