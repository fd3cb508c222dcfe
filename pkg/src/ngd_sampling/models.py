"""Categorical models with analytic per-example gradients.

Three model kinds share one flat parameter vector interface:

``logistic``
    Binary labels in {-1, +1} with ``P(y | x, w) = 1 / (1 + exp(y w.x))``.
    Note the sign: the +1 label has probability ``sigmoid(-w.x)``. Class
    columns of :func:`predict_proba` are ordered ``(-1, +1)``. No bias.
``softmax``
    Labels ``0..K-1``, weights ``W`` of shape ``(K, n)`` stored row-major.
``mlp``
    One ReLU hidden layer with biases and a softmax output. Parameters are
    packed as ``[W1 (h, n), b1 (h), W2 (K, h), b2 (K)]``.

All batch functions take inputs of shape ``(m, n)``. The total cost adds an
L2 penalty ``l2 * ||w||^2 / 2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit, log_softmax, softmax

__all__ = [
    "ModelSpec",
    "PROB_CLAMP",
    "UnsupportedModelError",
    "init_params",
    "label_index",
    "predict_proba",
    "predict",
    "losses",
    "loss",
    "total_cost",
    "per_example_grads",
    "per_class_grads",
    "grad",
    "grad_total",
    "sample_labels",
    "sample_label",
    "hessian_total",
    "ScalarToy",
    "QuadraticToy",
    "exp_metric_toy",
    "quadratic_metric_toy",
    "constant_metric_toy",
]

PROB_CLAMP = 1e-12
KINDS = ("logistic", "softmax", "mlp")


class UnsupportedModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    n_classes: int = 2
    hidden_units: int = 40
    l2: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "logistic" and self.n_classes != 2:
            raise ValueError("logistic regression is binary")
        if self.l2 < 0:
            raise ValueError("l2 coefficient must be non-negative")

    @property
    def n_params(self) -> int:
        n, K, h = self.input_dim, self.n_classes, self.hidden_units
        if self.kind == "logistic":
            return n
        if self.kind == "softmax":
            return K * n
        return h * n + h + K * h + K

    @property
    def classes(self) -> np.ndarray:
        if self.kind == "logistic":
            return np.array([-1, 1])
        return np.arange(self.n_classes)


def init_params(spec: ModelSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Zeros for the convex models; fan-in scaled Gaussian weights for the MLP."""
    if spec.kind != "mlp":
        return np.zeros(spec.n_params)
    if rng is None:
        rng = np.random.default_rng(0)
    n, K, h = spec.input_dim, spec.n_classes, spec.hidden_units
    W1 = rng.standard_normal((h, n)) * np.sqrt(2.0 / n)
    W2 = rng.standard_normal((K, h)) * np.sqrt(1.0 / h)
    return np.concatenate([W1.ravel(), np.zeros(h), W2.ravel(), np.zeros(K)])


def label_index(spec: ModelSpec, labels) -> np.ndarray:
    """Map labels to column indices of :func:`predict_proba`."""
    y = np.asarray(labels)
    if spec.kind == "logistic":
        if not np.all(np.isin(y, (-1, 1))):
            raise ValueError("logistic labels must be -1 or +1")
        return ((y + 1) // 2).astype(int)
    if np.any(y < 0) or np.any(y >= spec.n_classes):
        raise ValueError(f"labels must lie in [0, {spec.n_classes})")
    return y.astype(int)


def _check(spec, w, X):
    w = np.asarray(w, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if w.shape != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} parameters, got shape {w.shape}")
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"expected inputs of dimension {spec.input_dim}, got {X.shape[1]}")
    return w, X


def _unpack_mlp(spec, w):
    n, K, h = spec.input_dim, spec.n_classes, spec.hidden_units
    i = 0
    W1 = w[i:i + h * n].reshape(h, n); i += h * n
    b1 = w[i:i + h]; i += h
    W2 = w[i:i + K * h].reshape(K, h); i += K * h
    b2 = w[i:i + K]
    return W1, b1, W2, b2


def _mlp_forward(spec, w, X):
    W1, b1, W2, b2 = _unpack_mlp(spec, w)
    pre = X @ W1.T + b1
    hidden = np.maximum(pre, 0.0)
    return pre, hidden, hidden @ W2.T + b2


def _logits(spec, w, X):
    if spec.kind == "logistic":
        z = X @ w
        # column order (-1, +1): log P(y) = -log(1 + exp(y z))
        return np.stack([-np.logaddexp(0, -z), -np.logaddexp(0, z)], axis=1)
    if spec.kind == "softmax":
        return X @ w.reshape(spec.n_classes, spec.input_dim).T
    return _mlp_forward(spec, w, X)[2]


def predict_proba(spec: ModelSpec, w, X) -> np.ndarray:
    w, X = _check(spec, w, X)
    if spec.kind == "logistic":
        z = X @ w
        return np.stack([expit(z), expit(-z)], axis=1)
    return softmax(_logits(spec, w, X), axis=1)


def predict(spec: ModelSpec, w, x) -> np.ndarray:
    return predict_proba(spec, w, np.atleast_2d(x))[0]


def losses(spec: ModelSpec, w, X, y) -> np.ndarray:
    """Per-example cross-entropy ``-log P(y_i | x_i, w)`` with clamped probabilities."""
    w, X = _check(spec, w, X)
    idx = label_index(spec, y)
    logp = _logits(spec, w, X)
    if spec.kind != "logistic":
        logp = log_softmax(logp, axis=1)
    picked = logp[np.arange(len(idx)), idx]
    return -np.clip(picked, np.log(PROB_CLAMP), np.log1p(-PROB_CLAMP))


def loss(spec: ModelSpec, w, x, y) -> float:
    return float(losses(spec, w, np.atleast_2d(x), np.atleast_1d(y))[0])


def total_cost(spec: ModelSpec, w, dataset) -> float:
    w = np.asarray(w, dtype=float)
    data = float(np.sum(losses(spec, w, dataset.inputs, dataset.labels)))
    return data + 0.5 * spec.l2 * float(w @ w)


def per_example_grads(spec: ModelSpec, w, X, y) -> np.ndarray:
    """Loss gradients, one row per example; shape ``(m, n_params)``."""
    w, X = _check(spec, w, X)
    y = np.asarray(y)
    if spec.kind == "logistic":
        yy = y.astype(float)
        if not np.all(np.isin(yy, (-1.0, 1.0))):
            raise ValueError("logistic labels must be -1 or +1")
        s = expit(yy * (X @ w))
        return (yy * s)[:, None] * X
    idx = label_index(spec, y)
    m = X.shape[0]
    if spec.kind == "softmax":
        delta = softmax(_logits(spec, w, X), axis=1)
        delta[np.arange(m), idx] -= 1.0
        return (delta[:, :, None] * X[:, None, :]).reshape(m, -1)
    W1, b1, W2, b2 = _unpack_mlp(spec, w)
    pre, hidden, logits = _mlp_forward(spec, w, X)
    delta = softmax(logits, axis=1)
    delta[np.arange(m), idx] -= 1.0
    # relu'(0) := 0
    dpre = (delta @ W2) * (pre > 0)
    return np.concatenate(
        [
            (dpre[:, :, None] * X[:, None, :]).reshape(m, -1),
            dpre,
            (delta[:, :, None] * hidden[:, None, :]).reshape(m, -1),
            delta,
        ],
        axis=1,
    )


def per_class_grads(spec: ModelSpec, w, X) -> np.ndarray:
    """Gradients as if every example carried each label; shape ``(K, m, P)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.stack(
        [per_example_grads(spec, w, X, np.full(X.shape[0], c)) for c in spec.classes]
    )


def grad(spec: ModelSpec, w, x, y) -> np.ndarray:
    return per_example_grads(spec, w, np.atleast_2d(x), np.atleast_1d(y))[0]


def grad_total(spec: ModelSpec, w, dataset) -> np.ndarray:
    """Gradient of :func:`total_cost`, regularizer included."""
    w = np.asarray(w, dtype=float)
    g = per_example_grads(spec, w, dataset.inputs, dataset.labels).sum(axis=0)
    return g + spec.l2 * w


def sample_labels(spec: ModelSpec, w, X, rng: np.random.Generator) -> np.ndarray:
    """One label per input, drawn from the model's predictive distribution."""
    p = predict_proba(spec, w, X)
    u = rng.random(p.shape[0])
    cdf = np.cumsum(p, axis=1)
    idx = np.minimum((u[:, None] > cdf).sum(axis=1), p.shape[1] - 1)
    return spec.classes[idx]


def sample_label(spec: ModelSpec, w, x, rng: np.random.Generator):
    return sample_labels(spec, w, np.atleast_2d(x), rng)[0]


def hessian_total(spec: ModelSpec, w, dataset) -> np.ndarray:
    """Exact Hessian of the total cost. Logistic regression only."""
    if spec.kind != "logistic":
        raise UnsupportedModelError(f"analytic Hessian not available for {spec.kind!r}")
    w, X = _check(spec, w, dataset.inputs)
    s = expit(X @ w)
    return (X * (s * (1 - s))[:, None]).T @ X + spec.l2 * np.eye(spec.n_params)


@dataclass(frozen=True)
class ScalarToy:
    """One-parameter cost with an analytic metric ``g(u)``.

    ``cost``, ``cost_grad``, ``g`` and ``dg`` act elementwise on arrays, so
    the same toy drives both the generic step functions (through
    ``mean_grad``/``metric``/``metric_derivatives``) and vectorized ensembles.
    ``mean_grad`` divides by ``n_data`` like a dataset-backed problem.
    """

    name: str
    cost: Callable
    cost_grad: Callable
    g: Callable
    dg: Callable
    n_data: int = 1
    dim = 1

    def mean_grad(self, w) -> np.ndarray:
        return np.atleast_1d(self.cost_grad(np.asarray(w, dtype=float)[0])) / self.n_data

    def metric(self, w, rng=None) -> np.ndarray:
        return np.array([[self.g(np.asarray(w, dtype=float)[0])]], dtype=float)

    def metric_derivatives(self, w) -> np.ndarray:
        return np.array([[[self.dg(np.asarray(w, dtype=float)[0])]]], dtype=float)


def _half_square(u):
    return 0.5 * u**2


def _identity(u):
    return u


def exp_metric_toy(rate: float = 2.0) -> ScalarToy:
    """``C(u) = u^2 / 2`` with ``g(u) = exp(rate u)``.

    At ``T = 1`` the Jeffreys-biased stationary law is ``N(rate / 2, 1)``
    and the flat one is ``N(0, 1)``.
    """
    return ScalarToy(
        name=f"exp{rate:g}",
        cost=_half_square,
        cost_grad=_identity,
        g=lambda u: np.exp(rate * u),
        dg=lambda u: rate * np.exp(rate * u),
    )


def quadratic_metric_toy() -> ScalarToy:
    """``C(u) = u^2 / 2`` with ``g(u) = 1 + u^2``; the inverse metric stays bounded."""
    return ScalarToy(
        name="poly",
        cost=_half_square,
        cost_grad=_identity,
        g=lambda u: 1.0 + u**2,
        dg=lambda u: 2.0 * u,
    )


def constant_metric_toy(value: float = 1.0) -> ScalarToy:
    return ScalarToy(
        name=f"const{value:g}",
        cost=_half_square,
        cost_grad=_identity,
        g=lambda u: value + 0.0 * u,
        dg=lambda u: 0.0 * u,
    )


@dataclass(frozen=True)
class QuadraticToy:
    """``C(w) = w.H w / 2`` with a constant metric; Gibbs covariance is ``T H^-1``."""

    hessian: np.ndarray
    metric_matrix: np.ndarray
    n_data: int = 1

    @property
    def dim(self) -> int:
        return np.asarray(self.hessian).shape[0]

    def cost(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return 0.5 * float(w @ np.asarray(self.hessian) @ w)

    def mean_grad(self, w) -> np.ndarray:
        return np.asarray(self.hessian, dtype=float) @ np.asarray(w, dtype=float) / self.n_data

    def metric(self, w, rng=None) -> np.ndarray:
        return np.asarray(self.metric_matrix, dtype=float)

    def metric_derivatives(self, w) -> np.ndarray:
        d = self.dim
        return np.zeros((d, d, d))
