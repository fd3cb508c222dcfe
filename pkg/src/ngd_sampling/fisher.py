"""Fisher information estimates, gradient-noise covariance, metric derivatives."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg.blas import dsyrk
from scipy.special import expit

from . import models
from .metric import MetricMatrix, damp
from .models import ModelSpec, UnsupportedModelError

__all__ = [
    "FisherEstimate",
    "FisherMovingAverage",
    "EXACT_CLASS_LIMIT",
    "fisher_exact",
    "fisher_sampled",
    "fisher_empirical",
    "gradient_noise_covariance",
    "fisher_derivatives",
    "moving_average_update",
    "smoothing_for_learning_rate",
    "fisher_to_json",
    "fisher_from_json",
    "save_fisher_text",
]

EXACT_CLASS_LIMIT = 50
SOURCES = ("exact_expectation", "sampled_labels", "empirical")


@dataclass(frozen=True)
class FisherEstimate:
    """An undamped Fisher matrix and where it came from."""

    matrix: np.ndarray
    source: str
    sample_size: int

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown Fisher source {self.source!r}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def damped(self, delta: float) -> MetricMatrix:
        return damp(self.matrix, delta)


def _gram(J: np.ndarray, scale: float) -> np.ndarray:
    """``scale * J.T @ J`` computed as a symmetric rank-k update."""
    J = np.asarray(J, dtype=float)
    if J.shape[0] == 0:
        return np.zeros((J.shape[1], J.shape[1]))
    upper = dsyrk(scale, J, trans=1)
    return np.triu(upper) + np.triu(upper, 1).T


def fisher_exact(spec: ModelSpec, w, inputs) -> FisherEstimate:
    """Expected outer product of loss gradients under the model's own labels.

    Averages over inputs. Closed form for logistic regression; class
    enumeration otherwise (refused above ``EXACT_CLASS_LIMIT`` classes).
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    m = X.shape[0]
    if spec.kind == "logistic":
        s = expit(X @ np.asarray(w, dtype=float))
        F = (X * (s * (1 - s))[:, None]).T @ X / m
        return FisherEstimate(0.5 * (F + F.T), "exact_expectation", m)
    if spec.n_classes > EXACT_CLASS_LIMIT:
        raise UnsupportedModelError(
            f"exact Fisher enumerates classes; {spec.n_classes} exceeds {EXACT_CLASS_LIMIT}"
        )
    p = models.predict_proba(spec, w, X)
    G = models.per_class_grads(spec, w, X)
    F = np.zeros((spec.n_params, spec.n_params))
    for c in range(G.shape[0]):
        F += _gram(G[c] * np.sqrt(p[:, c])[:, None], 1.0 / m)
    return FisherEstimate(F, "exact_expectation", m)


def fisher_sampled(spec: ModelSpec, w, inputs, rng: np.random.Generator) -> FisherEstimate:
    """Unbiased Fisher estimate from one model-sampled label per input."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = models.sample_labels(spec, w, X, rng)
    J = models.per_example_grads(spec, w, X, y)
    return FisherEstimate(_gram(J, 1.0 / X.shape[0]), "sampled_labels", X.shape[0])


def fisher_empirical(spec: ModelSpec, w, dataset) -> FisherEstimate:
    """Outer product of gradients at the observed labels."""
    J = models.per_example_grads(spec, w, dataset.inputs, dataset.labels)
    return FisherEstimate(_gram(J, 1.0 / dataset.N), "empirical", dataset.N)


def gradient_noise_covariance(spec: ModelSpec, w, dataset) -> np.ndarray:
    """Empirical covariance of per-example gradients (divisor N).

    Equals the empirical Fisher minus the outer product of the mean
    gradient. A minibatch of size B drawn without replacement has gradient
    noise covariance ``(N / B)(1 - B / N)`` times this matrix divided by N.
    """
    J = models.per_example_grads(spec, w, dataset.inputs, dataset.labels)
    centered = J - J.mean(axis=0)
    return _gram(centered, 1.0 / dataset.N)


def fisher_derivatives(
    spec: ModelSpec,
    w,
    inputs,
    mode: str = "analytic",
    step: float = 1e-5,
    label_seed: int | None = None,
) -> np.ndarray:
    """``dF/dw_j`` stacked along the first axis, shape ``(P, P, P)``.

    ``analytic`` is available for logistic regression only. ``finite_difference``
    central-differences :func:`fisher_exact`, or the sampled-label Fisher
    under a frozen seed when ``label_seed`` is given.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    w = np.asarray(w, dtype=float)
    if mode == "analytic":
        if spec.kind != "logistic":
            raise UnsupportedModelError(f"no analytic Fisher derivative for {spec.kind!r}")
        s = expit(X @ w)
        c = s * (1 - s) * (1 - 2 * s) / X.shape[0]
        # dF[j] = sum_i c_i x_ij x_i x_i^T
        return np.einsum("i,ij,ik,il->jkl", c, X, X, X, optimize=True)
    if mode != "finite_difference":
        raise ValueError(f"unknown mode {mode!r}")

    def F(v):
        if label_seed is None:
            return fisher_exact(spec, v, X).matrix
        return fisher_sampled(spec, v, X, np.random.default_rng(label_seed)).matrix

    P = spec.n_params
    out = np.empty((P, P, P))
    for j in range(P):
        e = np.zeros(P)
        e[j] = step
        out[j] = (F(w + e) - F(w - e)) / (2 * step)
    return out


@dataclass(frozen=True)
class FisherMovingAverage:
    current: FisherEstimate
    smoothing: float

    def __post_init__(self):
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError(f"smoothing must lie in [0, 1), got {self.smoothing}")


def moving_average_update(state: FisherMovingAverage, new: FisherEstimate) -> FisherMovingAverage:
    if new.matrix.shape != state.current.matrix.shape:
        raise ValueError("Fisher dimension mismatch in moving average")
    rho = state.smoothing
    mixed = rho * state.current.matrix + (1.0 - rho) * new.matrix
    est = FisherEstimate(mixed, new.source, state.current.sample_size + new.sample_size)
    return replace(state, current=est)


def smoothing_for_learning_rate(eps: float, base: float = 0.95, reference_eps: float = 1e-3) -> float:
    """Smoothing coefficient ``base ** (eps / reference_eps)``."""
    return base ** (eps / reference_eps)


def fisher_to_json(estimate: FisherEstimate) -> str:
    return json.dumps(
        {
            "source": estimate.source,
            "sample_size": estimate.sample_size,
            "dim": estimate.dim,
            "matrix": estimate.matrix.ravel().tolist(),
        }
    )


def fisher_from_json(text: str) -> FisherEstimate:
    d = json.loads(text)
    mat = np.asarray(d["matrix"], dtype=float).reshape(d["dim"], d["dim"])
    return FisherEstimate(mat, d["source"], int(d["sample_size"]))


def save_fisher_text(estimate: FisherEstimate, path) -> None:
    """Dense row-major text, one matrix row per line."""
    header = f"source={estimate.source} sample_size={estimate.sample_size}"
    np.savetxt(path, estimate.matrix, fmt="%.17g", header=header)
