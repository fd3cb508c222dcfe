"""Dense SPD metric algebra used by every preconditioned update rule.

A metric is stored as a :class:`MetricMatrix`, which symmetrizes its entries
on construction and caches a lower Cholesky factor. Metric derivatives are
plain ``(d, d, d)`` arrays where ``dG[j]`` is the derivative of the metric
with respect to the j-th parameter.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

__all__ = [
    "FactorizationError",
    "MetricMatrix",
    "NoiseDraw",
    "as_metric",
    "damp",
    "factorize",
    "solve",
    "inverse",
    "log_det",
    "draw_noise",
    "jeffreys_correction",
    "flat_correction",
    "verify_logdet_identity",
]

JITTER_RETRIES = 3
JITTER_GROWTH = 10.0


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a metric stays indefinite after jitter escalation."""


class MetricMatrix:
    """Symmetric positive-definite matrix with a lazily computed factor.

    Args:
        entries: square array. It is replaced by ``(M + M.T) / 2``.
        damping: the multiple of the identity already folded into
            ``entries``. Bookkeeping only; jitter escalation may raise it.
    """

    def __init__(self, entries, damping: float = 0.0):
        a = np.atleast_2d(np.asarray(entries, dtype=float))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"metric must be square, got shape {a.shape}")
        self.entries = 0.5 * (a + a.T)
        self.damping = float(damping)
        self._factor = None
        self._inverse = None

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def factor(self) -> np.ndarray:
        if self._factor is None:
            self._factor = factorize(self)
        return self._factor

    def __repr__(self):
        return f"MetricMatrix(dim={self.dim}, damping={self.damping:g})"


def as_metric(G) -> MetricMatrix:
    return G if isinstance(G, MetricMatrix) else MetricMatrix(G)


def damp(F, delta: float) -> MetricMatrix:
    """Return ``F + delta * I``."""
    if delta < 0:
        raise ValueError(f"damping must be non-negative, got {delta}")
    F = as_metric(F)
    return MetricMatrix(F.entries + delta * np.eye(F.dim), damping=F.damping + delta)


def factorize(G) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``L @ L.T == G``.

    On failure the diagonal is shifted by a jitter that grows tenfold per
    retry, starting from ten times the current damping (or a trace-scaled
    floor when undamped). ``G.damping`` records the shift that succeeded.
    Raises :class:`FactorizationError` after ``JITTER_RETRIES`` retries.
    """
    G = as_metric(G)
    a = G.entries
    try:
        return sla.cholesky(a, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        if not np.all(np.isfinite(a)):
            raise FactorizationError("metric has non-finite entries")
    scale = max(np.trace(np.abs(a)) / G.dim, 1.0)
    base = G.damping if G.damping > 0 else 1e-10 * scale
    jitter = base
    for _ in range(JITTER_RETRIES):
        jitter *= JITTER_GROWTH
        try:
            L = sla.cholesky(a + jitter * np.eye(G.dim), lower=True)
        except np.linalg.LinAlgError:
            continue
        G.entries = a + jitter * np.eye(G.dim)
        G.damping += jitter
        G._inverse = None
        return L
    w = np.linalg.eigvalsh(a)
    raise FactorizationError(
        f"metric not positive definite after {JITTER_RETRIES} jitter retries "
        f"(last jitter {jitter:.3g}); eigenvalue range [{w[0]:.3g}, {w[-1]:.3g}]"
    )


def solve(G, v) -> np.ndarray:
    """Solve ``G u = v`` via the cached factor."""
    G = as_metric(G)
    return sla.cho_solve((G.factor, True), np.asarray(v, dtype=float))


def inverse(G) -> np.ndarray:
    G = as_metric(G)
    if G._inverse is None:
        inv = solve(G, np.eye(G.dim))
        G._inverse = 0.5 * (inv + inv.T)
    return G._inverse


def log_det(G) -> float:
    G = as_metric(G)
    return 2.0 * float(np.sum(np.log(np.diag(G.factor))))


@dataclass(frozen=True)
class NoiseDraw:
    vector: np.ndarray
    scale: float


def draw_noise(G, T: float, eps: float, N: int, rng: np.random.Generator) -> NoiseDraw:
    """Gaussian noise with covariance ``2 T G / (eps N)``.

    A standard normal vector is always drawn, also at ``T == 0``, so that
    generator streams stay aligned across rules and temperatures.
    """
    if T < 0 or eps <= 0 or N < 1:
        raise ValueError(f"need T >= 0, eps > 0, N >= 1 (got {T}, {eps}, {N})")
    G = as_metric(G)
    scale = 2.0 * T / (eps * N)
    z = rng.standard_normal(G.dim)
    if T == 0:
        return NoiseDraw(np.zeros(G.dim), 0.0)
    return NoiseDraw(np.sqrt(scale) * (G.factor @ z), scale)


def _check_derivs(G: MetricMatrix, dG) -> np.ndarray:
    dG = np.asarray(dG, dtype=float)
    d = G.dim
    if dG.shape != (d, d, d):
        raise ValueError(f"metric derivatives must have shape {(d, d, d)}, got {dG.shape}")
    return dG


def _correction_terms(G, dG):
    G = as_metric(G)
    dG = _check_derivs(G, dG)
    Ginv = inverse(G)
    # sum_j (Ginv dG_j Ginv)_ij = (Ginv @ v)_i with v_k = sum_{j,l} dG_j[k,l] Ginv[l,j]
    first = Ginv @ np.einsum("jkl,lj->k", dG, Ginv)
    traces = np.einsum("jkl,lk->j", dG, Ginv)
    second = Ginv @ traces
    return first, second


def jeffreys_correction(G, dG) -> np.ndarray:
    """Drift correction whose stationary law carries a ``|det G|^{1/2}`` factor.

    Component ``i`` is
    ``sum_j (G^-1 dG_j G^-1)_ij - 1/2 sum_j (G^-1)_ij Tr(G^-1 dG_j)``.
    Callers multiply by their own prefactor (``eps T / N`` in the update).
    """
    first, second = _correction_terms(G, dG)
    return first - 0.5 * second


def flat_correction(G, dG) -> np.ndarray:
    """First term of :func:`jeffreys_correction` only (no metric bias)."""
    first, _ = _correction_terms(G, dG)
    return first


def verify_logdet_identity(G, dG, step: float = 1e-5) -> float:
    """Max residual of the divergence identity behind the Riemannian drift.

    Checks, for each direction ``j``,
    ``|g|^{-1/2} d_j (g^{-1} |g|^{1/2}) = -g^{-1} (d_j g) g^{-1}
    + 1/2 g^{-1} Tr(g^{-1} d_j g)``
    with the left side taken by central differences along ``g + h dG_j``.
    """
    G = as_metric(G)
    dG = _check_derivs(G, dG)
    g = G.entries
    ginv = np.linalg.inv(g)
    sqrt_det = np.sqrt(abs(np.linalg.det(g)))

    def h(m):
        return np.linalg.inv(m) * np.sqrt(abs(np.linalg.det(m)))

    worst = 0.0
    for j in range(G.dim):
        lhs = (h(g + step * dG[j]) - h(g - step * dG[j])) / (2 * step) / sqrt_det
        rhs = -ginv @ dG[j] @ ginv + 0.5 * ginv * np.trace(ginv @ dG[j])
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst
