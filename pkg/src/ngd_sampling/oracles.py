"""Reference answers the samplers are checked against.

Deterministic minimization and the Laplace approximation, stationary
densities of one-parameter diffusions by quadrature, and distances between
samples and reference distributions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.optimize as spo

from . import models

__all__ = [
    "MinimizationError",
    "LaplaceError",
    "NonIntegrableError",
    "minimize",
    "minimize_model",
    "LaplaceApprox",
    "laplace",
    "laplace_from",
    "DensityGrid",
    "stationary_density_1d",
    "total_variation",
    "density_total_variation",
    "GaussianDistance",
    "gaussian_distance",
    "integrated_autocorr_time",
]


class MinimizationError(RuntimeError):
    pass


class LaplaceError(np.linalg.LinAlgError):
    pass


class NonIntegrableError(ValueError):
    pass


def minimize(fun, grad, x0, hess=None, tol: float = 1e-8, max_iter: int = 200) -> np.ndarray:
    """Find a point with ``|grad| < tol``.

    Uses damped Newton with backtracking when ``hess`` is given, otherwise
    L-BFGS. Both are deterministic.

    Raises:
        MinimizationError: when ``max_iter`` is exhausted; the message
            carries the final gradient norm.
    """
    x = np.array(x0, dtype=float)
    if hess is None:
        res = spo.minimize(
            fun, x, jac=grad, method="L-BFGS-B",
            options={"gtol": tol, "ftol": 0.0, "maxiter": max_iter * 50, "maxcor": 20},
        )
        x = res.x
        gn = float(np.linalg.norm(grad(x)))
        if gn >= tol:
            raise MinimizationError(f"L-BFGS stopped with gradient norm {gn:.3e} (tol {tol:g}): {res.message}")
        return x

    f = fun(x)
    for _ in range(max_iter):
        g = grad(x)
        gn = float(np.linalg.norm(g))
        if gn < tol:
            return x
        H = hess(x)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = g
        if not np.all(np.isfinite(step)) or step @ g <= 0:
            step = g
        t = 1.0
        while t > 1e-12:
            x_new = x - t * step
            f_new = fun(x_new)
            if f_new <= f - 1e-4 * t * (step @ g):
                break
            t *= 0.5
        else:
            # no descent: at the floating-point floor of f, so accept the full step
            x_new = x - step
            f_new = fun(x_new)
        x, f = x_new, f_new
    gn = float(np.linalg.norm(grad(x)))
    if gn < tol:
        return x
    raise MinimizationError(f"Newton iteration hit {max_iter} steps with gradient norm {gn:.3e}")


def minimize_model(spec, dataset, initial=None, tol: float = 1e-6, max_iter: int = 200) -> np.ndarray:
    """Minimize the total cost of a model; Newton for logistic regression.

    The tolerance applies to the gradient of the summed cost, whose rounding
    floor grows with the dataset size (about 1e-7 at ten thousand examples).
    """
    x0 = np.zeros(spec.n_params) if initial is None else initial
    hess = (lambda w: models.hessian_total(spec, w, dataset)) if spec.kind == "logistic" else None
    return minimize(
        lambda w: models.total_cost(spec, w, dataset),
        lambda w: models.grad_total(spec, w, dataset),
        x0, hess=hess, tol=tol, max_iter=max_iter,
    )


@dataclass(frozen=True)
class LaplaceApprox:
    mode: np.ndarray
    covariance: np.ndarray

    def to_json(self) -> str:
        return json.dumps({"mode": self.mode.tolist(), "covariance": self.covariance.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "LaplaceApprox":
        d = json.loads(text)
        return cls(np.asarray(d["mode"], dtype=float), np.asarray(d["covariance"], dtype=float))


def laplace_from(fun, grad, hess, x0, T: float = 1.0, tol: float = 1e-6) -> LaplaceApprox:
    """Gaussian at the minimum of ``fun`` with covariance ``T H^-1``."""
    mode = minimize(fun, grad, x0, hess=hess, tol=tol)
    H = np.atleast_2d(hess(mode))
    H = 0.5 * (H + H.T)
    eig = np.linalg.eigvalsh(H)
    if eig[0] <= 0:
        raise LaplaceError(f"Hessian at the mode is not positive definite; eigenvalues {eig}")
    cov = T * np.linalg.inv(H)
    return LaplaceApprox(mode, 0.5 * (cov + cov.T))


def laplace(spec, dataset, T: float = 1.0, tol: float = 1e-6) -> LaplaceApprox:
    """Laplace approximation to ``exp(-C / T)`` for logistic regression."""
    if spec.kind != "logistic":
        raise models.UnsupportedModelError("the Laplace oracle is restricted to logistic regression")
    return laplace_from(
        lambda w: models.total_cost(spec, w, dataset),
        lambda w: models.grad_total(spec, w, dataset),
        lambda w: models.hessian_total(spec, w, dataset),
        np.zeros(spec.n_params), T=T, tol=tol,
    )


@dataclass(frozen=True)
class DensityGrid:
    """A normalized density tabulated on a strictly increasing grid."""

    grid: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        p = np.asarray(self.density, dtype=float)
        if g.ndim != 1 or g.shape != p.shape or np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing and match the density")
        if np.any(p < 0):
            raise ValueError("density must be non-negative")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "density", p)

    @property
    def normalization(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def cdf(self, x) -> np.ndarray:
        steps = 0.5 * (self.density[1:] + self.density[:-1]) * np.diff(self.grid)
        c = np.concatenate([[0.0], np.cumsum(steps)])
        return np.interp(x, self.grid, c, left=0.0, right=c[-1])

    def bin_probabilities(self, edges) -> np.ndarray:
        return np.diff(self.cdf(np.asarray(edges, dtype=float)))

    def mean(self) -> float:
        return float(np.trapezoid(self.grid * self.density, self.grid))

    def quantile(self, q: float) -> float:
        c = self.cdf(self.grid)
        return float(np.interp(q, c, self.grid))

    def to_json(self) -> str:
        return json.dumps({"grid": self.grid.tolist(), "density": self.density.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "DensityGrid":
        d = json.loads(text)
        return cls(np.asarray(d["grid"]), np.asarray(d["density"]))


def stationary_density_1d(cost_fn, metric_fn, T: float = 1.0, bias: str = "jeffreys", grid_spec=(-10.0, 10.0, 20001)) -> DensityGrid:
    """``exp(-C/T) |g|^{1/2}`` (``jeffreys``) or ``exp(-C/T)`` (``flat``), normalized.

    ``cost_fn`` and ``metric_fn`` must act elementwise on arrays.
    ``grid_spec`` is ``(lo, hi, n)`` or an explicit grid.

    Raises:
        NonIntegrableError: if the density has not decayed at the grid ends.
    """
    if bias not in ("jeffreys", "flat"):
        raise ValueError(f"bias must be 'jeffreys' or 'flat', got {bias!r}")
    if isinstance(grid_spec, tuple) and len(grid_spec) == 3:
        lo, hi, n = grid_spec
        u = np.linspace(lo, hi, int(n))
    else:
        u = np.asarray(grid_spec, dtype=float)
    logp = -np.asarray(cost_fn(u), dtype=float) / T
    if bias == "jeffreys":
        logp = logp + 0.5 * np.log(np.abs(np.asarray(metric_fn(u), dtype=float)))
    if not np.all(np.isfinite(logp)):
        raise NonIntegrableError("log-density is not finite on the grid")
    p = np.exp(logp - logp.max())
    if max(p[0], p[-1]) > 1e-10:
        raise NonIntegrableError(
            f"density has not decayed at the grid ends (relative values {p[0]:.2e}, {p[-1]:.2e}); "
            "widen the grid or check integrability"
        )
    p /= np.trapezoid(p, u)
    return DensityGrid(u, p)


def total_variation(samples, oracle: DensityGrid, bins: int = 50, edges=None) -> float:
    """Histogram total-variation distance ``1/2 sum |p_hat - p|`` in [0, 1].

    Bins span the oracle's central 1 - 2e-4 mass unless ``edges`` is given.
    Extra bins hold the oracle tails between the edges and the ends of its
    grid, samples beyond the grid (where the oracle has no mass) and
    non-finite samples.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot compare an empty chain")
    if edges is None:
        edges = np.linspace(oracle.quantile(1e-4), oracle.quantile(1 - 1e-4), bins + 1)
    edges = np.asarray(edges, dtype=float)
    lo, hi = oracle.grid[0], oracle.grid[-1]
    finite = x[np.isfinite(x)]
    counts, _ = np.histogram(finite, edges)
    tails = [
        np.sum((finite >= lo) & (finite < edges[0])),
        np.sum((finite > edges[-1]) & (finite <= hi)),
        np.sum((finite < lo) | (finite > hi)) + (x.size - finite.size),
    ]
    p_hat = np.concatenate([counts, tails]) / x.size
    total = oracle.cdf(hi)
    q = np.concatenate([oracle.bin_probabilities(edges), [oracle.cdf(edges[0]), total - oracle.cdf(edges[-1]), 0.0]]) / total
    return float(min(1.0, 0.5 * np.abs(p_hat - q).sum()))


def density_total_variation(p: DensityGrid, q: DensityGrid, n: int = 20001) -> float:
    """Total variation between two tabulated densities by quadrature."""
    lo = min(p.grid[0], q.grid[0])
    hi = max(p.grid[-1], q.grid[-1])
    u = np.linspace(lo, hi, n)
    a = np.interp(u, p.grid, p.density, left=0.0, right=0.0)
    b = np.interp(u, q.grid, q.density, left=0.0, right=0.0)
    return float(0.5 * np.trapezoid(np.abs(a - b), u))


class GaussianDistance(NamedTuple):
    mean_mahalanobis: float
    cov_frobenius_rel: float
    eig_ratio_max: float


def gaussian_distance(sample_mean, sample_cov, reference: LaplaceApprox) -> GaussianDistance:
    """Compare sample moments with a reference Gaussian.

    Returns the Mahalanobis distance of the means under the reference
    covariance, ``|S - R|_F / |R|_F``, and the largest eigenvalue of
    ``S R^-1``.
    """
    m = np.atleast_1d(np.asarray(sample_mean, dtype=float))
    S = np.atleast_2d(np.asarray(sample_cov, dtype=float))
    R = np.atleast_2d(np.asarray(reference.covariance, dtype=float))
    if S.shape != R.shape or m.shape != reference.mode.shape:
        raise ValueError("dimension mismatch between samples and reference")
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise LaplaceError(f"reference covariance is singular: eigenvalues {np.linalg.eigvalsh(R)}") from exc
    d = np.linalg.solve(L, m - reference.mode)
    W = np.linalg.solve(L, np.linalg.solve(L, S).T)
    eig = np.linalg.eigvalsh(0.5 * (W + W.T))
    rel = np.linalg.norm(S - R) / np.linalg.norm(R)
    return GaussianDistance(float(np.linalg.norm(d)), float(rel), float(eig[-1]))


def integrated_autocorr_time(x, max_lag: int | None = None) -> float:
    """Integrated autocorrelation time with Sokal's adaptive window (c = 5)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return 1.0
    y = x - x.mean()
    f = np.fft.rfft(y, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    if acf[0] == 0:
        return 1.0
    acf /= acf[0]
    max_lag = n - 1 if max_lag is None else min(max_lag, n - 1)
    tau = 1.0
    for k in range(1, max_lag + 1):
        tau += 2.0 * acf[k]
        if k >= 5.0 * tau:
            break
    return max(tau, 1.0)
