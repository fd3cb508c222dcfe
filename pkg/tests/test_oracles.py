import numpy as np
import pytest
from scipy.stats import norm

from ngd_sampling.data import generate_synthetic_logistic
from ngd_sampling.models import ModelSpec, UnsupportedModelError, total_cost, grad_total
from ngd_sampling.oracles import (
    DensityGrid,
    LaplaceApprox,
    LaplaceError,
    MinimizationError,
    NonIntegrableError,
    density_total_variation,
    gaussian_distance,
    integrated_autocorr_time,
    laplace,
    laplace_from,
    minimize,
    minimize_model,
    stationary_density_1d,
    total_variation,
)

GRID = (-12.0, 12.0, 24001)


def _half_square(u):
    return 0.5 * u**2


def test_minimize_quadratic_in_one_newton_step():
    H = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    calls = []

    def hess(x):
        calls.append(1)
        return H

    x = minimize(lambda x: 0.5 * x @ H @ x - b @ x, lambda x: H @ x - b, np.zeros(2), hess=hess, tol=1e-12)
    assert np.allclose(x, np.linalg.solve(H, b), atol=1e-12)
    assert len(calls) <= 2


def test_minimize_separable_data_with_regularizer():
    r = np.random.default_rng(0)
    X = r.standard_normal((100, 2))
    y = -np.sign(X[:, 0]).astype(int)  # perfectly separable
    from ngd_sampling.data import Dataset

    spec = ModelSpec("logistic", 2, l2=1.0)
    w = minimize_model(spec, Dataset(X, y))
    assert np.linalg.norm(grad_total(spec, w, Dataset(X, y))) < 1e-8
    assert np.all(np.isfinite(w))


def test_minimize_restart_and_determinism():
    spec = ModelSpec("logistic", 3)
    data = generate_synthetic_logistic(500, [1.0, 2.0, -1.0], np.random.default_rng(1))
    w = minimize_model(spec, data)
    assert np.array_equal(minimize_model(spec, data), w)
    assert np.array_equal(minimize_model(spec, data, initial=w), w)


def test_minimize_lbfgs_path_and_failure():
    f = lambda x: float(np.sum((x - 1.0) ** 4 + (x - 1.0) ** 2))
    g = lambda x: 4 * (x - 1.0) ** 3 + 2 * (x - 1.0)
    assert np.allclose(minimize(f, g, np.zeros(3), tol=1e-8), 1.0, atol=1e-8)
    with pytest.raises(MinimizationError, match="gradient norm"):
        minimize(lambda x: float(-x @ x), lambda x: -2 * x, np.ones(2), hess=lambda x: -2 * np.eye(2), max_iter=3)


def test_laplace_quadratic_and_scaling():
    approx = laplace_from(lambda x: 0.5 * x @ x, lambda x: x, lambda x: np.eye(2), np.ones(2))
    assert np.allclose(approx.mode, 0.0) and np.allclose(approx.covariance, np.eye(2))
    spec = ModelSpec("logistic", 2)
    data = generate_synthetic_logistic(1000, [16.0, 0.0], np.random.default_rng(2))
    a1, a3 = laplace(spec, data, 1.0), laplace(spec, data, 3.0)
    assert np.allclose(a3.covariance, 3.0 * a1.covariance, rtol=1e-13)
    assert np.array_equal(a1.covariance, a1.covariance.T)
    assert np.linalg.eigvalsh(a1.covariance).min() > 0
    assert np.linalg.norm(grad_total(spec, a1.mode, data)) < 1e-6
    back = LaplaceApprox.from_json(a1.to_json())
    assert np.array_equal(back.mode, a1.mode) and np.array_equal(back.covariance, a1.covariance)


def test_laplace_rejects_other_models_and_singular_hessians():
    with pytest.raises(UnsupportedModelError):
        laplace(ModelSpec("softmax", 2, n_classes=3), None)
    with pytest.raises(LaplaceError, match="eigenvalues"):
        laplace_from(lambda x: x[0] ** 2, lambda x: np.array([2 * x[0], 0.0]),
                     lambda x: np.diag([2.0, 0.0]), np.zeros(2))


def test_density_standard_normal():
    d = stationary_density_1d(_half_square, lambda u: np.ones_like(u), 1.0, "jeffreys", GRID)
    assert np.max(np.abs(d.density - norm.pdf(d.grid))) < 1e-6
    assert d.normalization == pytest.approx(1.0, abs=1e-6)


def test_density_exp_metric_shifts_mean():
    d = stationary_density_1d(_half_square, lambda u: np.exp(2 * u), 1.0, "jeffreys", GRID)
    assert np.max(np.abs(d.density - norm.pdf(d.grid, loc=1.0))) < 1e-6
    assert d.mean() == pytest.approx(1.0, abs=1e-8)


def test_flat_density_ignores_metric():
    a = stationary_density_1d(_half_square, lambda u: np.exp(2 * u), 1.0, "flat", GRID)
    b = stationary_density_1d(_half_square, lambda u: 1 + u**2, 1.0, "flat", GRID)
    assert np.array_equal(a.density, b.density)
    assert np.max(np.abs(a.density - norm.pdf(a.grid))) < 1e-6


def test_density_errors():
    with pytest.raises(NonIntegrableError):
        stationary_density_1d(lambda u: 0.01 * u**2, lambda u: np.ones_like(u), 1.0, "flat", (-5, 5, 101))
    with pytest.raises(ValueError):
        stationary_density_1d(_half_square, lambda u: u, 1.0, "uniform")
    with pytest.raises(ValueError):
        DensityGrid(np.array([0.0, 0.0, 1.0]), np.ones(3))


def test_density_json_round_trip():
    d = stationary_density_1d(_half_square, lambda u: 1 + u**2, 0.5, "jeffreys", (-8, 8, 801))
    e = DensityGrid.from_json(d.to_json())
    assert np.array_equal(d.grid, e.grid) and np.array_equal(d.density, e.density)


def test_total_variation_examples():
    r = np.random.default_rng(0)
    std = stationary_density_1d(_half_square, lambda u: np.ones_like(u), 1.0, "flat", GRID)
    assert total_variation(r.standard_normal(400_000), std) < 0.01
    assert total_variation(np.full(100, 50.0), std) == 1.0
    assert total_variation(np.array([np.nan, 0.0]), std) >= 0.5
    with pytest.raises(ValueError):
        total_variation(np.array([]), std)


def test_total_variation_shifted_normals():
    std = stationary_density_1d(_half_square, lambda u: np.ones_like(u), 1.0, "flat", GRID)
    shifted = stationary_density_1d(lambda u: 0.5 * (u - 1) ** 2, lambda u: np.ones_like(u), 1.0, "flat", GRID)
    exact = 2 * norm.cdf(0.5) - 1
    assert exact == pytest.approx(0.3829, abs=1e-4)
    assert density_total_variation(std, shifted) == pytest.approx(exact, abs=1e-6)
    samples = np.random.default_rng(1).normal(1.0, 1.0, 1_000_000)
    assert total_variation(samples, std) == pytest.approx(exact, abs=0.01)


def test_density_total_variation_is_a_metric():
    dens = [stationary_density_1d(lambda u, m=m: 0.5 * (u - m) ** 2 / s**2, lambda u: np.ones_like(u), 1.0, "flat", GRID)
            for m, s in ((0.0, 1.0), (0.7, 1.5), (-1.0, 0.6))]
    a, b, c = dens
    assert density_total_variation(a, b) == pytest.approx(density_total_variation(b, a), abs=1e-12)
    assert density_total_variation(a, c) <= density_total_variation(a, b) + density_total_variation(b, c) + 1e-12


def test_gaussian_distance_examples():
    ref = LaplaceApprox(np.array([1.0, 2.0]), np.array([[2.0, 0.5], [0.5, 1.0]]))
    d = gaussian_distance(ref.mode, ref.covariance, ref)
    assert d.mean_mahalanobis == 0.0 and d.cov_frobenius_rel == 0.0
    assert d.eig_ratio_max == pytest.approx(1.0, abs=1e-14)
    d4 = gaussian_distance(ref.mode, 4 * ref.covariance, ref)
    assert d4.cov_frobenius_rel == pytest.approx(3.0) and d4.eig_ratio_max == pytest.approx(4.0)
    with pytest.raises(ValueError):
        gaussian_distance(np.zeros(3), np.eye(3), ref)
    with pytest.raises(LaplaceError):
        gaussian_distance(np.zeros(2), np.eye(2), LaplaceApprox(np.zeros(2), np.zeros((2, 2))))


def test_gaussian_distance_wishart_concentration():
    ref = LaplaceApprox(np.array([5.0, -1.0]), np.array([[0.3, 0.1], [0.1, 0.2]]))
    r = np.random.default_rng(3)
    rels = []
    for _ in range(50):
        x = r.multivariate_normal(ref.mode, ref.covariance, 5000)
        rels.append(gaussian_distance(x.mean(axis=0), np.cov(x, rowvar=False), ref).cov_frobenius_rel)
    assert np.mean(np.array(rels) < 0.1) >= 0.98


def test_autocorrelation_time():
    r = np.random.default_rng(4)
    assert integrated_autocorr_time(r.standard_normal(20_000)) == pytest.approx(1.0, abs=0.15)
    phi = 0.9
    x = np.zeros(100_000)
    for t in range(1, x.size):
        x[t] = phi * x[t - 1] + r.standard_normal()
    assert integrated_autocorr_time(x) == pytest.approx((1 + phi) / (1 - phi), rel=0.15)
