import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ngd_sampling.metric import (
    FactorizationError,
    MetricMatrix,
    damp,
    draw_noise,
    factorize,
    flat_correction,
    inverse,
    jeffreys_correction,
    log_det,
    solve,
    verify_logdet_identity,
)

from conftest import random_spd


def test_damp_zero_matrix_gives_scaled_identity():
    G = damp(np.zeros((2, 2)), 0.1)
    assert np.array_equal(G.entries, 0.1 * np.eye(2))
    assert G.damping == 0.1


def test_damp_identity_no_shift():
    assert np.array_equal(damp(np.eye(3), 0.0).entries, np.eye(3))


def test_damp_rejects_negative():
    with pytest.raises(ValueError):
        damp(np.eye(2), -1e-3)


def test_damp_rescues_slightly_indefinite_matrix(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    F = Q @ np.diag([-1e-6, 1e-3, 1.0, 2.0]) @ Q.T
    G = damp(F, 1e-4)
    L = factorize(G)
    assert np.allclose(L @ L.T, G.entries, atol=1e-12)
    assert np.linalg.eigvalsh(G.entries).min() >= 1e-4 - 1e-6 - 1e-10


def test_symmetrized_on_construction():
    M = np.array([[1.0, 0.2], [0.2 + 1e-9, 1.0]])
    G = MetricMatrix(M)
    assert np.array_equal(G.entries, G.entries.T)


def test_factorize_simple_cases():
    assert np.array_equal(factorize(np.eye(3)), np.eye(3))
    assert np.allclose(factorize(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


def test_factorize_reconstructs_random_spd(rng):
    G = random_spd(rng, 6)
    L = factorize(G)
    assert np.allclose(L, np.tril(L))
    assert np.linalg.norm(L @ L.T - G) / np.linalg.norm(G) < 1e-10


def test_factorize_jitter_escalation_then_failure():
    # semi-definite: rescued by jitter
    G = MetricMatrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    factorize(G)
    assert G.damping > 0
    # strongly indefinite: three retries are not enough
    with pytest.raises(FactorizationError, match="eigenvalue"):
        factorize(np.diag([1.0, -5.0]))


def test_solve_examples(rng):
    v = rng.standard_normal(3)
    assert np.allclose(solve(np.eye(3), v), v)
    assert np.allclose(solve(np.diag([2.0, 4.0]), np.array([2.0, 4.0])), [1.0, 1.0])
    G = random_spd(rng, 8)
    u = solve(G, v := rng.standard_normal(8))
    assert np.linalg.norm(G @ u - v) / np.linalg.norm(v) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**31))
def test_solve_inverts_product(d, seed):
    r = np.random.default_rng(seed)
    G = random_spd(r, d, shift=0.5)
    v = r.standard_normal(d)
    assert np.linalg.norm(solve(G, G @ v) - v) / np.linalg.norm(v) < 1e-8


def test_inverse_matches_numpy(rng):
    G = random_spd(rng, 5)
    assert np.allclose(inverse(G), np.linalg.inv(G), rtol=1e-10, atol=1e-12)


def test_log_det():
    assert log_det(np.eye(4)) == 0.0
    assert log_det(np.diag([np.e, np.e**2])) == pytest.approx(3.0, abs=1e-14)


def test_log_det_against_eigenvalues(rng):
    G = random_spd(rng, 7)
    assert abs(log_det(G) - np.log(np.linalg.eigvalsh(G)).sum()) < 1e-8


def test_log_det_monotone_in_damping(rng):
    A = rng.standard_normal((5, 3))
    F = A @ A.T  # rank deficient PSD
    values = [log_det(damp(F, d)) for d in (1e-6, 1e-4, 1e-2, 1.0, 10.0)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_draw_noise_zero_temperature(rng):
    nd = draw_noise(np.eye(3), 0.0, 0.1, 100, rng)
    assert np.array_equal(nd.vector, np.zeros(3))
    assert nd.scale == 0.0


def test_draw_noise_identity_covariance():
    eps, N = 0.1, 50
    T = eps * N / 2  # scale 2T/(eps N) = 1
    r = np.random.default_rng(1)
    draws = np.array([draw_noise(np.eye(2), T, eps, N, r).vector for _ in range(100_000)])
    C = np.cov(draws, rowvar=False)
    assert np.all(np.abs(C - np.eye(2)) < 0.05)
    assert np.all(np.abs(draws.mean(axis=0)) < 0.02)


def test_draw_noise_variance_ratio():
    r = np.random.default_rng(2)
    G = MetricMatrix(np.diag([1.0, 4.0]))
    draws = np.array([draw_noise(G, 1.0, 0.2, 10, r).vector for _ in range(100_000)])
    var = draws.var(axis=0)
    assert var[1] / var[0] == pytest.approx(4.0, rel=0.05)
    assert var[0] == pytest.approx(1.0, rel=0.05)  # 2T/(eps N) = 1


def _naive_corrections(G, dG):
    Gi = np.linalg.inv(G)
    d = G.shape[0]
    first = np.zeros(d)
    second = np.zeros(d)
    for i in range(d):
        for j in range(d):
            first[i] += (Gi @ dG[j] @ Gi)[i, j]
            second[i] += Gi[i, j] * np.trace(Gi @ dG[j])
    return first, second


def _random_derivs(rng, d):
    dG = rng.standard_normal((d, d, d))
    return dG + dG.transpose(0, 2, 1)


def test_corrections_vanish_for_constant_metric(rng):
    G = random_spd(rng, 3)
    zero = np.zeros((3, 3, 3))
    assert np.array_equal(jeffreys_correction(G, zero), np.zeros(3))
    assert np.array_equal(flat_correction(G, zero), np.zeros(3))


def test_corrections_one_dimensional_exp_metric():
    for w in (-0.7, 0.0, 1.3):
        g = np.exp(2 * w)
        G = np.array([[g]])
        dG = np.array([[[2 * g]]])
        assert jeffreys_correction(G, dG)[0] == pytest.approx(np.exp(-2 * w), rel=1e-13)
        assert flat_correction(G, dG)[0] == pytest.approx(2 * np.exp(-2 * w), rel=1e-13)


def test_corrections_match_naive_formula(rng):
    for _ in range(20):
        G = random_spd(rng, 3)
        dG = _random_derivs(rng, 3)
        first, second = _naive_corrections(G, dG)
        assert np.allclose(jeffreys_correction(G, dG), first - 0.5 * second, rtol=1e-8, atol=1e-10)
        assert np.allclose(flat_correction(G, dG), first, rtol=1e-8, atol=1e-10)
        diff = flat_correction(G, dG) - jeffreys_correction(G, dG)
        assert np.allclose(diff, 0.5 * second, rtol=1e-8, atol=1e-10)


def test_jeffreys_correction_linear_in_derivatives(rng):
    G = random_spd(rng, 4)
    dG = _random_derivs(rng, 4)
    for a in (-2.0, 0.5, 3.0):
        assert np.allclose(jeffreys_correction(G, a * dG), a * jeffreys_correction(G, dG), rtol=1e-12, atol=1e-14)


def test_correction_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        jeffreys_correction(np.eye(3), np.zeros((2, 3, 3)))


def test_logdet_identity_constant_metric(rng):
    assert verify_logdet_identity(random_spd(rng, 3), np.zeros((3, 3, 3))) == 0.0


def test_logdet_identity_one_dimensional():
    w = 1.0
    G = np.array([[1 + w**2]])
    dG = np.array([[[2 * w]]])
    assert verify_logdet_identity(G, dG, step=1e-5) < 1e-5


def test_logdet_identity_random_metrics(rng):
    worst = max(verify_logdet_identity(random_spd(rng, 3), _random_derivs(rng, 3)) for _ in range(100))
    assert worst < 1e-4


def test_logdet_identity_residual_shrinks_quadratically(rng):
    G = random_spd(rng, 3)
    dG = 5 * _random_derivs(rng, 3)
    r1 = verify_logdet_identity(G, dG, step=1e-2)
    r2 = verify_logdet_identity(G, dG, step=5e-3)
    assert r2 < r1
    assert r1 / r2 == pytest.approx(4.0, rel=0.1)
