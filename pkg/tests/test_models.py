import numpy as np
import pytest
from scipy.stats import chisquare

from ngd_sampling import models
from ngd_sampling.data import Dataset, generate_synthetic_logistic
from ngd_sampling.models import ModelSpec, UnsupportedModelError

LOGISTIC = ModelSpec("logistic", 3)
SOFTMAX = ModelSpec("softmax", 4, n_classes=5)
MLP = ModelSpec("mlp", 3, n_classes=4, hidden_units=6)
ALL = [LOGISTIC, SOFTMAX, MLP]


def _random_case(spec, rng, m=1):
    w = rng.standard_normal(spec.n_params) * 0.7
    X = rng.standard_normal((m, spec.input_dim))
    y = rng.choice(spec.classes, size=m)
    return w, X, y


def test_parameter_counts():
    assert LOGISTIC.n_params == 3
    assert SOFTMAX.n_params == 20
    assert MLP.n_params == 6 * 3 + 6 + 4 * 6 + 4
    assert ModelSpec("mlp", 10, n_classes=10).n_params == 40 * 10 + 40 + 10 * 40 + 10


def test_invalid_spec():
    with pytest.raises(ValueError):
        ModelSpec("cnn", 3)
    with pytest.raises(ValueError):
        ModelSpec("logistic", 2, l2=-1.0)


def test_logistic_predict_examples():
    spec = ModelSpec("logistic", 2)
    assert np.allclose(models.predict(spec, np.zeros(2), [0.3, -2.0]), [0.5, 0.5])
    p = models.predict(spec, np.array([16.0, 0.0]), [1.0, 0.0])
    # column 0 is the label -1
    assert p[0] == pytest.approx(1 / (1 + np.exp(-16.0)), rel=1e-15)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_softmax_zero_parameters_uniform(rng):
    p = models.predict_proba(SOFTMAX, np.zeros(SOFTMAX.n_params), rng.standard_normal((7, 4)))
    assert np.allclose(p, 0.2)


@pytest.mark.parametrize("spec", ALL, ids=lambda s: s.kind)
def test_probabilities_are_distributions(spec, rng):
    w, X, _ = _random_case(spec, rng, 50)
    P = models.predict_proba(spec, 5 * w, X)
    assert np.all(P >= 0)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        models.predict(LOGISTIC, np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        models.predict(LOGISTIC, np.zeros(3), np.zeros(4))


def test_softmax_class_permutation_equivariance(rng):
    w, X, _ = _random_case(SOFTMAX, rng, 10)
    perm = rng.permutation(5)
    W = w.reshape(5, 4)
    P = models.predict_proba(SOFTMAX, w, X)
    Pp = models.predict_proba(SOFTMAX, W[perm].ravel(), X)
    assert np.allclose(Pp, P[:, perm], atol=1e-15)


def test_loss_examples(rng):
    assert models.loss(LOGISTIC, np.zeros(3), rng.standard_normal(3), 1) == pytest.approx(np.log(2), rel=1e-15)
    # saturated correct prediction: clamped at -log(1 - 1e-12) ~ 1e-12
    spec = ModelSpec("logistic", 1)
    assert models.loss(spec, np.array([100.0]), [1.0], -1) == pytest.approx(0.0, abs=2e-12)
    assert models.loss(spec, np.array([100.0]), [1.0], 1) == pytest.approx(-np.log(1e-12))


@pytest.mark.parametrize("spec", ALL, ids=lambda s: s.kind)
def test_loss_is_minus_log_predict(spec, rng):
    w, X, y = _random_case(spec, rng, 20)
    P = models.predict_proba(spec, w, X)
    idx = models.label_index(spec, y)
    assert np.allclose(models.losses(spec, w, X, y), -np.log(P[np.arange(20), idx]), atol=1e-12)


def test_total_cost_examples(rng):
    w, X, y = _random_case(LOGISTIC, rng, 1)
    one = Dataset(X, y)
    assert models.total_cost(LOGISTIC, w, one) == pytest.approx(models.loss(LOGISTIC, w, X[0], y[0]), rel=1e-15)
    spec = ModelSpec("logistic", 3, l2=2.5)
    data = Dataset(*_random_case(spec, rng, 10)[1:])
    assert models.total_cost(spec, np.zeros(3), data) == pytest.approx(10 * np.log(2), rel=1e-14)


def test_total_cost_additive_and_shuffle_invariant(rng):
    spec = ModelSpec("softmax", 4, n_classes=5, l2=0.3)
    w, X, y = _random_case(spec, rng, 30)
    data = Dataset(X, y)
    a, b = data.subset(np.arange(12)), data.subset(np.arange(12, 30))
    reg = 0.5 * spec.l2 * w @ w
    assert models.total_cost(spec, w, data) == pytest.approx(
        models.total_cost(spec, w, a) + models.total_cost(spec, w, b) - reg, rel=1e-13
    )
    shuffled = data.subset(rng.permutation(30))
    assert models.total_cost(spec, w, shuffled) == pytest.approx(models.total_cost(spec, w, data), rel=1e-13)


def test_logistic_gradient_at_zero(rng):
    # with P(y|x) = 1/(1+exp(y w.x)), dL/dw = y sigmoid(y w.x) x, i.e. y x / 2 at w = 0
    X = rng.standard_normal((5, 3))
    y = np.array([1, -1, 1, 1, -1])
    G = models.per_example_grads(LOGISTIC, np.zeros(3), X, y)
    assert np.allclose(G, 0.5 * y[:, None] * X, atol=1e-15)


def _fd_grad(f, w, h=1e-5):
    g = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (f(w + e) - f(w - e)) / (2 * h)
    return g


@pytest.mark.parametrize("spec", ALL, ids=lambda s: s.kind)
def test_gradients_match_finite_differences(spec):
    r = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        w, X, y = _random_case(spec, r)
        g = models.grad(spec, w, X[0], y[0])
        fd = _fd_grad(lambda v: models.loss(spec, v, X[0], y[0]), w)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-8))
    assert worst < 1e-5


def test_grad_total_includes_regularizer_and_is_additive(rng):
    spec = ModelSpec("mlp", 3, n_classes=4, hidden_units=6, l2=0.7)
    w, X, y = _random_case(spec, rng, 40)
    data = Dataset(X, y)
    fd = _fd_grad(lambda v: models.total_cost(spec, v, data), w)
    g = models.grad_total(spec, w, data)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6
    a, b = data.subset(np.arange(15)), data.subset(np.arange(15, 40))
    assert np.allclose(
        models.grad_total(spec, w, a.concat(b)), models.grad_total(spec, w, a) + models.grad_total(spec, w, b) - spec.l2 * w
    )


@pytest.mark.parametrize("spec", [LOGISTIC, SOFTMAX], ids=lambda s: s.kind)
def test_expected_score_vanishes(spec, rng):
    w, X, _ = _random_case(spec, rng, 25)
    P = models.predict_proba(spec, w, X)
    G = models.per_class_grads(spec, w, X)
    expected = np.einsum("im,mip->ip", P, G)
    assert np.linalg.norm(expected) < 1e-10


def test_sample_label_deterministic_and_frequency(rng):
    spec = ModelSpec("logistic", 1)
    assert models.sample_label(spec, np.array([800.0]), [1.0], rng) == -1
    ys = models.sample_labels(spec, np.zeros(1), np.ones((10_000, 1)), rng)
    assert abs(np.mean(ys == 1) - 0.5) < 0.02


def test_sample_labels_uniform_softmax(rng):
    ys = models.sample_labels(SOFTMAX, np.zeros(SOFTMAX.n_params), np.ones((10_000, 4)), rng)
    counts = np.bincount(ys, minlength=5)
    assert chisquare(counts).pvalue > 1e-3


def test_hessian_examples(rng):
    spec = ModelSpec("logistic", 3, l2=0.4)
    x = rng.standard_normal(3)
    H = models.hessian_total(spec, np.zeros(3), Dataset(x[None], np.array([1])))
    assert np.allclose(H, 0.25 * np.outer(x, x) + 0.4 * np.eye(3))
    with pytest.raises(UnsupportedModelError):
        models.hessian_total(MLP, np.zeros(MLP.n_params), Dataset(np.zeros((1, 3)), np.array([0])))


def test_hessian_matches_gradient_differences(rng):
    spec = ModelSpec("logistic", 4, l2=0.1)
    data = generate_synthetic_logistic(200, [1.0, -2.0, 0.5, 0.0], rng)
    w = rng.standard_normal(4)
    H = models.hessian_total(spec, w, data)
    fd = np.column_stack([
        (models.grad_total(spec, w + e, data) - models.grad_total(spec, w - e, data)) / 2e-5
        for e in 1e-5 * np.eye(4)
    ])
    assert np.linalg.norm(H - fd) / np.linalg.norm(H) < 1e-4
    assert np.linalg.eigvalsh(H).min() > 0


def test_mlp_init_is_reproducible():
    a = models.init_params(MLP, np.random.default_rng(3))
    b = models.init_params(MLP, np.random.default_rng(3))
    assert np.array_equal(a, b)
    assert np.array_equal(models.init_params(LOGISTIC), np.zeros(3))


def test_relu_subgradient_at_zero():
    spec = ModelSpec("mlp", 1, n_classes=2, hidden_units=1)
    # W1 = 1, b1 = 0, W2 = (1, -1), b2 = 0; input 0 puts the unit exactly at the kink
    w = np.array([1.0, 0.0, 1.0, -1.0, 0.0, 0.0])
    g = models.grad(spec, w, [0.0], 0)
    assert g[0] == 0.0 and g[1] == 0.0


def test_toys():
    toy = models.exp_metric_toy()
    assert toy.metric(np.array([0.5]))[0, 0] == pytest.approx(np.e)
    assert toy.metric_derivatives(np.array([0.5]))[0, 0, 0] == pytest.approx(2 * np.e)
    assert toy.mean_grad(np.array([0.3]))[0] == pytest.approx(0.3)
    q = models.QuadraticToy(np.diag([1.0, 4.0]), np.eye(2), n_data=2)
    assert np.allclose(q.mean_grad(np.ones(2)), [0.5, 2.0])
    assert np.array_equal(q.metric_derivatives(np.ones(2)), np.zeros((2, 2, 2)))
