"""Acceptance criteria as runnable checks.

Each ``criterion_*`` function runs one end-to-end check at the package
default seed and returns a :class:`CriterionResult`. Thresholds and runtime
budgets are fixed here and are never tuned per run. :func:`run_acceptance`
runs a selection and is what ``ngd-sampling verify`` calls.
"""
from __future__ import annotations

import importlib.util
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import models
from .data import columnar_to_idx, generate_synthetic_logistic
from .fisher import fisher_derivatives, fisher_exact, gradient_noise_covariance
from .harness import (
    ExperimentConfig,
    run_batch_sweep,
    run_figure1,
    run_fokker_planck_suite,
    run_temperature_sweep,
)
from .metric import MetricMatrix, damp, verify_logdet_identity
from .models import ModelSpec, QuadraticToy
from .oracles import minimize_model
from .samplers import (
    ModelProblem,
    SamplerConfig,
    draw_minibatch,
    gradient_noise,
    sngd_prefactor,
    step_langevin,
    step_minibatch_ngd,
    step_ngd,
    step_precond_static,
    step_riemannian,
    step_sngd,
    temperature,
)

SEED = 0
MNIST_KEYS = ("train_images", "train_labels", "test_images", "test_labels")
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
MNIST_SAMPLE_TEST = 904


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    runtime_s: float
    budget_s: float
    details: dict = field(default_factory=dict)
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.note})" if self.note else ""
        return f"[{status}] criterion {self.number}: {self.title}; {self.runtime_s:.1f}s of {self.budget_s:.0f}s{extra}"


def locate_mnist(cache_dir=None):
    """Paths of the four MNIST IDX files, or None.

    ``NGD_MNIST_DIR`` may name a directory with the standard IDX files.
    Otherwise the 5000-image sample shipped inside the mlxtend package (found
    on disk, never imported) is shuffled with seed 0 and split into a
    4096-image training pool and a 904-image test set, written as IDX files
    under ``cache_dir``.
    """
    env = os.environ.get("NGD_MNIST_DIR")
    if env:
        d = Path(env)
        paths = {k: str(d / f) for k, f in zip(MNIST_KEYS, MNIST_FILES)}
        return paths if all(Path(p).exists() for p in paths.values()) else None
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or not spec.submodule_search_locations:
        return None
    src = Path(list(spec.submodule_search_locations)[0]) / "data" / "data" / "mnist_5k.csv.gz"
    if not src.exists():
        return None
    cache_dir = Path(cache_dir or Path(tempfile.gettempdir()) / "ngd_sampling_mnist")
    cache_dir.mkdir(parents=True, exist_ok=True)
    paths = {k: str(cache_dir / f) for k, f in zip(MNIST_KEYS, MNIST_FILES)}
    if not all(Path(p).exists() for p in paths.values()):
        paths = {k: str(v) for k, v in columnar_to_idx(src, cache_dir, n_test=MNIST_SAMPLE_TEST, seed=0).items()}
    return paths


def _finish(number, title, ok, t0, budget, details, note=""):
    runtime = time.perf_counter() - t0
    if runtime >= budget:
        note = (note + "; " if note else "") + "over runtime budget"
    return CriterionResult(number, title, bool(ok and runtime < budget), runtime, budget, details, note)


# ---------------------------------------------------------------- 1


def criterion_figure1(seed: int = SEED, out_dir=None) -> CriterionResult:
    """Both samplers' covariances and means against the Laplace oracle."""
    t0 = time.perf_counter()
    cfg = ExperimentConfig.preset("figure1", seed=seed)
    with tempfile.TemporaryDirectory() as tmp:
        summary = run_figure1(cfg, out_dir or tmp)
    modes = summary["modes"]
    ok = True
    details = {}
    for label, m in modes.items():
        if m["diverged"]:
            ok = False
            details[label] = "diverged"
            continue
        good = m["cov_frobenius_rel"] < 0.35 and m["mean_mahalanobis"] < 0.5 and m["runtime_s"] < 60
        ok &= good
        details[label] = {k: m[k] for k in ("cov_frobenius_rel", "mean_mahalanobis", "eig_ratio_max", "runtime_s")}
    worst = max((m.get("cov_frobenius_rel", math.inf) for m in modes.values()), default=math.inf)
    return _finish(1, "figure-1 covariances match the Laplace oracle", ok, t0, 60.0 * len(modes), details,
                   f"worst cov_frobenius_rel {worst:.3f}")


# ---------------------------------------------------------------- 2

TEMPERATURE_GRID = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
TEMPERATURE_TARGETS = (0.5, 1.0, 2.0)


def criterion_temperature_sweep(seed: int = SEED, n_seeds: int = 5) -> CriterionResult:
    t0 = time.perf_counter()
    seeds = range(seed, seed + n_seeds)
    curves: dict = {}
    for seed in seeds:
        cfg = ExperimentConfig.preset("sweep-temperature", seed=seed)
        for rule, rows in run_temperature_sweep(cfg).items():
            xent = [math.inf if r.diverged else r.ensemble_cross_entropy for r in rows]
            curves.setdefault(rule, []).append(xent)
    ok = True
    details = {}
    for rule, per_seed in curves.items():
        med = np.median(np.array(per_seed), axis=0)
        T_best = TEMPERATURE_GRID[int(np.argmin(med))]
        ok &= T_best in TEMPERATURE_TARGETS
        details[rule] = {"median_ensemble_xent": med.tolist(), "argmin_T": T_best}
    note = ", ".join(f"{r} min at T={d['argmin_T']}" for r, d in details.items())
    return _finish(2, "temperature-sweep minimum near T=1", ok, t0, 600.0, details, note)


# ---------------------------------------------------------------- 3

BATCH_GRID_1024 = (8, 16, 32, 64, 128, 256, 512, 1024)
BATCH_GRID_4096 = (32, 64, 128, 256, 512, 1024, 2048, 4096)


def _batch_argmin(paths, N, grid, seeds):
    curves = []
    for seed in seeds:
        cfg = ExperimentConfig.preset(
            "sweep-batch", seed=seed,
            **{"data.n_train": N, "sweep.values": ",".join(map(str, grid))},
            **{f"data.{k}": v for k, v in paths.items()},
        )
        curves.append([math.inf if r.diverged else r.ensemble_cross_entropy for r in run_batch_sweep(cfg)])
    med = np.median(np.array(curves), axis=0)
    return int(np.argmin(med)), med


def criterion_batch_sweep(seed: int = SEED, n_seeds: int = 3, cache_dir=None) -> CriterionResult:
    """MLP batch sweeps at two dataset sizes; the optimum should move with N.

    The smaller size takes the median over ``n_seeds`` seeds, the larger one
    a single seed. Diverged chains count as infinite cross-entropy.
    """
    t0 = time.perf_counter()
    seeds_1024, seeds_4096 = range(seed, seed + n_seeds), (seed,)
    paths = locate_mnist(cache_dir)
    if paths is None:
        return _finish(3, "MLP batch-sweep minimum scales with N", False, t0, 1800.0, {}, "MNIST files unavailable")
    i1, med1 = _batch_argmin(paths, 1024, BATCH_GRID_1024, seeds_1024)
    i4, med4 = _batch_argmin(paths, 4096, BATCH_GRID_4096, seeds_4096)
    ok1 = abs(i1 - BATCH_GRID_1024.index(64)) <= 1
    ok4 = abs(i4 - BATCH_GRID_4096.index(256)) <= 1
    details = {
        "N1024": {"grid": BATCH_GRID_1024, "median_ensemble_xent": med1.tolist(), "argmin_B": BATCH_GRID_1024[i1], "pass": ok1},
        "N4096": {"grid": BATCH_GRID_4096, "median_ensemble_xent": med4.tolist(), "argmin_B": BATCH_GRID_4096[i4], "pass": ok4},
    }
    note = f"N=1024 min at B={BATCH_GRID_1024[i1]}, N=4096 min at B={BATCH_GRID_4096[i4]}"
    return _finish(3, "MLP batch-sweep minimum scales with N", ok1 and ok4, t0, 1800.0, details, note)


# ---------------------------------------------------------------- 4


def _rel_frobenius(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def criterion_gradient_noise(seed: int = SEED, N: int = 1000, batches=(50, 250, 500), draws: int = 10_000) -> CriterionResult:
    """Resampled minibatch noise against the stated covariance law.

    The gate is the law ``(N/B)(1 - B/N) Sigma`` as written. Because the
    noise is the minibatch *mean* gradient minus the full mean, its exact
    covariance without replacement is ``(1/B)(1 - B/N) Sigma N/(N-1)``;
    the distance to that law is reported alongside.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    data = generate_synthetic_logistic(N, [16.0, 0.0], rng)
    spec = ModelSpec("logistic", 2)
    w = minimize_model(spec, data)
    problem = ModelProblem(spec, data)
    Sigma = gradient_noise_covariance(spec, w, data)
    ok = True
    details = {}
    for B in batches:
        beta = np.array([gradient_noise(problem, w, draw_minibatch(N, B, rng)) for _ in range(draws)])
        emp = np.cov(beta, rowvar=False)
        stated = (N / B) * (1 - B / N) * Sigma
        mean_law = (1 / B) * (1 - B / N) * Sigma
        err = _rel_frobenius(emp, stated)
        ok &= err < 0.1
        details[B] = {
            "rel_frobenius_stated": err,
            "rel_frobenius_mean_gradient_law": _rel_frobenius(emp, mean_law),
            "trace_ratio_stated_over_empirical": float(np.trace(stated) / np.trace(emp)),
        }
    note = "; ".join(f"B={B}: {d['rel_frobenius_stated']:.3g} vs stated, {d['rel_frobenius_mean_gradient_law']:.3g} vs mean-gradient law"
                     for B, d in details.items())
    return _finish(4, "minibatch noise covariance law", ok, t0, 60.0, details, note)


# ---------------------------------------------------------------- 5


def criterion_fisher_noise(seed: int = SEED, N: int = 10_000) -> CriterionResult:
    t0 = time.perf_counter()
    data = generate_synthetic_logistic(N, [16.0, 0.0], np.random.default_rng(seed))
    spec = ModelSpec("logistic", 2)
    w = minimize_model(spec, data)
    F = fisher_exact(spec, w, data.inputs).matrix
    S = gradient_noise_covariance(spec, w, data)
    rel = _rel_frobenius(S, F)
    return _finish(5, "Fisher approaches the gradient-noise covariance", rel < 0.1, t0, 60.0,
                   {"rel_frobenius": rel, "w_fit": w.tolist()}, f"relative Frobenius {rel:.4f}")


# ---------------------------------------------------------------- 6


def criterion_stationary(seed: int = SEED) -> CriterionResult:
    """exp-metric toy under both Riemannian rules plus SNGD on one-feature logistic regression."""
    t0 = time.perf_counter()
    cfg = ExperimentConfig.preset("fokker-planck", seed=seed, **{"fokker.toys": "exp2"})
    rows = run_fokker_planck_suite(cfg)
    limits = {("exp2", "riemannian_jeffreys"): 0.05, ("exp2", "riemannian_flat"): 0.05, ("logistic1d", "sngd"): 0.08}
    ok = True
    details = {}
    for r in rows:
        limit = limits.get((r["system"], r["rule"]))
        details[f"{r['system']}/{r['rule']}"] = {"tv": r["tv"], "limit": limit, "diverged_chains": r["diverged_chains"]}
        if limit is not None:
            ok &= r["tv"] < limit
    note = ", ".join(f"{k} TV {v['tv']:.3f}" for k, v in details.items())
    return _finish(6, "stationary distributions match quadrature oracles", ok, t0, 300.0, details, note)


# ---------------------------------------------------------------- 7


def _fd_grad(f, w, h=1e-5):
    g = np.empty_like(w)
    for j in range(len(w)):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def _random_spd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + np.eye(d)


def _random_derivs(rng, d):
    D = rng.standard_normal((d, d, d))
    return 0.5 * (D + D.transpose(0, 2, 1))


def criterion_unit_suite(seed: int = SEED) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    checks = {}

    checks["logdet_identity_max_residual"] = max(
        verify_logdet_identity(_random_spd(rng, 3), _random_derivs(rng, 3)) for _ in range(100)
    )
    logdet_ok = checks["logdet_identity_max_residual"] < 1e-4

    # full-batch reductions, bit for bit
    data = generate_synthetic_logistic(300, [1.5, -1.0, 0.5], rng)
    problem = ModelProblem(ModelSpec("logistic", 3, l2=0.5), data)
    w = np.array([0.5, -0.4, 0.2])
    cfg = SamplerConfig("minibatch_ngd", 0.05, batch_size=300, damping=1e-4)
    G = damp(problem.metric(w), 1e-4)
    ngd = step_ngd(problem, w, cfg, G)
    reductions = [
        np.array_equal(step_minibatch_ngd(problem, w, cfg, np.random.default_rng(0), G), ngd),
        np.array_equal(step_sngd(problem, w, SamplerConfig("sngd", 0.05, batch_size=300, damping=1e-4),
                                 np.random.default_rng(0), G), ngd),
    ]
    toy = QuadraticToy(np.diag([2.0, 0.5]), np.array([[2.0, 0.3], [0.3, 1.0]]), n_data=10)
    v = np.array([0.4, -1.1])
    Gt = MetricMatrix(toy.metric(v))
    ref = step_precond_static(toy, v, Gt, SamplerConfig("precond_static", 0.05, temperature=0.7), np.random.default_rng(5))
    for bias in ("jeffreys", "flat"):
        out = step_riemannian(toy, v, SamplerConfig("riemannian_" + bias, 0.05, temperature=0.7), np.random.default_rng(5), bias, Gt)
        reductions.append(np.array_equal(out, ref))
    flat = QuadraticToy(np.diag([2.0, 0.5, 1.0]), np.eye(3), n_data=7)
    u = np.array([0.4, -1.1, 2.0])
    a = step_precond_static(flat, u, np.eye(3), SamplerConfig("precond_static", 0.05, temperature=1.3), np.random.default_rng(8))
    b = step_langevin(flat, u, SamplerConfig("langevin", 0.05, temperature=1.3), np.random.default_rng(8))
    checks["identity_metric_max_abs_diff"] = float(np.max(np.abs(a - b)))
    reductions.append(checks["identity_metric_max_abs_diff"] <= 4 * np.finfo(float).eps * np.max(np.abs(b)))
    checks["reductions_exact"] = all(reductions)

    prefactor = []
    for eps in (Fraction(1, 10), Fraction(1, 8), Fraction(3, 1000)):
        for N in (1, 50, 1000, 4096):
            for B in sorted({1, max(1, N // 3), N}):
                prefactor.append(sngd_prefactor(eps, N, B) == eps * temperature(eps, N, B) / N)
    checks["prefactor_exact"] = all(prefactor)

    # finite-difference gradients, Hessian, Fisher derivatives
    specs = [ModelSpec("logistic", 3), ModelSpec("softmax", 3, n_classes=4), ModelSpec("mlp", 3, n_classes=4, hidden_units=6)]
    worst = 0.0
    for spec in specs:
        for _ in range(100):
            wr = 0.7 * rng.standard_normal(spec.n_params)
            x = rng.standard_normal(3)
            y = rng.choice(spec.classes)
            g = models.grad(spec, wr, x, y)
            fd = _fd_grad(lambda p: models.loss(spec, p, x, y), wr)
            worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-8))
    checks["gradient_fd_max_rel"] = float(worst)
    spec = ModelSpec("logistic", 4, l2=0.1)
    hd = generate_synthetic_logistic(200, [1.0, -2.0, 0.5, 0.0], rng)
    wh = rng.standard_normal(4)
    H = models.hessian_total(spec, wh, hd)
    Hfd = np.column_stack([
        (models.grad_total(spec, wh + e, hd) - models.grad_total(spec, wh - e, hd)) / 2e-5 for e in 1e-5 * np.eye(4)
    ])
    checks["hessian_fd_rel"] = float(np.linalg.norm(H - Hfd) / np.linalg.norm(H))
    X = rng.standard_normal((60, 3))
    wf = rng.standard_normal(3)
    dF = fisher_derivatives(ModelSpec("logistic", 3), wf, X, "analytic")
    dFfd = fisher_derivatives(ModelSpec("logistic", 3), wf, X, "finite_difference")
    checks["fisher_derivative_fd_abs"] = float(np.linalg.norm(dF - dFfd))
    fd_ok = checks["gradient_fd_max_rel"] < 1e-5 and checks["hessian_fd_rel"] < 1e-4 and checks["fisher_derivative_fd_abs"] < 1e-4

    ok = logdet_ok and checks["reductions_exact"] and checks["prefactor_exact"] and fd_ok
    note = f"logdet residual {checks['logdet_identity_max_residual']:.2e}, gradient FD {checks['gradient_fd_max_rel']:.1e}"
    return _finish(7, "identity, reduction and finite-difference suite", ok, t0, 60.0, checks, note)


CRITERIA = {
    1: criterion_figure1,
    2: criterion_temperature_sweep,
    3: criterion_batch_sweep,
    4: criterion_gradient_noise,
    5: criterion_fisher_noise,
    6: criterion_stationary,
    7: criterion_unit_suite,
}


def run_acceptance(only=None, seed: int = SEED, report=print) -> list[CriterionResult]:
    """Run the selected criteria (all by default), reporting one line each."""
    results = []
    for number in sorted(only or CRITERIA):
        if number not in CRITERIA:
            raise ValueError(f"no criterion {number}")
        result = CRITERIA[number](seed=seed)
        if report is not None:
            report(result.line())
        results.append(result)
    return results
