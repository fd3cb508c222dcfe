"""Preconditioned Langevin and natural-gradient update rules, and chain runners.

Every rule works on a *problem* object exposing ``dim``, ``n_data``,
``mean_grad(w)`` (the full-batch gradient of the summed cost divided by
``n_data``), ``metric(w, rng)`` (undamped) and ``metric_derivatives(w)``.
Minibatch rules also need ``minibatch_mean_grad(w, idx)``.
:class:`ModelProblem` wraps a model and dataset; the toys in
:mod:`ngd_sampling.models` implement the same interface.

Rules
-----
``langevin``             ``dw = -eps (grad/N + a)``, ``Cov a = 2T I/(eps N)``
``precond_static``       ``dw = -eps G^-1 (grad/N + a)``, ``Cov a = 2T G/(eps N)``
``riemannian_jeffreys``  adds ``-(eps T/N)`` times :func:`~ngd_sampling.metric.jeffreys_correction`
``riemannian_flat``      adds ``-(eps T/N)`` times :func:`~ngd_sampling.metric.flat_correction`
``minibatch_ngd``        ``dw = -eps G^-1 g_B`` with ``g_B`` a minibatch mean gradient
``sngd``                 minibatch NGD plus ``-(eps^2/2B)(1 - B/N)`` times the Jeffreys correction
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import models
from .fisher import (
    FisherEstimate,
    FisherMovingAverage,
    fisher_derivatives,
    fisher_empirical,
    fisher_exact,
    fisher_sampled,
    moving_average_update,
)
from .metric import MetricMatrix, damp, draw_noise, flat_correction, jeffreys_correction, solve

__all__ = [
    "RULES",
    "SamplerConfig",
    "Chain",
    "ChainDivergenceError",
    "ModelProblem",
    "temperature",
    "batch_for_temperature",
    "sngd_prefactor",
    "draw_minibatch",
    "gradient_noise",
    "step_langevin",
    "step_precond_static",
    "step_riemannian",
    "step_ngd",
    "step_minibatch_ngd",
    "step_sngd",
    "run_chain",
    "run_scalar_ensemble",
    "save_chain",
    "load_chain",
    "save_diagnostics",
]

RULES = ("langevin", "precond_static", "riemannian_jeffreys", "riemannian_flat", "minibatch_ngd", "sngd")
MINIBATCH_RULES = ("minibatch_ngd", "sngd")
DIVERGENCE_NORM = 1e6


class ChainDivergenceError(RuntimeError):
    def __init__(self, step: int, norm: float):
        super().__init__(f"chain diverged at step {step} (|w| = {norm:.3g})")
        self.step = step
        self.norm = norm


@dataclass(frozen=True)
class SamplerConfig:
    """Settings for one chain.

    ``temperature`` drives the injected-noise rules; ``batch_size`` drives
    the minibatch rules. ``fisher_smoothing`` > 0 keeps a moving average of
    the metric estimates across steps.
    """

    rule: str
    eps: float
    temperature: float = 1.0
    batch_size: int | None = None
    damping: float = 0.0
    burn_in_steps: int = 0
    sample_steps: int = 0
    thinning: int = 1
    seed: int = 0
    fisher_smoothing: float = 0.0

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}; expected one of {RULES}")
        if self.eps <= 0:
            raise ValueError("learning rate must be positive")
        if self.temperature < 0 or self.damping < 0:
            raise ValueError("temperature and damping must be non-negative")
        if self.rule in MINIBATCH_RULES and (self.batch_size is None or self.batch_size < 1):
            raise ValueError(f"rule {self.rule!r} needs a batch size >= 1")
        if self.thinning < 1 or self.burn_in_steps < 0 or self.sample_steps < 0:
            raise ValueError("invalid step counts")


def temperature(eps: float, N: int, B: int) -> float:
    """Temperature of minibatch NGD: ``(eps N / 2B)(1 - B/N)``."""
    if not 1 <= B <= N:
        raise ValueError(f"batch size must satisfy 1 <= B <= N (B={B}, N={N})")
    return eps * (N - B) / (2 * B)


def batch_for_temperature(eps: float, N: int, T: float) -> int:
    """Batch size ``[N / (2T/eps + 1)]``, rounded half up and clamped to ``[1, N]``."""
    if T < 0:
        raise ValueError("temperature must be non-negative")
    if T == 0:
        return N
    B = math.floor(N / (2.0 * T / eps + 1.0) + 0.5)
    return int(min(max(B, 1), N))


def sngd_prefactor(eps: float, N: int, B: int) -> float:
    """``(eps^2 / 2B)(1 - B/N)``; equals ``eps * temperature(eps, N, B) / N``."""
    return eps * eps * (N - B) / (2 * B * N)


def draw_minibatch(N, B: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices of a uniformly random size-``B`` subset of ``range(N)``.

    ``N`` may be a dataset. ``B == N`` returns ``arange(N)`` without
    touching the generator.
    """
    if not isinstance(N, (int, np.integer)):
        N = len(N)
    if not 1 <= B <= N:
        raise ValueError(f"batch size must satisfy 1 <= B <= N (B={B}, N={N})")
    if B == N:
        return np.arange(N)
    return np.sort(np.argpartition(rng.random(N), B - 1)[:B])


class ModelProblem:
    """A model and its training set, seen as a sampling problem.

    Args:
        spec, dataset: the model and training data.
        fisher_source: ``"exact"`` (class expectation), ``"sampled"`` (one
            sampled label per input on an independent batch of
            ``fisher_batch`` training inputs) or ``"empirical"``. Defaults to
            exact for logistic/softmax and sampled for the MLP.
        derivative_mode: ``"analytic"`` (logistic only) or
            ``"finite_difference"``.
        label_seed: frozen seed for finite-difference derivatives of a
            sampled Fisher.
    """

    def __init__(self, spec, dataset, fisher_source=None, fisher_batch=1024, derivative_mode=None, label_seed=0):
        self.spec = spec
        self.dataset = dataset
        if fisher_source is None:
            fisher_source = "sampled" if spec.kind == "mlp" else "exact"
        if fisher_source not in ("exact", "sampled", "empirical"):
            raise ValueError(f"unknown Fisher source {fisher_source!r}")
        self.fisher_source = fisher_source
        self.fisher_batch = fisher_batch
        self.derivative_mode = derivative_mode or ("analytic" if spec.kind == "logistic" else "finite_difference")
        self.label_seed = label_seed

    @property
    def dim(self) -> int:
        return self.spec.n_params

    @property
    def n_data(self) -> int:
        return self.dataset.N

    def cost(self, w) -> float:
        return models.total_cost(self.spec, w, self.dataset)

    def mean_grad(self, w) -> np.ndarray:
        return self.minibatch_mean_grad(w, np.arange(self.n_data))

    def minibatch_mean_grad(self, w, idx) -> np.ndarray:
        """Mean per-example gradient over ``idx`` plus ``l2 w / N``."""
        J = models.per_example_grads(self.spec, w, self.dataset.inputs[idx], self.dataset.labels[idx])
        return J.sum(axis=0) / len(idx) + self.spec.l2 * np.asarray(w) / self.n_data

    def fisher(self, w, rng=None) -> FisherEstimate:
        X = self.dataset.inputs
        if self.fisher_source == "exact":
            return fisher_exact(self.spec, w, X)
        if self.fisher_source == "empirical":
            return fisher_empirical(self.spec, w, self.dataset)
        if rng is None:
            raise ValueError("sampled Fisher needs a generator")
        if self.n_data > self.fisher_batch:
            X = X[draw_minibatch(self.n_data, self.fisher_batch, rng)]
        return fisher_sampled(self.spec, w, X, rng)

    def metric(self, w, rng=None) -> np.ndarray:
        return self.fisher(w, rng).matrix

    def metric_derivatives(self, w) -> np.ndarray:
        seed = self.label_seed if self.fisher_source == "sampled" else None
        return fisher_derivatives(self.spec, w, self.dataset.inputs, self.derivative_mode, label_seed=seed)


def gradient_noise(problem, w, idx) -> np.ndarray:
    """Minibatch mean gradient minus the full-batch mean gradient."""
    return problem.minibatch_mean_grad(w, idx) - problem.mean_grad(w)


def _metric_at(problem, w, cfg, rng) -> MetricMatrix:
    return damp(problem.metric(w, rng), cfg.damping)


def _langevin(problem, w, cfg, rng):
    g = problem.mean_grad(w)
    scale = 2.0 * cfg.temperature / (cfg.eps * problem.n_data)
    z = rng.standard_normal(problem.dim)
    return w - cfg.eps * (g + np.sqrt(scale) * z), g


def _precond(problem, w, G, cfg, rng):
    g = problem.mean_grad(w)
    noise = draw_noise(G, cfg.temperature, cfg.eps, problem.n_data, rng)
    return w - cfg.eps * solve(G, g + noise.vector), g


def _riemannian(problem, w, cfg, rng, bias, G=None, dG=None):
    if bias not in ("jeffreys", "flat"):
        raise ValueError(f"bias must be 'jeffreys' or 'flat', got {bias!r}")
    if G is None:
        G = _metric_at(problem, w, cfg, rng)
    if dG is None:
        dG = problem.metric_derivatives(w)
    new, g = _precond(problem, w, G, cfg, rng)
    corr = jeffreys_correction(G, dG) if bias == "jeffreys" else flat_correction(G, dG)
    return new - (cfg.eps * cfg.temperature / problem.n_data) * corr, g


def _minibatch(problem, w, cfg, rng, G=None):
    idx = draw_minibatch(problem.n_data, cfg.batch_size, rng)
    g = problem.minibatch_mean_grad(w, idx)
    if G is None:
        G = _metric_at(problem, w, cfg, rng)
    return w - cfg.eps * solve(G, g), g, G


def _sngd(problem, w, cfg, rng, G=None, dG=None):
    new, g, G = _minibatch(problem, w, cfg, rng, G)
    if dG is None:
        dG = problem.metric_derivatives(w)
    pre = sngd_prefactor(cfg.eps, problem.n_data, cfg.batch_size)
    return new - pre * jeffreys_correction(G, dG), g


def step_langevin(problem, w, cfg: SamplerConfig, rng) -> np.ndarray:
    """Full-batch gradient plus isotropic noise of covariance ``2T I / (eps N)``."""
    return _langevin(problem, np.asarray(w, dtype=float), cfg, rng)[0]


def step_precond_static(problem, w, G, cfg: SamplerConfig, rng) -> np.ndarray:
    """Langevin step preconditioned by a fixed metric ``G``."""
    return _precond(problem, np.asarray(w, dtype=float), G if isinstance(G, MetricMatrix) else MetricMatrix(G), cfg, rng)[0]


def step_riemannian(problem, w, cfg: SamplerConfig, rng, bias: str = "jeffreys", G=None, dG=None) -> np.ndarray:
    """Position-dependent metric step with the drift correction for ``bias``.

    ``G`` defaults to the damped problem metric at ``w``; ``dG`` to its
    derivatives (damping does not change them).
    """
    return _riemannian(problem, np.asarray(w, dtype=float), cfg, rng, bias, G, dG)[0]


def step_ngd(problem, w, cfg: SamplerConfig, G=None, rng=None) -> np.ndarray:
    """Deterministic full-batch natural gradient step."""
    w = np.asarray(w, dtype=float)
    if G is None:
        G = _metric_at(problem, w, cfg, rng)
    return w - cfg.eps * solve(G, problem.mean_grad(w))


def step_minibatch_ngd(problem, w, cfg: SamplerConfig, rng, G=None) -> np.ndarray:
    """Natural gradient step on a minibatch mean gradient; no injected noise."""
    return _minibatch(problem, np.asarray(w, dtype=float), cfg, rng, G)[0]


def step_sngd(problem, w, cfg: SamplerConfig, rng, G=None, dG=None) -> np.ndarray:
    """Minibatch NGD plus the metric-derivative correction."""
    return _sngd(problem, np.asarray(w, dtype=float), cfg, rng, G, dG)[0]


@dataclass
class Chain:
    """Post burn-in samples and per-step diagnostics."""

    samples: np.ndarray
    rule: str
    temperature: float
    seed: int
    grad_norms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    condition_estimates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    config: dict = field(default_factory=dict)

    def __len__(self):
        return self.samples.shape[0]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def cov(self) -> np.ndarray:
        return np.cov(self.samples, rowvar=False, bias=False).reshape(self.samples.shape[1], -1)


def _initial_point(problem, initial):
    if initial is None or (isinstance(initial, str) and initial == "zero_init"):
        return np.zeros(problem.dim)
    if isinstance(initial, str):
        if initial != "lbfgs_init":
            raise ValueError(f"unknown initializer {initial!r}")
        from .oracles import minimize_model

        return minimize_model(problem.spec, problem.dataset)
    w = np.array(initial, dtype=float)
    if w.shape != (problem.dim,):
        raise ValueError(f"initial point must have shape ({problem.dim},)")
    return w


def _cond_estimate(G: MetricMatrix) -> float:
    d = np.diag(G.factor)
    return float((d.max() / d.min()) ** 2)


def run_chain(problem, cfg: SamplerConfig, initial=None, static_metric=None) -> Chain:
    """Run ``burn_in_steps`` discarded steps then ``sample_steps`` recorded ones.

    ``initial`` is an array, ``"zero_init"`` (default) or ``"lbfgs_init"``.
    For ``precond_static`` a fixed ``static_metric`` may be given; without
    one the damped metric is re-evaluated at every step and no correction
    terms are applied. Deterministic given ``cfg.seed``.

    Raises:
        ChainDivergenceError: if ``|w|`` exceeds 1e6 or turns non-finite.
    """
    step_ss, fisher_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(step_ss)
    fisher_rng = np.random.default_rng(fisher_ss)
    w = _initial_point(problem, initial)
    total = cfg.burn_in_steps + cfg.sample_steps
    n_keep = cfg.sample_steps // cfg.thinning
    samples = np.empty((n_keep, problem.dim))
    grad_norms = np.empty(total)
    conds = np.full(total, np.nan)
    fixed_G = None if static_metric is None else (
        static_metric if isinstance(static_metric, MetricMatrix) else MetricMatrix(static_metric)
    )
    average = None

    def metric(w):
        nonlocal average
        if cfg.fisher_smoothing > 0 and hasattr(problem, "fisher"):
            est = problem.fisher(w, fisher_rng)
            if average is None:
                average = FisherMovingAverage(est, cfg.fisher_smoothing)
            else:
                average = moving_average_update(average, est)
            return damp(average.current.matrix, cfg.damping)
        return damp(problem.metric(w, fisher_rng), cfg.damping)

    kept = 0
    for t in range(total):
        G = None
        if cfg.rule == "langevin":
            w_new, g = _langevin(problem, w, cfg, rng)
        elif cfg.rule == "precond_static":
            G = fixed_G if fixed_G is not None else metric(w)
            w_new, g = _precond(problem, w, G, cfg, rng)
        elif cfg.rule in ("riemannian_jeffreys", "riemannian_flat"):
            G = metric(w)
            w_new, g = _riemannian(problem, w, cfg, rng, cfg.rule.split("_")[1], G)
        elif cfg.rule == "minibatch_ngd":
            G = metric(w)
            w_new, g, _ = _minibatch(problem, w, cfg, rng, G)
        else:
            G = metric(w)
            w_new, g = _sngd(problem, w, cfg, rng, G)
        norm = float(np.linalg.norm(w_new))
        if not np.all(np.isfinite(w_new)) or norm > DIVERGENCE_NORM:
            raise ChainDivergenceError(t, norm)
        grad_norms[t] = np.linalg.norm(g)
        if G is not None:
            conds[t] = _cond_estimate(G)
        w = w_new
        s = t - cfg.burn_in_steps
        if s >= 0 and (s + 1) % cfg.thinning == 0 and kept < n_keep:
            samples[kept] = w
            kept += 1

    if cfg.rule in MINIBATCH_RULES:
        T = temperature(cfg.eps, problem.n_data, cfg.batch_size)
    else:
        T = cfg.temperature
    return Chain(samples, cfg.rule, T, cfg.seed, grad_norms, conds, asdict(cfg))


def run_scalar_ensemble(
    problem,
    rule: str,
    eps: float,
    n_steps: int,
    n_chains: int,
    temperature: float = 1.0,
    batch_size: int | None = None,
    damping: float = 0.0,
    burn_in: int = 0,
    thinning: int = 1,
    seed: int = 0,
    initial: float = 0.0,
):
    """Many independent one-parameter chains advanced together.

    Vectorized counterpart of :func:`run_chain` for one-parameter problems:
    a :class:`~ngd_sampling.models.ScalarToy` with the injected-noise rules,
    or a one-feature logistic :class:`ModelProblem` with the minibatch
    rules (exact Fisher, analytic derivative). With ``n_chains == 1`` it
    consumes the generator exactly like the generic step functions.

    Returns:
        ``(samples, diverged)``: kept iterates of shape
        ``(n_kept, n_chains)`` and a per-chain divergence mask. Diverged
        chains keep running; their values are left as they are.
    """
    rng = np.random.default_rng(seed)
    u = np.full(n_chains, float(initial))
    n_keep = (n_steps - burn_in) // thinning
    out = np.empty((max(n_keep, 0), n_chains))
    diverged = np.zeros(n_chains, dtype=bool)
    N = problem.n_data
    minibatch = rule in MINIBATCH_RULES

    if minibatch:
        if not isinstance(problem, ModelProblem) or problem.spec.kind != "logistic" or problem.dim != 1:
            raise ValueError("minibatch ensembles need a one-feature logistic problem")
        x = problem.dataset.inputs[:, 0]
        y = problem.dataset.labels.astype(float)
        l2 = problem.spec.l2
        B = int(batch_size)
        pre = sngd_prefactor(eps, N, B)

        def fisher(v):
            s = 1.0 / (1.0 + np.exp(-np.outer(v, x)))
            v1 = s * (1 - s)
            return (v1 * x**2).mean(axis=1) + damping, (v1 * (1 - 2 * s) * x**3).mean(axis=1)
    elif rule not in ("langevin", "precond_static", "riemannian_jeffreys", "riemannian_flat"):
        raise ValueError(f"unknown rule {rule!r}")

    kept = 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for t in range(n_steps):
            if minibatch:
                if B == N:
                    idx = np.broadcast_to(np.arange(N), (n_chains, N))
                else:
                    idx = np.sort(np.argpartition(rng.random((n_chains, N)), B - 1, axis=1)[:, :B], axis=1)
                xb, yb = x[idx], y[idx]
                z = yb * u[:, None] * xb
                g = (yb / (1.0 + np.exp(-z)) * xb).sum(axis=1) / B + l2 * u / N
                G, dG = fisher(u)
                u = u - eps * g / G
                if rule == "sngd":
                    u = u - pre * (0.5 * dG / G**2)
            else:
                g = problem.cost_grad(u) / N
                G = np.ones_like(u) if rule == "langevin" else problem.g(u) + damping
                z = rng.standard_normal(n_chains)
                scale = 2.0 * temperature / (eps * N)
                u_new = u - eps * (g + np.sqrt(scale) * np.sqrt(G) * z) / G
                if rule.startswith("riemannian"):
                    dG = problem.dg(u)
                    # 1-D: first term g'/g^2, trace term g'/g^2 as well
                    corr = dG / G**2 if rule == "riemannian_flat" else 0.5 * dG / G**2
                    u_new = u_new - (eps * temperature / N) * corr
                u = u_new
            diverged |= ~np.isfinite(u) | (np.abs(u) > DIVERGENCE_NORM)
            s = t - burn_in
            if s >= 0 and (s + 1) % thinning == 0 and kept < n_keep:
                out[kept] = u
                kept += 1
    return out, diverged


def _spec_hash(problem) -> str:
    spec = getattr(problem, "spec", None)
    text = repr(spec) if spec is not None else repr(problem)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_chain(chain: Chain, path, problem=None) -> None:
    """Text format: a ``#`` JSON header line, then one parameter vector per row."""
    header = {
        "model_hash": _spec_hash(problem) if problem is not None else None,
        "rule": chain.rule,
        "temperature": chain.temperature,
        "seed": chain.seed,
        "config": chain.config,
        "dim": int(chain.samples.shape[1]),
    }
    np.savetxt(path, chain.samples, fmt="%.17g", header=json.dumps(header))


def load_chain(path) -> Chain:
    with open(path) as f:
        first = f.readline()
    header = json.loads(first.lstrip("#").strip())
    rows = np.loadtxt(path, dtype=float, ndmin=2).reshape(-1, header["dim"])
    return Chain(rows, header["rule"], header["temperature"], header["seed"], config=header["config"])


def save_diagnostics(chain: Chain, path) -> None:
    """One JSON object per step: gradient norm and metric condition estimate."""
    with open(path, "w") as f:
        for t, (gn, c) in enumerate(zip(chain.grad_norms, chain.condition_estimates)):
            rec = {"step": t, "grad_norm": float(gn), "condition_estimate": None if np.isnan(c) else float(c)}
            f.write(json.dumps(rec) + "\n")
