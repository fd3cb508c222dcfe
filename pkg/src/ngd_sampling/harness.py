"""Configuration-driven experiments: sweeps, figure data, stationary checks.

A run is described by an :class:`ExperimentConfig`, a flat mapping of dotted
keys (``sampler.eps = 0.1``) parsed from plain text. Each experiment id has a
preset; config files and command-line options override it. Results are
written as CSV or JSON with a fixed column order.

Config file syntax::

    # comment
    experiment = sweep-temperature
    seed = 3
    sweep.values = 1/8, 1/4, 1/2, 1, 2, 4, 8

Values are typed after the defaults in :data:`DEFAULTS`; numbers may be
written as fractions. Unknown keys are rejected.
"""
from __future__ import annotations

import csv
import json
import math
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import models
from .data import Dataset, generate_synthetic_logistic, load_dataset_text, load_mnist_projected, random_projection, read_idx
from .models import ModelSpec, exp_metric_toy, constant_metric_toy, quadratic_metric_toy
from .oracles import (
    gaussian_distance,
    laplace,
    stationary_density_1d,
    total_variation,
)
from .samplers import (
    MINIBATCH_RULES,
    RULES,
    Chain,
    ChainDivergenceError,
    ModelProblem,
    SamplerConfig,
    batch_for_temperature,
    run_chain,
    run_scalar_ensemble,
    save_chain,
    temperature,
)

__all__ = [
    "DEFAULTS",
    "EXPERIMENTS",
    "RESULT_COLUMNS",
    "ConfigError",
    "ExperimentConfig",
    "EnsembleResult",
    "ensemble_predict",
    "evaluate",
    "load_data",
    "run_temperature_sweep",
    "run_batch_sweep",
    "run_sweep",
    "run_figure1",
    "run_fokker_planck_suite",
    "ellipse",
    "emit",
    "emit_table",
    "read_results",
    "point_seed",
]

EXPERIMENTS = ("figure1", "sweep-temperature", "sweep-batch", "fokker-planck", "verify")
SWEEP_AXES = ("temperature", "batch_size", "eps", "n_train")

DEFAULTS: dict = {
    "experiment": "sweep-temperature",
    "seed": 0,
    "output.dir": "results",
    "output.format": "csv",
    # model
    "model.kind": "logistic",
    "model.input_dim": 64,
    "model.n_classes": 2,
    "model.hidden_units": 40,
    "model.l2": 0.0,
    "model.l2_times_n": 0.0,
    # data
    "data.source": "synthetic",
    "data.n_train": 1000,
    "data.n_test": 10000,
    "data.w_true": "16",
    "data.train_images": "",
    "data.train_labels": "",
    "data.test_images": "",
    "data.test_labels": "",
    "data.projection_dim": 10,
    "data.projection_seed": 0,
    "data.train_path": "",
    "data.test_path": "",
    # sampler
    "sampler.modes": "precond_static,minibatch_ngd",
    "sampler.eps": 0.1,
    "sampler.damping": 1e-4,
    "sampler.temperature": 1.0,
    "sampler.batch_size": 0,
    "sampler.burn_in": 1000,
    "sampler.samples": 1000,
    "sampler.thinning": 1,
    "sampler.fisher_source": "auto",
    "sampler.fisher_batch": 1024,
    "sampler.fisher_smoothing": 0.0,
    "sampler.init": "zero",
    "sampler.init_steps": 500,
    # sweep
    "sweep.axis": "temperature",
    "sweep.values": "1/8,1/4,1/2,1,2,4,8",
    "harness.workers": 1,
    # figure 1
    "figure1.modes": "precond_plain,precond_corrected,minibatch_ngd",
    "figure1.n_sd": 3.0,
    "figure1.ellipse_points": 200,
    # stationary-distribution suite
    "fokker.toys": "const1,exp2,poly",
    "fokker.rules": "riemannian_jeffreys,riemannian_flat",
    "fokker.eps": 1e-3,
    "fokker.steps": 1000000,
    "fokker.chains": 16,
    "fokker.burn_in": 10000,
    "fokker.thinning": 10,
    "fokker.bins": 50,
    "fokker.logistic_n": 200,
    "fokker.logistic_w_true": 1.0,
    "fokker.logistic_l2": 1.0,
    "fokker.logistic_eps": 0.02,
    "fokker.logistic_batch": 1,
    "fokker.logistic_damping": 1e-4,
    "fokker.logistic_steps": 20000,
    "fokker.logistic_chains": 32,
    "fokker.logistic_burn_in": 2000,
}

PRESETS: dict = {
    "figure1": {
        "experiment": "figure1",
        "model.input_dim": 2,
        "data.w_true": "16,0",
        "sampler.burn_in": 5000,
        "sampler.samples": 5000,
        "sampler.batch_size": 50,
    },
    "sweep-temperature": {"experiment": "sweep-temperature"},
    "sweep-batch": {
        "experiment": "sweep-batch",
        "model.kind": "mlp",
        "model.input_dim": 10,
        "model.n_classes": 10,
        "model.l2_times_n": 20.0,
        "data.source": "mnist",
        "data.n_train": 1024,
        "sampler.modes": "minibatch_ngd",
        "sampler.eps": 0.125,
        "sampler.damping": 0.1,
        "sampler.burn_in": 500,
        "sampler.samples": 500,
        "sampler.fisher_source": "sampled",
        "sampler.init": "ngd_descent",
        "sweep.axis": "batch_size",
        "sweep.values": "8,16,32,64,128,256,512,1024",
    },
    "fokker-planck": {"experiment": "fokker-planck"},
    "verify": {"experiment": "verify"},
}


class ConfigError(ValueError):
    pass


def _parse_number(text: str) -> float:
    return float(Fraction(text.strip()))


def _coerce(key: str, raw):
    default = DEFAULTS[key]
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes")
        if isinstance(default, int):
            value = _parse_number(raw) if isinstance(raw, str) else raw
            if float(value) != int(value):
                raise ValueError(f"{raw!r} is not an integer")
            return int(value)
        if isinstance(default, float):
            return _parse_number(raw) if isinstance(raw, str) else float(raw)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from None
    return str(raw)


def _split(text: str) -> list[str]:
    return [p.strip() for p in str(text).split(",") if p.strip()]


@dataclass(frozen=True)
class ExperimentConfig:
    """A complete, validated set of dotted-key settings."""

    values: dict

    def __post_init__(self):
        unknown = set(self.values) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        full = {k: _coerce(k, self.values.get(k, v)) for k, v in DEFAULTS.items()}
        object.__setattr__(self, "values", full)
        self._validate()

    def _validate(self):
        v = self.values
        if v["experiment"] not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
        if v["sweep.axis"] not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}")
        vals = self.sweep_values
        if not vals:
            raise ConfigError("sweep.values is empty")
        if any(not x > 0 for x in vals):
            raise ConfigError("sweep values must be positive")
        if len(set(vals)) != len(vals):
            raise ConfigError("sweep values must be distinct")
        if v["sweep.axis"] in ("batch_size", "n_train") and any(x != int(x) for x in vals):
            raise ConfigError(f"{v['sweep.axis']} sweep values must be integers")
        for m in self.modes:
            if m not in RULES:
                raise ConfigError(f"unknown sampler mode {m!r}")
        if v["output.format"] not in ("csv", "json"):
            raise ConfigError("output.format must be csv or json")
        if v["sampler.init"] not in ("zero", "ngd_descent", "lbfgs"):
            raise ConfigError("sampler.init must be zero, ngd_descent or lbfgs")

    @classmethod
    def preset(cls, experiment: str, **overrides) -> "ExperimentConfig":
        if experiment not in PRESETS:
            raise ConfigError(f"no preset for experiment {experiment!r}")
        return cls({**PRESETS[experiment], **overrides})

    @classmethod
    def from_text(cls, text: str, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        parsed = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            parsed[key] = value
        if base is None:
            exp = parsed.get("experiment", DEFAULTS["experiment"])
            base_values = PRESETS.get(exp, {})
        else:
            base_values = base.values
        return cls({**base_values, **parsed})

    @classmethod
    def from_file(cls, path, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text(), base)

    def with_updates(self, **dotted) -> "ExperimentConfig":
        """Override keys; pass dotted names through a dict, e.g. ``**{"sampler.eps": 0.05}``."""
        return ExperimentConfig({**self.values, **dotted})

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.values.items())

    def __getitem__(self, key):
        return self.values[key]

    @property
    def sweep_values(self) -> list[float]:
        try:
            return [_parse_number(s) for s in _split(self.values["sweep.values"])]
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"sweep.values: {exc}") from None

    @property
    def modes(self) -> list[str]:
        return _split(self.values["sampler.modes"])

    @property
    def w_true(self) -> np.ndarray:
        lead = [_parse_number(s) for s in _split(self.values["data.w_true"])]
        n = self.values["model.input_dim"]
        if len(lead) > n:
            raise ConfigError("data.w_true has more entries than model.input_dim")
        return np.concatenate([lead, np.zeros(n - len(lead))])


@dataclass(frozen=True)
class EnsembleResult:
    sweep_value: float
    temperature: float
    batch_size: int
    ensemble_accuracy: float
    ensemble_cross_entropy: float
    single_sample_accuracy: float
    single_sample_cross_entropy: float
    diverged: bool = False
    nominal_temperature: float = float("nan")
    rule: str = ""


RESULT_COLUMNS = (
    "sweep_value",
    "temperature",
    "batch_size",
    "ensemble_accuracy",
    "ensemble_xent",
    "single_accuracy",
    "single_xent",
    "diverged",
    "nominal_temperature",
    "rule",
)
_FIELD_OF_COLUMN = dict(zip(RESULT_COLUMNS, (f.name for f in fields(EnsembleResult))))


# --------------------------------------------------------------------------
# evaluation


def _chain_samples(chain) -> np.ndarray:
    return chain.samples if isinstance(chain, Chain) else np.atleast_2d(np.asarray(chain, dtype=float))


def ensemble_predict(chain, spec: ModelSpec, test_inputs) -> np.ndarray:
    """Average of the predictive probabilities over the chain's samples."""
    W = _chain_samples(chain)
    if W.shape[0] == 0:
        raise ValueError("cannot form an ensemble from an empty chain")
    P = np.zeros((np.atleast_2d(test_inputs).shape[0], len(spec.classes)))
    for w in W:
        P += models.predict_proba(spec, w, test_inputs)
    return P / W.shape[0]


def evaluate(probabilities, test_labels, spec: ModelSpec | None = None) -> dict:
    """Accuracy and mean cross-entropy of row-stochastic predictions.

    Labels are column indices unless ``spec`` is given, in which case they
    are mapped through :func:`~ngd_sampling.models.label_index`.
    """
    P = np.atleast_2d(np.asarray(probabilities, dtype=float))
    y = np.asarray(test_labels)
    if y.ndim != 1 or y.shape[0] != P.shape[0]:
        raise ValueError(f"{P.shape[0]} prediction rows but labels of shape {y.shape}")
    idx = models.label_index(spec, y) if spec is not None else y.astype(int)
    if np.any(idx < 0) or np.any(idx >= P.shape[1]):
        raise ValueError("label index outside the probability columns")
    p_true = np.clip(P[np.arange(len(idx)), idx], models.PROB_CLAMP, 1.0)
    return {
        "accuracy": float(np.mean(np.argmax(P, axis=1) == idx)),
        "cross_entropy": float(-np.mean(np.log(p_true))),
    }


def _score_chain(chain, spec, test: Dataset):
    W = _chain_samples(chain)
    P = np.zeros((test.N, len(spec.classes)))
    acc = xent = 0.0
    for w in W:
        p = models.predict_proba(spec, w, test.inputs)
        P += p
        m = evaluate(p, test.labels, spec)
        acc += m["accuracy"]
        xent += m["cross_entropy"]
    ens = evaluate(P / W.shape[0], test.labels, spec)
    return ens, acc / W.shape[0], xent / W.shape[0]


# --------------------------------------------------------------------------
# data and seeding


def point_seed(seed: int, rule: str, value: float) -> int:
    """Chain seed derived from the global seed, the rule and the sweep value.

    Keyed on the value rather than its position, so permuting the sweep
    axis permutes the results and nothing else.
    """
    bits = struct.unpack("<Q", struct.pack("<d", float(value)))[0]
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(bits, RULES.index(rule)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _data_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(0xDA7A, stream)))


def _spec_for(cfg: ExperimentConfig, N: int) -> ModelSpec:
    l2 = cfg["model.l2_times_n"] / N if cfg["model.l2_times_n"] > 0 else cfg["model.l2"]
    return ModelSpec(cfg["model.kind"], cfg["model.input_dim"], cfg["model.n_classes"], cfg["model.hidden_units"], l2)


def load_data(cfg: ExperimentConfig, n_train: int | None = None) -> tuple[Dataset, Dataset]:
    """Training and test sets for ``cfg``.

    Synthetic data depends only on the global seed; the test set is an
    independent draw of ``data.n_test`` examples. MNIST inputs are projected
    with the matrix drawn from ``data.projection_seed``.
    """
    N = int(n_train or cfg["data.n_train"])
    src = cfg["data.source"]
    if src == "synthetic":
        w_true = cfg.w_true
        train = generate_synthetic_logistic(N, w_true, _data_rng(cfg["seed"], 0))
        test = generate_synthetic_logistic(cfg["data.n_test"], w_true, _data_rng(cfg["seed"], 1))
        return train, test
    if src == "mnist":
        keys = ("data.train_images", "data.train_labels", "data.test_images", "data.test_labels")
        missing = [k for k in keys if not cfg[k]]
        if missing:
            raise ConfigError(f"MNIST data needs {missing}")
        n_pixels = int(np.prod(read_idx(cfg["data.train_images"]).shape[1:]))
        proj = random_projection(n_pixels, cfg["data.projection_dim"], cfg["data.projection_seed"])
        train = load_mnist_projected(cfg["data.train_images"], cfg["data.train_labels"], N=N, projection=proj)
        test = load_mnist_projected(cfg["data.test_images"], cfg["data.test_labels"], projection=proj)
        if train.N < N:
            raise ConfigError(f"requested {N} training examples but the file holds {train.N}")
        return train, test
    if src == "text":
        train = load_dataset_text(cfg["data.train_path"])
        if train.N < N:
            raise ConfigError(f"requested {N} training examples but the file holds {train.N}")
        return train.subset(np.arange(N)), load_dataset_text(cfg["data.test_path"])
    raise ConfigError(f"unknown data.source {src!r}")


def _fisher_source(cfg):
    src = cfg["sampler.fisher_source"]
    return None if src == "auto" else src


def _initial_point(cfg, problem, seed):
    init = cfg["sampler.init"]
    if init == "zero":
        if problem.spec.kind == "mlp":
            return models.init_params(problem.spec, np.random.default_rng(seed))
        return np.zeros(problem.dim)
    if init == "lbfgs":
        return "lbfgs_init"
    # short deterministic descent: full-batch NGD at zero temperature
    w0 = models.init_params(problem.spec, np.random.default_rng(seed))
    steps = cfg["sampler.init_steps"]
    if steps == 0:
        return w0
    descent = SamplerConfig(
        "minibatch_ngd", cfg["sampler.eps"], batch_size=problem.n_data,
        damping=cfg["sampler.damping"], sample_steps=steps, seed=seed,
        fisher_smoothing=cfg["sampler.fisher_smoothing"],
    )
    return run_chain(problem, descent, initial=w0).samples[-1]


# --------------------------------------------------------------------------
# sweeps


def _point_settings(cfg, rule, axis, value, N):
    eps = value if axis == "eps" else cfg["sampler.eps"]
    if rule in MINIBATCH_RULES:
        if axis == "batch_size":
            B = int(value)
        elif axis == "temperature":
            B = batch_for_temperature(eps, N, value)
        elif cfg["sampler.batch_size"] > 0:
            B = cfg["sampler.batch_size"]
        else:
            B = batch_for_temperature(eps, N, cfg["sampler.temperature"])
        if B > N:
            raise ConfigError(f"batch size {B} exceeds the training set size {N}")
        return eps, temperature(eps, N, B), B, eps * N / (2.0 * B)
    if axis == "batch_size":
        raise ConfigError(f"a batch-size sweep needs a minibatch rule, not {rule!r}")
    T = value if axis == "temperature" else cfg["sampler.temperature"]
    return eps, T, N, T


def _run_point(task):
    cfg, rule, value, context = task
    axis = cfg["sweep.axis"]
    train, test, init = context
    if axis == "n_train":
        train = train.subset(np.arange(int(value)))
    N = train.N
    spec = _spec_for(cfg, N)
    eps, T, B, nominal = _point_settings(cfg, rule, axis, value, N)
    seed = point_seed(cfg["seed"], rule, value)
    problem = ModelProblem(spec, train, fisher_source=_fisher_source(cfg), fisher_batch=cfg["sampler.fisher_batch"])
    sc = SamplerConfig(
        rule, eps, temperature=T, batch_size=B if rule in MINIBATCH_RULES else None,
        damping=cfg["sampler.damping"], burn_in_steps=cfg["sampler.burn_in"],
        sample_steps=cfg["sampler.samples"], thinning=cfg["sampler.thinning"], seed=seed,
        fisher_smoothing=cfg["sampler.fisher_smoothing"],
    )
    if init is None:
        init = _initial_point(cfg, problem, seed)
    try:
        chain = run_chain(problem, sc, initial=init)
    except ChainDivergenceError:
        nan = float("nan")
        return EnsembleResult(float(value), T, B, nan, nan, nan, nan, True, nominal, rule)
    ens, acc, xent = _score_chain(chain, spec, test)
    return EnsembleResult(
        float(value), chain.temperature, B, ens["accuracy"], ens["cross_entropy"], acc, xent, False, nominal, rule
    )


def run_sweep(cfg: ExperimentConfig, rules=None, datasets=None) -> dict:
    """Run every (rule, sweep value) point; returns ``{rule: [EnsembleResult]}``.

    Points are independent and seeded by :func:`point_seed`, so running them
    in worker processes (``harness.workers`` > 1) gives identical results.
    Divergent chains yield a result flagged ``diverged`` and the sweep goes on.
    ``datasets`` may supply a preloaded ``(train, test)`` pair.
    """
    rules = list(rules or cfg.modes)
    values = cfg.sweep_values
    train, test = datasets if datasets is not None else load_data(
        cfg, max(int(v) for v in values) if cfg["sweep.axis"] == "n_train" else None
    )
    shared_init = None
    if cfg["sampler.init"] == "ngd_descent" and cfg["sweep.axis"] not in ("n_train", "eps"):
        # one descent per global seed, shared by every sweep point
        problem = ModelProblem(_spec_for(cfg, train.N), train, fisher_source=_fisher_source(cfg),
                               fisher_batch=cfg["sampler.fisher_batch"])
        shared_init = _initial_point(cfg, problem, point_seed(cfg["seed"], "minibatch_ngd", 0.0))
    tasks = [(cfg, rule, v, (train, test, shared_init)) for rule in rules for v in values]
    if cfg["harness.workers"] > 1:
        with ProcessPoolExecutor(cfg["harness.workers"]) as pool:
            out = list(pool.map(_run_point, tasks))
    else:
        out = [_run_point(t) for t in tasks]
    results = {rule: [] for rule in rules}
    for (_, rule, _, _), r in zip(tasks, out):
        results[rule].append(r)
    return results


def run_temperature_sweep(cfg: ExperimentConfig, datasets=None) -> dict:
    """Sweep T; minibatch rules get ``B = batch_for_temperature(eps, N, T)``."""
    if cfg["sweep.axis"] != "temperature":
        cfg = cfg.with_updates(**{"sweep.axis": "temperature"})
    return run_sweep(cfg, datasets=datasets)


def run_batch_sweep(cfg: ExperimentConfig, datasets=None) -> list:
    """Sweep the batch size of minibatch NGD; returns one result per value."""
    if cfg["sweep.axis"] != "batch_size":
        cfg = cfg.with_updates(**{"sweep.axis": "batch_size"})
    rules = [m for m in cfg.modes if m in MINIBATCH_RULES] or ["minibatch_ngd"]
    return run_sweep(cfg, rules=rules[:1], datasets=datasets)[rules[0]]


# --------------------------------------------------------------------------
# figure 1


def ellipse(mean, cov, n_sd: float = 3.0, n_points: int = 200) -> np.ndarray:
    """Closed polyline ``mean + n_sd L (cos t, sin t)`` with ``L L^T = cov``."""
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (2, 2):
        raise ValueError("ellipses need a 2x2 covariance")
    L = np.linalg.cholesky(0.5 * (cov + cov.T))
    t = np.linspace(0.0, 2.0 * np.pi, n_points)
    circle = np.vstack([np.cos(t), np.sin(t)])
    return np.asarray(mean, dtype=float) + n_sd * (L @ circle).T


FIGURE1_MODES = {
    "precond_plain": "precond_static",
    "precond_corrected": "riemannian_jeffreys",
    "minibatch_ngd": "minibatch_ngd",
}


def _write_polylines(path, curves: dict):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["curve", "x", "y"])
        for name, pts in curves.items():
            for x, y in pts:
                w.writerow([name, repr(float(x)), repr(float(y))])


def run_figure1(cfg: ExperimentConfig, out_dir=None, datasets=None) -> dict:
    """Two-parameter logistic posterior: iterates, Laplace and sample ellipses.

    Modes: ``precond_plain`` (metric refreshed every step, no drift
    correction), ``precond_corrected`` (with the Jeffreys drift correction)
    and ``minibatch_ngd`` at ``sampler.batch_size`` (``eps N / 2`` when 0).
    Writes per mode a chain file, an ellipse polyline CSV and a covariance
    JSON; also the Laplace oracle and a summary. Returns the summary with
    the written paths.
    """
    out = Path(out_dir or cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    train, _ = datasets if datasets is not None else load_data(cfg)
    N = train.N
    spec = _spec_for(cfg, N)
    if spec.kind != "logistic" or spec.n_params != 2:
        raise ConfigError("figure 1 needs two-parameter logistic regression")
    T = cfg["sampler.temperature"]
    oracle = laplace(spec, train, T)
    (out / "figure1_laplace.json").write_text(oracle.to_json())
    problem = ModelProblem(spec, train)
    eps = cfg["sampler.eps"]
    B = cfg["sampler.batch_size"] or max(1, int(round(eps * N / 2)))
    summary = {"laplace": str(out / "figure1_laplace.json"), "modes": {}}
    n_sd, n_pts = cfg["figure1.n_sd"], cfg["figure1.ellipse_points"]
    for label in _split(cfg["figure1.modes"]):
        if label not in FIGURE1_MODES:
            raise ConfigError(f"unknown figure1 mode {label!r}")
        rule = FIGURE1_MODES[label]
        sc = SamplerConfig(
            rule, eps, temperature=T, batch_size=B if rule in MINIBATCH_RULES else None,
            damping=cfg["sampler.damping"], burn_in_steps=cfg["sampler.burn_in"],
            sample_steps=cfg["sampler.samples"], thinning=cfg["sampler.thinning"],
            seed=point_seed(cfg["seed"], rule, T),
        )
        t0 = time.perf_counter()
        try:
            chain = run_chain(problem, sc)
        except ChainDivergenceError as exc:
            summary["modes"][label] = {"rule": rule, "diverged": True, "error": str(exc)}
            continue
        runtime = time.perf_counter() - t0
        mean, cov = chain.mean(), chain.cov()
        dist = gaussian_distance(mean, cov, oracle)
        paths = {
            "chain": out / f"figure1_{label}_chain.txt",
            "ellipses": out / f"figure1_{label}_ellipses.csv",
            "covariance": out / f"figure1_{label}_covariance.json",
        }
        save_chain(chain, paths["chain"], problem)
        _write_polylines(paths["ellipses"], {
            "laplace": ellipse(oracle.mode, oracle.covariance, n_sd, n_pts),
            "samples": ellipse(mean, cov, n_sd, n_pts),
        })
        paths["covariance"].write_text(json.dumps({"mean": mean.tolist(), "covariance": cov.tolist()}))
        summary["modes"][label] = {
            "rule": rule,
            "diverged": False,
            "temperature": chain.temperature,
            "batch_size": B if rule in MINIBATCH_RULES else N,
            "mean_mahalanobis": dist.mean_mahalanobis,
            "cov_frobenius_rel": dist.cov_frobenius_rel,
            "eig_ratio_max": dist.eig_ratio_max,
            "runtime_s": runtime,
            **{k: str(v) for k, v in paths.items()},
        }
    (out / "figure1_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary


# --------------------------------------------------------------------------
# stationary-distribution suite

TOYS = {"const1": lambda: constant_metric_toy(1.0), "exp2": lambda: exp_metric_toy(2.0), "poly": quadratic_metric_toy}
FOKKER_COLUMNS = ("system", "rule", "oracle", "eps", "n_samples", "diverged_chains", "tv", "tv_other")


TOY_GRID = (-12.0, 12.0, 24001)


def logistic_toy(cfg: ExperimentConfig):
    """One-feature logistic problem and its two stationary-density oracles."""
    N = cfg["fokker.logistic_n"]
    data = generate_synthetic_logistic(N, [cfg["fokker.logistic_w_true"]], _data_rng(cfg["seed"], 2))
    spec = ModelSpec("logistic", 1, l2=cfg["fokker.logistic_l2"])
    problem = ModelProblem(spec, data)
    eps, B = cfg["fokker.logistic_eps"], cfg["fokker.logistic_batch"]
    T = temperature(eps, N, B)
    x = data.inputs[:, 0]
    y = data.labels.astype(float)
    delta = cfg["fokker.logistic_damping"]

    def cost(u):
        z = np.outer(u, x) * y
        return np.logaddexp(0.0, z).sum(axis=1) + 0.5 * spec.l2 * u**2

    def fisher(u):
        s = 1.0 / (1.0 + np.exp(-np.outer(u, x)))
        return (s * (1 - s) * x**2).mean(axis=1) + delta

    grid = (-10.0, 10.0, 40001)
    oracles = {b: stationary_density_1d(cost, fisher, T, b, grid) for b in ("jeffreys", "flat")}
    return problem, T, oracles


def run_fokker_planck_suite(cfg: ExperimentConfig) -> list[dict]:
    """Long one-parameter chains compared with quadrature stationary densities.

    For each toy metric and each Riemannian rule, ``tv`` is the distance to
    the oracle matching the rule's bias and ``tv_other`` to the opposite
    one. SNGD and plain minibatch NGD on the one-feature logistic problem
    are compared with the Jeffreys-biased and flat oracles.
    """
    rows = []
    eps, steps, chains = cfg["fokker.eps"], cfg["fokker.steps"], cfg["fokker.chains"]
    burn, thin, bins = cfg["fokker.burn_in"], cfg["fokker.thinning"], cfg["fokker.bins"]
    for i, name in enumerate(_split(cfg["fokker.toys"])):
        if name not in TOYS:
            raise ConfigError(f"unknown toy {name!r}")
        toy = TOYS[name]()
        dens = {b: stationary_density_1d(toy.cost, toy.g, 1.0, b, TOY_GRID) for b in ("jeffreys", "flat")}
        for rule in _split(cfg["fokker.rules"]):
            bias = rule.split("_")[-1]
            if bias not in dens:
                raise ConfigError(f"fokker.rules takes riemannian_jeffreys / riemannian_flat, not {rule!r}")
            other = "flat" if bias == "jeffreys" else "jeffreys"
            samples, div = run_scalar_ensemble(
                toy, rule, eps, steps, chains, burn_in=burn, thinning=thin,
                seed=point_seed(cfg["seed"], rule, float(i)),
            )
            rows.append({
                "system": toy.name, "rule": rule, "oracle": bias, "eps": eps,
                "n_samples": int(samples.size), "diverged_chains": int(div.sum()),
                "tv": total_variation(samples, dens[bias], bins),
                "tv_other": total_variation(samples, dens[other], bins),
            })
    problem, T, oracles = logistic_toy(cfg)
    for rule, bias in (("sngd", "jeffreys"), ("minibatch_ngd", "flat")):
        other = "flat" if bias == "jeffreys" else "jeffreys"
        samples, div = run_scalar_ensemble(
            problem, rule, cfg["fokker.logistic_eps"], cfg["fokker.logistic_steps"], cfg["fokker.logistic_chains"],
            batch_size=cfg["fokker.logistic_batch"], damping=cfg["fokker.logistic_damping"],
            burn_in=cfg["fokker.logistic_burn_in"], seed=point_seed(cfg["seed"], rule, T),
            initial=oracles["jeffreys"].mean(),
        )
        rows.append({
            "system": "logistic1d", "rule": rule, "oracle": bias, "eps": cfg["fokker.logistic_eps"],
            "n_samples": int(samples.size), "diverged_chains": int(div.sum()),
            "tv": total_variation(samples, oracles[bias], bins),
            "tv_other": total_variation(samples, oracles[other], bins),
        })
    return rows


# --------------------------------------------------------------------------
# output


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def emit_table(rows: list[dict], columns, fmt: str, path) -> Path:
    """Write dict rows with a fixed column order as CSV or JSON."""
    if not rows:
        raise ValueError("nothing to emit: no results")
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_cell(r[c]) for c in columns])
    else:
        def clean(v):
            if isinstance(v, (bool, np.bool_)):
                return bool(v)
            if isinstance(v, (float, np.floating)):
                return None if math.isnan(v) else float(v)
            if isinstance(v, np.integer):
                return int(v)
            return v

        payload = {"columns": list(columns), "rows": [[clean(r[c]) for c in columns] for r in rows]}
        path.write_text(json.dumps(payload, indent=1) + "\n")
    return path


def _result_row(r: EnsembleResult) -> dict:
    d = asdict(r)
    return {c: d[_FIELD_OF_COLUMN[c]] for c in RESULT_COLUMNS}


def emit(results, fmt: str, path) -> Path:
    """Write sweep results; columns are :data:`RESULT_COLUMNS` in that order."""
    return emit_table([_result_row(r) for r in results], RESULT_COLUMNS, fmt, path)


def read_results(path) -> list[EnsembleResult]:
    """Parse a file written by :func:`emit` (CSV or JSON by suffix)."""
    path = Path(path)
    if path.suffix == ".json":
        payload = json.loads(path.read_text())
        columns = payload["columns"]
        raw = [dict(zip(columns, row)) for row in payload["rows"]]
    else:
        with open(path, newline="") as f:
            raw = list(csv.DictReader(f))
    out = []
    for r in raw:
        kw = {}
        for c in RESULT_COLUMNS:
            v = r[c]
            name = _FIELD_OF_COLUMN[c]
            if name == "batch_size":
                kw[name] = int(v)
            elif name == "diverged":
                kw[name] = bool(v) if isinstance(v, bool) else v == "1"
            elif name == "rule":
                kw[name] = str(v)
            else:
                kw[name] = float("nan") if v is None else float(v)
        out.append(EnsembleResult(**kw))
    return out
