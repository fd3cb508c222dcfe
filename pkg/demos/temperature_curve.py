"""Ensemble test cross-entropy as a function of temperature.

For minibatch NGD the temperature is set through the batch size,
T = (eps N / 2B)(1 - B/N); preconditioned Langevin injects noise at T directly.

    python demos/temperature_curve.py
"""
from ngd_sampling.harness import ExperimentConfig, run_temperature_sweep

cfg = ExperimentConfig.preset("sweep-temperature", **{"sampler.burn_in": 500, "sampler.samples": 500})
for rule, rows in run_temperature_sweep(cfg).items():
    print(rule)
    for r in rows:
        print(f"  T={r.sweep_value:<6g} B={r.batch_size:<5d} ensemble xent {r.ensemble_cross_entropy:.4f}"
              f"  single-sample xent {r.single_sample_cross_entropy:.4f}")
