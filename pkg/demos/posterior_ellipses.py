"""Two-parameter logistic posterior: Laplace ellipse vs sampler ellipses.

Runs the three figure-1 samplers with a shortened chain and prints how far
each sample covariance is from the Laplace covariance. Plot the CSV files in
the output directory to see the ellipses.

    python demos/posterior_ellipses.py [out_dir]
"""
import sys

from ngd_sampling.harness import ExperimentConfig, run_figure1

out = sys.argv[1] if len(sys.argv) > 1 else "demo_figure1"
cfg = ExperimentConfig.preset("figure1", **{"sampler.burn_in": 2000, "sampler.samples": 2000})
summary = run_figure1(cfg, out)
for label, m in summary["modes"].items():
    print(f"{label:16s} B={m['batch_size']:5d}  cov rel. error {m['cov_frobenius_rel']:.3f}  "
          f"mean Mahalanobis {m['mean_mahalanobis']:.3f}  ({m['runtime_s']:.1f}s)")
print(f"ellipse polylines and chains written to {out}/")
