"""The Jeffreys bias of Riemannian Langevin dynamics on a 1-D toy.

With metric g(u) = 1 + u^2 and cost u^2/2, the Jeffreys rule samples
e^{-C} |g|^{1/2} while the flat rule samples e^{-C}. Both histograms are
compared against quadrature oracles.

    python demos/jeffreys_bias.py
"""
from ngd_sampling.models import quadratic_metric_toy
from ngd_sampling.oracles import stationary_density_1d, total_variation
from ngd_sampling.samplers import run_scalar_ensemble

toy = quadratic_metric_toy()
oracles = {b: stationary_density_1d(toy.cost, toy.g, 1.0, b, (-12, 12, 24001)) for b in ("jeffreys", "flat")}
for bias in ("jeffreys", "flat"):
    samples, _ = run_scalar_ensemble(toy, "riemannian_" + bias, 1e-2, 20_000, 256, burn_in=1000, thinning=5, seed=1)
    tv = {b: total_variation(samples, o) for b, o in oracles.items()}
    print(f"{bias:8s} rule: TV to jeffreys oracle {tv['jeffreys']:.3f}, to flat oracle {tv['flat']:.3f}")
