"""
Convexity on a ball and the effect of noise
===========================================

Two diagnostics: Bregman margins of the weighted functional at random
pairs in the ball, and the reconstruction error as the noise level grows,
summarised by a power-law fit.
"""

from dnconvex.config import default_config
from dnconvex.pipeline import build_problem, grid_from_config, run_stability_study, synthesize
from dnconvex.solver import ObjectiveSpec, convexity_probe

cfg = default_config()
grid = grid_from_config(cfg)
_, _, data = synthesize(cfg, grid)
prob = build_problem(cfg, data, grid)

spec = ObjectiveSpec(lam=2.0, gamma=0.1, d=cfg.cwf.d, c=cfg.cwf.c, R=cfg.optimizer.R)
rep = convexity_probe(spec, prob.system, prob.extension, pairs=100, seed=0)
print("fraction of pairs with a nonnegative margin:", rep.fraction_nonneg)
print("smallest margin:", min(rep.margins))

##############################################################################
# Error against noise level.

st = run_stability_study(cfg, [1e-3, 1e-2, 1e-1], write=False)
for lv, e in zip(st["levels"], st["err_H1_omega_dc"]):
    print(f"noise {lv:.0e}: H1 error {e:.3e}")
print("fitted exponent:", st["holder_fit"]["slope"], " reference c/(m+c):", st["holder_fit"]["rho_theory"])
