"""
Synthetic Dirichlet-to-Neumann data
===================================

A point-like source moves along the line x2 = -1 below the domain.  For
each position the elliptic problem -Delta u - a0 u = f is solved on a
large box, and the trace of u and its normal derivative are recorded on
the bottom edge Gamma of Omega = (0, 1) x (0, H).  Only this restricted
data is handed to the inversion.
"""

import numpy as np

from dnconvex.domain import GridSpec
from dnconvex.forward import CoefficientField, add_noise, dn_from_fields, simulate

##############################################################################
# A single inclusion of negative a0 near Gamma.

grid = GridSpec(n1=33, n2=33)
a0 = CoefficientField.from_truth(grid, 0.0, [dict(center=(0.5, 0.1), radius=0.12, amplitude=-0.5)])
print("a0 range on Omega:", a0.omega_values.min(), a0.omega_values.max())

##############################################################################
# Solve for 64 source positions and read off the data on Gamma.

stack = simulate(a0, grid, 0.25, 64)
data = dn_from_fields(stack, grid, 2.0)
print("K =", data.K, " Gamma points =", data.g0.shape[1])
print("smallest trace value:", data.g0.min(), "(positive, as the maximum principle requires)")

##############################################################################
# Multiplicative noise of relative size 1 percent, reproducible by seed.

noisy = add_noise(data, 0.01, seed=7)
rel = np.abs(noisy.g0 - data.g0) / np.abs(data.g0)
print("max relative perturbation:", rel.max())
