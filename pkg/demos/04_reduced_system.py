"""
From data to a boundary-value problem for the coefficients
==========================================================

The log of the field is expanded in the basis.  Dirichlet and Neumann
data become boundary values for the coefficient vector V, which are
lifted into the domain by an extension p.  The unknown is then W = V - p,
with zero Cauchy data on Gamma.
"""

import numpy as np

from dnconvex.basis import build_basis
from dnconvex.domain import CWFSpec, GridSpec, build_masks
from dnconvex.forward import CoefficientField, dn_from_fields, interior_truth, simulate
from dnconvex.system import (
    boundary_coefficients,
    build_system,
    extend_boundary,
    log_transform,
    residual_from_total,
)

grid = GridSpec(n1=33, n2=33)
a0 = CoefficientField.from_truth(grid, 0.0, [dict(center=(0.5, 0.1), radius=0.12, amplitude=-0.5)])
stack = simulate(a0, grid, 0.25, 64)
data = dn_from_fields(stack, grid, 2.0)
basis = build_basis(4)
masks = build_masks(grid, CWFSpec(nu=1.05, d=2.25, c=0.95))

##############################################################################
# Boundary coefficients and the extension.

logd = log_transform(data)
bc = boundary_coefficients(logd, basis)
ext = extend_boundary(bc, grid, cutoff_depth=0.6)
print("extension shape:", ext.p.shape)

##############################################################################
# The interior truth V* gives a small but nonzero residual: the price of
# truncating the series at N = 4.

tr = interior_truth(a0, grid, 0.25, 64, basis, u_stack=stack)
q = build_system(basis, grid, masks, "premultiplied")
r = residual_from_total(q, tr.V_star)
print("max |residual at V*| =", np.abs(r).max(), " beta_min =", tr.beta_min)
