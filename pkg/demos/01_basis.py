"""
The exponential-weight polynomial basis
=======================================

The reduced system is built on psi_k(x0) = P_k(x0) exp(x0), orthonormal in
L2(0, 1).  Because the weight is an exponential, differentiation keeps each
element inside the span of its predecessors, so the derivative matrix is
unit upper triangular and invertible for every N.
"""

import numpy as np

from dnconvex.basis import build_basis, derivative_matrix, triple_tensor

np.set_printoptions(precision=4, suppress=True, linewidth=100)

##############################################################################
# Build four elements and look at the Gram residual.

b = build_basis(4)
print("Gram residual:", b.gram_residual)

x = np.linspace(0, 1, 5)
print("psi_k at five points:\n", b.values(x))

##############################################################################
# The derivative matrix: ones on the diagonal, zeros below it.

dm = derivative_matrix(b)
print("M_N =\n", dm.entries)
print("det M_N =", dm.det)
print("max |M_N^{-1}| =", np.abs(dm.inverse).max())

##############################################################################
# The inverse grows quickly with N.  This is why the default system keeps
# M_N on the left instead of multiplying through by its inverse.

for N in range(2, 9):
    print(N, "max |M^-1| =", f"{np.abs(derivative_matrix(build_basis(N)).inverse).max():.3g}")

##############################################################################
# The triple tensor couples the gradients in the quadratic term.

B = triple_tensor(b).values
print("B shape:", B.shape, " max |B| =", np.abs(B).max())
