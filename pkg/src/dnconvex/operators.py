"""
Sparse finite-difference operators on the Omega grid.

Fields are flattened in C order from arrays indexed ``[i1, i2]``.  The
"interior" operators map a full ``n1 x n2`` field to its
``(n1-2) x (n2-2)`` interior points; the Sobolev operators act on the
whole grid with one-sided stencils at the edges.
"""

import functools

import numpy as np
import scipy.sparse as sp

__all__ = [
    "diff1d",
    "interior_laplacian",
    "interior_gradient",
    "sobolev_multi_indices",
    "sobolev_derivatives",
    "sobolev_matrix",
    "apply_rows",
]


def diff1d(n: int, order: int, h: float) -> sp.csr_matrix:
    """1-D derivative of given order (0..3) on n points, full grid.

    Interior rows are centred; the first and last rows use second-order
    one-sided stencils.  Order 3 is the composition d1 @ d2, which is the
    standard centred 5-point third difference away from the edges.
    """
    if order == 0:
        return sp.identity(n, format="csr")
    if order == 1:
        D = sp.lil_matrix((n, n))
        for i in range(1, n - 1):
            D[i, i - 1], D[i, i + 1] = -0.5, 0.5
        D[0, :3] = [-1.5, 2.0, -0.5]
        D[n - 1, n - 3:] = [0.5, -2.0, 1.5]
        return (D.tocsr() / h)
    if order == 2:
        D = sp.lil_matrix((n, n))
        for i in range(1, n - 1):
            D[i, i - 1], D[i, i], D[i, i + 1] = 1.0, -2.0, 1.0
        D[0, :4] = [2.0, -5.0, 4.0, -1.0]
        D[n - 1, n - 4:] = [-1.0, 4.0, -5.0, 2.0]
        return (D.tocsr() / h**2)
    if order == 3:
        return (diff1d(n, 1, h) @ diff1d(n, 2, h)).tocsr()
    raise ValueError("order must be 0..3")


def _restrict(n: int) -> sp.csr_matrix:
    """Selects points 1..n-2 of n."""
    return sp.eye(n - 2, n, k=1, format="csr")


@functools.lru_cache(maxsize=16)
def interior_laplacian(n1: int, n2: int, h: float) -> sp.csr_matrix:
    """5-point Laplacian evaluated at interior points."""

    def d2(n):
        return sp.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(n - 2, n)) / h**2

    return (sp.kron(d2(n1), _restrict(n2)) + sp.kron(_restrict(n1), d2(n2))).tocsr()


@functools.lru_cache(maxsize=16)
def interior_gradient(n1: int, n2: int, h: float):
    """Centred first differences (d/dx1, d/dx2) at interior points."""

    def d1(n):
        return sp.diags([-0.5, 0.5], [0, 2], shape=(n - 2, n)) / h

    return (
        sp.kron(d1(n1), _restrict(n2)).tocsr(),
        sp.kron(_restrict(n1), d1(n2)).tocsr(),
    )


def sobolev_multi_indices(order: int):
    return [(a, k - a) for k in range(order + 1) for a in range(k, -1, -1)]


@functools.lru_cache(maxsize=16)
def sobolev_derivatives(n1: int, n2: int, h: float, order: int):
    """List of (multi-index, operator) pairs for |alpha| <= order."""
    if order not in (1, 2, 3):
        raise ValueError("Sobolev order must be 1, 2 or 3")
    ops = []
    for a, b in sobolev_multi_indices(order):
        ops.append(((a, b), sp.kron(diff1d(n1, a, h), diff1d(n2, b, h)).tocsr()))
    return tuple(ops)


@functools.lru_cache(maxsize=16)
def sobolev_matrix(n1: int, n2: int, h: float, order: int) -> sp.csc_matrix:
    """S with ``||W||^2_{H^s} = W^T S W`` (per component)."""
    S = sp.csr_matrix((n1 * n2, n1 * n2))
    for _, D in sobolev_derivatives(n1, n2, h, order):
        S = S + D.T @ D
    return (h**2 * S).tocsc()


def apply_rows(op, U: np.ndarray) -> np.ndarray:
    """Apply a sparse operator to each component of a stacked field (N, n1, n2)."""
    N = U.shape[0]
    return np.asarray((op @ U.reshape(N, -1).T).T)
