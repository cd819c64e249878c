"""
Reduction of the inverse problem to a coupled quasilinear system.

With ``v = ln u`` the equation ``Delta u + a0 u = 0`` in Omega becomes
``Delta v + |grad v|^2 = -a0``.  Differentiating in ``x0`` removes ``a0``:

    Delta v' + 2 grad v . grad v' = 0,     v' = dv/dx0.

Expanding ``v = sum_k V_k(x) psi_k(x0)`` and projecting on ``psi_m`` gives
``M Delta V = -2 r`` with ``r_m = sum_jk B[m,j,k] grad V_j . grad V_k``,
i.e. ``Delta V = P(grad V)`` with ``P = -2 M^{-1} r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import (
    OrthonormalBasis,
    derivative_matrix,
    project_function,
    triple_tensor,
)
from .domain import GridSpec, RegionMasks
from .forward import DNData, PositivityError
from .operators import apply_rows, interior_gradient, interior_laplacian

__all__ = [
    "ClassViolation",
    "LogDNData",
    "BoundaryCoefficients",
    "ExtensionField",
    "VectorField",
    "QuasilinearSystem",
    "log_transform",
    "boundary_coefficients",
    "extend_boundary",
    "extension_from_field",
    "smooth_cutoff",
    "build_system",
    "quadratic_rhs",
    "residual_L",
    "residual_from_total",
    "residual_adjoint",
    "interior_grad",
    "to_class",
    "class_gradient",
    "class_violation",
]

CLASS_TOL = 1e-12
TAPER_CELLS = 3


class ClassViolation(ValueError):
    pass


@dataclass(frozen=True)
class LogDNData:
    gt0: np.ndarray = field(repr=False)
    gt1: np.ndarray = field(repr=False)
    x0_samples: np.ndarray = field(repr=False)
    columns: np.ndarray | None = field(default=None, repr=False)


def log_transform(d: DNData) -> LogDNData:
    """``gt0 = ln g0`` and ``gt1 = g1 / g0``."""
    if np.any(d.g0 <= 0):
        raise PositivityError("log transform needs g0 > 0")
    return LogDNData(np.log(d.g0), d.g1 / d.g0, d.x0_samples, d.columns)


@dataclass(frozen=True)
class BoundaryCoefficients:
    p0: np.ndarray = field(repr=False)  # (N, |Gamma|)
    p1: np.ndarray = field(repr=False)
    columns: np.ndarray | None = field(default=None, repr=False)


def boundary_coefficients(ld: LogDNData, basis: OrthonormalBasis, mode: str = "direct"):
    """Basis coefficients of the boundary data at every Gamma point.

    ``mode="direct"`` projects ``gt0, gt1`` on ``psi_k``.  ``mode="derivative"``
    projects ``d gt / dx0`` (second-order differences over the x0 grid) on
    ``psi_m`` and solves ``M p = <dgt, psi>`` for comparison.
    """
    if mode == "direct":
        p0 = project_function(ld.gt0, basis)
        p1 = project_function(ld.gt1, basis)
    elif mode == "derivative":
        Minv = derivative_matrix(basis).inverse
        x = ld.x0_samples
        p0 = Minv @ project_function(np.gradient(ld.gt0, x, axis=0, edge_order=2), basis)
        p1 = Minv @ project_function(np.gradient(ld.gt1, x, axis=0, edge_order=2), basis)
    else:
        raise ValueError(f"unknown boundary coefficient mode {mode!r}")
    return BoundaryCoefficients(p0, p1, ld.columns)


def smooth_cutoff(t, delta: float):
    """C^2 cutoff: 1 on [0, delta/2], 0 beyond delta, quintic smoothstep between."""
    s = np.clip((np.asarray(t, dtype=float) - delta / 2) / (delta / 2), 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


@dataclass(frozen=True)
class ExtensionField:
    p: np.ndarray = field(repr=False)  # (N, n1, n2)
    cutoff_depth: float
    columns: np.ndarray = field(repr=False)


def _full_row(vals: np.ndarray, columns: np.ndarray, n1: int, taper: bool) -> np.ndarray:
    out = np.zeros((vals.shape[0], n1))
    w = np.ones(columns.size)
    if taper:
        k = np.arange(columns.size)
        s = np.clip(np.minimum(k, columns.size - 1 - k) / TAPER_CELLS, 0.0, 1.0)
        w = s**3 * (10.0 - 15.0 * s + 6.0 * s**2)
    out[:, columns] = vals * w
    return out


def extend_boundary(bc: BoundaryCoefficients, grid: GridSpec, cutoff_depth: float | None = None):
    """``p = [p0(x1) - x2 p1(x1)] eta(x2)``.

    The trace of ``p`` on Gamma is ``p0`` and its outward (downward) normal
    derivative is ``p1``.  When Gamma is only part of the bottom edge the
    data is tapered to zero over a few cells at its ends.
    """
    cols = bc.columns if bc.columns is not None else np.arange(grid.n1)
    delta = cutoff_depth if cutoff_depth is not None else grid.height / 4
    taper = cols.size < grid.n1
    p0 = _full_row(bc.p0, cols, grid.n1, taper)
    p1 = _full_row(bc.p1, cols, grid.n1, taper)
    x2 = np.arange(grid.n2) * grid.h
    eta = smooth_cutoff(x2, delta)
    p = (p0[:, :, None] - x2[None, None, :] * p1[:, :, None]) * eta[None, None, :]
    return ExtensionField(p, float(delta), np.asarray(cols))


def extension_from_field(V: np.ndarray, grid: GridSpec, columns, cutoff_depth=None):
    """Extension built from the exact trace and one-sided normal derivative of V.

    ``V - p`` is then in the zero-Cauchy class on Gamma up to rounding.
    """
    cols = np.asarray(columns)
    p0 = V[:, cols, 0]
    p1 = -(-3.0 * V[:, cols, 0] + 4.0 * V[:, cols, 1] - V[:, cols, 2]) / (2.0 * grid.h)
    return extend_boundary(BoundaryCoefficients(p0, p1, cols), grid, cutoff_depth)


# ---------------------------------------------------------------------------
# zero-Cauchy class on Gamma: W = 0 and (-3 W0 + 4 W1 - W2) = 0 on Gamma columns


@dataclass(frozen=True)
class VectorField:
    components: np.ndarray
    bc_class: str = "free"

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.components, dtype=dtype)


def to_class(W: np.ndarray, columns) -> np.ndarray:
    """Impose the zero-Cauchy constraints, keeping free entries (rows >= 1)."""
    W = np.array(W, dtype=float, copy=True)
    W[:, columns, 0] = 0.0
    W[:, columns, 2] = 4.0 * W[:, columns, 1]
    return W


def class_gradient(G: np.ndarray, columns) -> np.ndarray:
    """Chain rule through ``to_class``: gradient w.r.t. the free entries.

    Constrained entries (row 0 and row 2 on Gamma) are zero in the result.
    """
    G = np.array(G, dtype=float, copy=True)
    G[:, columns, 1] += 4.0 * G[:, columns, 2]
    G[:, columns, 0] = 0.0
    G[:, columns, 2] = 0.0
    return G


def class_violation(W: np.ndarray, columns, h: float = 1.0) -> float:
    W = np.asarray(W)
    tr = np.abs(W[:, columns, 0])
    dn = np.abs(-3.0 * W[:, columns, 0] + 4.0 * W[:, columns, 1] - W[:, columns, 2]) / (2 * h)
    return float(max(tr.max(initial=0.0), dn.max(initial=0.0)))


def _check_class(W, columns, h):
    scale = max(1.0, float(np.max(np.abs(W))))
    if class_violation(W, columns, 1.0) > CLASS_TOL * scale:
        raise ClassViolation("W is not in the zero-Cauchy class on Gamma")


# ---------------------------------------------------------------------------


RESIDUAL_FORMS = ("inverse", "premultiplied")


@dataclass(frozen=True)
class QuasilinearSystem:
    """Everything needed to evaluate ``Delta V - P(grad V)`` on the grid.

    ``form="inverse"`` uses the residual ``Delta V - P(grad V)``.
    ``form="premultiplied"`` uses ``M (Delta V - P(grad V)) = M Delta V + 2 r``,
    which has the same zeros but does not amplify the truncation error of
    the x0 expansion by ``M^{-1}`` (whose entries grow quickly with N).
    """

    basis: OrthonormalBasis
    M_inv: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    grid: GridSpec
    masks: RegionMasks | None = field(default=None, repr=False)
    form: str = "inverse"
    C: np.ndarray = field(default=None, repr=False)
    T: np.ndarray = field(default=None, repr=False)
    CT: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        N = self.basis.N
        if self.M_inv.shape != (N, N) or self.B.shape != (N, N, N):
            raise ValueError("inconsistent N across system members")
        if self.form not in RESIDUAL_FORMS:
            raise ValueError(f"unknown residual form {self.form!r}")
        # P_m = sum_jk C[m,j,k] gradV_j . gradV_k
        object.__setattr__(self, "C", -2.0 * np.einsum("mn,njk->mjk", self.M_inv, self.B))
        if self.form == "inverse":
            T = np.eye(N)
        else:
            T = np.linalg.inv(self.M_inv)
            T = np.triu(T)
            np.fill_diagonal(T, 1.0)
        object.__setattr__(self, "T", T)
        # residual_m = sum_n T[m,n] Lap U_n - sum_jk CT[m,j,k] gradU_j . gradU_k
        object.__setattr__(self, "CT", np.einsum("mn,njk->mjk", T, self.C))

    @property
    def N(self) -> int:
        return self.basis.N

    @property
    def columns(self):
        if self.masks is not None:
            return self.masks.gamma_columns
        return np.arange(self.grid.n1)

    def ops(self):
        g = self.grid
        lap = interior_laplacian(g.n1, g.n2, g.h)
        d1, d2 = interior_gradient(g.n1, g.n2, g.h)
        return lap, d1, d2


def build_system(basis: OrthonormalBasis, grid: GridSpec, masks: RegionMasks | None = None,
                 form: str = "inverse"):
    return QuasilinearSystem(basis, derivative_matrix(basis).inverse, triple_tensor(basis).values,
                             grid, masks, form)


def quadratic_rhs(q: QuasilinearSystem, gradV) -> np.ndarray:
    """``P_m = -2 sum_n Minv[m,n] sum_jk B[n,j,k] gradV_j . gradV_k`` pointwise.

    ``gradV`` has shape (N, 2, ...) with spatial axes trailing.
    """
    gradV = np.asarray(gradV, dtype=float)
    dots = np.einsum("ja...,ka...->jk...", gradV, gradV)
    return np.einsum("mjk,jk...->m...", q.C, dots)


def interior_grad(q: QuasilinearSystem, U: np.ndarray) -> np.ndarray:
    """Centred gradient at interior points, shape (N, 2, n1-2, n2-2)."""
    _, d1, d2 = q.ops()
    g = q.grid
    shp = (U.shape[0], g.n1 - 2, g.n2 - 2)
    return np.stack([apply_rows(d1, U).reshape(shp), apply_rows(d2, U).reshape(shp)], axis=1)


def residual_from_total(q: QuasilinearSystem, U: np.ndarray) -> np.ndarray:
    """``Delta_h U - P(grad_h U)`` at interior points, shape (N, n1-2, n2-2).

    For the premultiplied form the result is multiplied by M.
    """
    lap, _, _ = q.ops()
    g = q.grid
    LU = apply_rows(lap, U).reshape(U.shape[0], g.n1 - 2, g.n2 - 2)
    res = LU - quadratic_rhs(q, interior_grad(q, U))
    if q.form == "inverse":
        return res
    return np.einsum("mn,n...->m...", q.T, res)


def residual_L(q: QuasilinearSystem, p, W, check_class: bool = True) -> np.ndarray:
    """Residual of the system for ``V = W + p`` at interior points."""
    W = np.asarray(W, dtype=float)
    pv = p.p if isinstance(p, ExtensionField) else np.asarray(p, dtype=float)
    if check_class:
        _check_class(W, q.columns, q.grid.h)
    return residual_from_total(q, W + pv)


def residual_adjoint(q: QuasilinearSystem, U: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Transpose of the linearised residual at U applied to R.

    Returns ``G`` (full grid) with ``<G, dU> = <R, dL(U)[dU]>``.
    """
    lap, d1, d2 = q.ops()
    N = U.shape[0]
    Rf = R.reshape(N, -1)
    gU = interior_grad(q, U).reshape(N, 2, -1)
    Cs = q.CT + q.CT.transpose(0, 2, 1)
    # d(T P)_m = sum_jk Cs[m,j,k] gradU_k . grad dU_j
    Q = np.einsum("mjk,mx,kax->jax", Cs, Rf, gU)
    TR = q.T.T @ Rf
    G = (lap.T @ TR.T).T - (d1.T @ Q[:, 0].T).T - (d2.T @ Q[:, 1].T).T
    return np.asarray(G).reshape(U.shape)
