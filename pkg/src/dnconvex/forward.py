"""
Forward elliptic problem and restricted Dirichlet-to-Neumann data.

For each source position ``x0`` on the line ``x2 = -1`` we solve

    Delta u + a0 u = -f(x1 - x0) chi(x2 + 1)   in G,   u = 0 on dG,

with the 5-point stencil and conjugate gradients, then read the trace and
the outward normal derivative of ``u`` on the data boundary Gamma.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .basis import OrthonormalBasis, evaluate_expansion, project_function
from .domain import SOURCE_X2, GridSpec, gamma_columns

__all__ = [
    "ForwardError",
    "PositivityError",
    "SolverError",
    "Inclusion",
    "CoefficientField",
    "SourceSpec",
    "DNData",
    "InteriorTruth",
    "bump",
    "solve_elliptic",
    "solve_source",
    "extract_dn",
    "simulate",
    "dn_from_fields",
    "synthesize_dataset",
    "add_noise",
    "interior_truth",
    "x0_grid",
]

log = logging.getLogger(__name__)

MIN_SAMPLES = 32


class ForwardError(ValueError):
    pass


class PositivityError(ForwardError):
    """A quantity that must stay positive (u, g0) did not."""


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# coefficient and source


@dataclass(frozen=True)
class Inclusion:
    center: tuple
    radius: float
    amplitude: float

    def __call__(self, X1, X2):
        r2 = (X1 - self.center[0]) ** 2 + (X2 - self.center[1]) ** 2
        return self.amplitude * np.exp(-r2 / self.radius**2)


@dataclass(frozen=True)
class CoefficientField:
    """a0 sampled on the G grid; zero outside closed Omega."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)
    truth_spec: dict | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.g_shape:
            raise ForwardError(f"a0 has shape {v.shape}, expected {self.grid.g_shape}")
        if not np.all(np.isfinite(v)):
            raise ForwardError("a0 has non-finite entries")
        outside = np.ones(v.shape, dtype=bool)
        outside[self.grid.omega_slice] = False
        if np.any(v[outside] != 0.0):
            raise ForwardError("a0 must vanish on G outside Omega")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_truth(cls, grid: GridSpec, background: float = 0.0, inclusions=()):
        incl = [i if isinstance(i, Inclusion) else Inclusion(**i) for i in inclusions]
        X1, X2 = grid.omega_coords()
        om = np.full(X1.shape, float(background))
        for inc in incl:
            om = om + inc(X1, X2)
        vals = np.zeros(grid.g_shape)
        vals[grid.omega_slice] = om
        spec = {
            "background": float(background),
            "inclusions": [
                {"center": list(i.center), "radius": i.radius, "amplitude": i.amplitude}
                for i in incl
            ],
        }
        return cls(grid, vals, spec)

    @classmethod
    def zero(cls, grid: GridSpec):
        return cls.from_truth(grid, 0.0, ())

    @property
    def omega_values(self) -> np.ndarray:
        return self.values[self.grid.omega_slice]

    def check_sign(self):
        mx = float(self.omega_values.max())
        if mx > 0.0:
            raise ForwardError(f"a0 <= 0 on Omega violated (max a0 = {mx:.3g})")


def bump(z, eps):
    """C^2 bump ``(1 - (z/eps)^2)^3`` on ``|z| < eps``, zero elsewhere."""
    t = 1.0 - (np.asarray(z, dtype=float) / eps) ** 2
    return np.where(t > 0, t**3, 0.0)


@dataclass(frozen=True)
class SourceSpec:
    x0: float
    eps_width: float = 0.25
    amplitude: float = 1.0
    xbar0: float = SOURCE_X2

    def __post_init__(self):
        if not 0.0 <= self.x0 <= 1.0:
            raise ForwardError("x0 must lie in [0, 1]")
        if self.eps_width <= 0 or self.amplitude <= 0:
            raise ForwardError("eps_width and amplitude must be positive")

    def check_fits(self, grid: GridSpec):
        """Support must sit in G minus closed Omega, clear of dG."""
        h = grid.h
        room = min(grid.side, self.xbar0 - grid.bottom, -self.xbar0)
        if self.eps_width >= room - h:
            raise ForwardError(
                f"eps_width {self.eps_width} leaves no clearance (needs < {room - h:.4g})"
            )

    def rhs(self, grid: GridSpec) -> np.ndarray:
        X1, X2 = grid.g_coords()
        return self.amplitude * bump(X1 - self.x0, self.eps_width) * bump(X2 - self.xbar0, self.eps_width)


# ---------------------------------------------------------------------------
# linear solver


@functools.lru_cache(maxsize=8)
def _neg_laplacian(n1: int, n2: int, h: float) -> sp.csr_matrix:
    """-Delta_h on the (n1-2) x (n2-2) interior nodes, Dirichlet borders removed."""

    def d2(n):
        return sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))

    m1, m2 = n1 - 2, n2 - 2
    A = sp.kron(d2(m1), sp.identity(m2)) + sp.kron(sp.identity(m1), d2(m2))
    return (A / h**2).tocsr()


def solve_elliptic(a0, rhs, h: float, boundary=None, rtol: float = 1e-10, maxiter=None):
    """Solve ``Delta u + a0 u = -rhs`` at interior nodes of a rectangle.

    Border values come from ``boundary`` (same shape, only its border read)
    or are zero.  The matrix ``-Delta_h - a0`` is symmetric; it is positive
    definite when ``a0 <= 0`` and CG is used throughout.
    """
    a0 = np.asarray(a0, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n1, n2 = rhs.shape
    if a0.shape != rhs.shape:
        a0 = np.broadcast_to(a0, rhs.shape)
    A = _neg_laplacian(n1, n2, float(h)) - sp.diags(a0[1:-1, 1:-1].ravel())
    b = rhs[1:-1, 1:-1].copy()
    u = np.zeros((n1, n2))
    if boundary is not None:
        bd = np.asarray(boundary, dtype=float)
        u[0, :], u[-1, :], u[:, 0], u[:, -1] = bd[0, :], bd[-1, :], bd[:, 0], bd[:, -1]
        # move known border values to the right-hand side
        b[0, :] += u[0, 1:-1] / h**2
        b[-1, :] += u[-1, 1:-1] / h**2
        b[:, 0] += u[1:-1, 0] / h**2
        b[:, -1] += u[1:-1, -1] / h**2
    bn = np.linalg.norm(b)
    if bn == 0.0:
        return u
    maxiter = maxiter or 20 * (n1 + n2) * 4
    x, info = cg(A, b.ravel(), rtol=rtol, atol=0.0, maxiter=maxiter)
    if info != 0:
        raise SolverError(f"CG did not reach rtol={rtol} in {maxiter} iterations")
    u[1:-1, 1:-1] = x.reshape(n1 - 2, n2 - 2)
    return u


def solve_source(a0: CoefficientField, src: SourceSpec, grid: GridSpec, rtol: float = 1e-10):
    """u on the whole G grid for one source position."""
    a0.check_sign()
    src.check_fits(grid)
    return solve_elliptic(a0.values, src.rhs(grid), grid.h, rtol=rtol)


def extract_dn(u_omega: np.ndarray, columns: np.ndarray, h: float):
    """Trace and outward normal derivative on the bottom edge.

    ``u_omega`` is indexed [x1, x2] on Omega; the outward normal is -x2 so
    ``g1 = -(-3 u0 + 4 u1 - u2) / (2h)``.
    """
    u0, u1, u2 = u_omega[columns, 0], u_omega[columns, 1], u_omega[columns, 2]
    return u0.copy(), -(-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * h)


# ---------------------------------------------------------------------------
# datasets


def x0_grid(K: int) -> np.ndarray:
    if K < MIN_SAMPLES:
        raise ForwardError(f"need K >= {MIN_SAMPLES} source positions, got {K}")
    return np.linspace(0.0, 1.0, K)


@dataclass(frozen=True)
class DNData:
    x0_samples: np.ndarray = field(repr=False)
    g0: np.ndarray = field(repr=False)
    g1: np.ndarray = field(repr=False)
    noise_level: float = 0.0
    seed: int | None = None
    columns: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.g0.shape != self.g1.shape or self.g0.shape[0] != len(self.x0_samples):
            raise ForwardError("inconsistent DN data shapes")

    @property
    def K(self) -> int:
        return len(self.x0_samples)


def simulate(a0: CoefficientField, grid: GridSpec, eps_width: float, K: int,
             amplitude: float = 1.0, rtol: float = 1e-10) -> np.ndarray:
    """Stack of u restricted to Omega, shape (K, n1, n2)."""
    xs = x0_grid(K)
    out = np.empty((K, grid.n1, grid.n2))
    for i, x0 in enumerate(xs):
        u = solve_source(a0, SourceSpec(float(x0), eps_width, amplitude), grid, rtol)
        out[i] = u[grid.omega_slice]
    return out


def dn_from_fields(u_stack: np.ndarray, grid: GridSpec, omega_param: float = 2.0) -> DNData:
    cols = gamma_columns(grid, omega_param)
    K = u_stack.shape[0]
    g0 = np.empty((K, cols.size))
    g1 = np.empty((K, cols.size))
    for i in range(K):
        g0[i], g1[i] = extract_dn(u_stack[i], cols, grid.h)
    if np.any(g0 <= 0):
        raise PositivityError("g0 <= 0 on Gamma; the log transform needs positive traces")
    return DNData(x0_grid(K), g0, g1, 0.0, None, cols)


def synthesize_dataset(a0: CoefficientField, grid: GridSpec, eps_width: float = 0.25,
                       K: int = 64, amplitude: float = 1.0, omega_param: float = 2.0,
                       rtol: float = 1e-10) -> DNData:
    return dn_from_fields(simulate(a0, grid, eps_width, K, amplitude, rtol), grid, omega_param)


def add_noise(d: DNData, level: float, seed: int = 0) -> DNData:
    """Multiplicative uniform noise ``g <- g (1 + level * theta)``."""
    if not 0.0 <= level < 1.0:
        raise ForwardError("noise level must lie in [0, 1)")
    if level == 0.0:
        return replace(d, noise_level=0.0, seed=seed)
    rng = np.random.default_rng(seed)
    g0 = d.g0 * (1.0 + level * rng.uniform(-1.0, 1.0, d.g0.shape))
    g1 = d.g1 * (1.0 + level * rng.uniform(-1.0, 1.0, d.g1.shape))
    if np.any(g0 <= 0):
        raise PositivityError("noise drove g0 non-positive")
    return replace(d, g0=g0, g1=g1, noise_level=float(level), seed=seed)


@dataclass(frozen=True)
class InteriorTruth:
    x0_samples: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    V_star: np.ndarray = field(repr=False)
    beta_min: float
    truncation_residual: float


def interior_truth(a0: CoefficientField, grid: GridSpec, eps_width: float, K: int,
                   basis: OrthonormalBasis, amplitude: float = 1.0,
                   u_stack: np.ndarray | None = None) -> InteriorTruth:
    """Exact log-solutions on Omega and their basis projections V*."""
    if u_stack is None:
        u_stack = simulate(a0, grid, eps_width, K, amplitude)
    beta = float(u_stack.min())
    if beta <= 0:
        raise PositivityError(f"u <= 0 on closed Omega (min {beta:.3g}); positivity lost")
    v = np.log(u_stack)
    V = project_function(v, basis)
    xs = x0_grid(u_stack.shape[0])
    back = evaluate_expansion(V, xs, basis)
    resid = float(np.max(np.abs(back - v)))
    return InteriorTruth(xs, v, V, beta, resid)
