"""
Orthonormal basis of L2(0, 1) built from {x^k e^x}.

Elements are psi_k(x) = P_k(x) e^x with deg P_k = k.  All inner products
are evaluated exactly through exponential moments

    mu_j(s) = int_0^1 x^j e^{s x} dx,

so ``<P e^x, Q e^x> = sum_ij p_i q_j mu_{i+j}(2)`` and triple products use
``mu(3)``.  Internally the sums run over powers of ``x - 1/2`` with the
matching shifted moments; no symbolic algebra is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.integrate import simpson
from scipy.linalg import solve_triangular

__all__ = [
    "BasisError",
    "ExpPolynomial",
    "OrthonormalBasis",
    "DerivativeMatrix",
    "TripleTensor",
    "MAX_N",
    "exp_moment",
    "exp_moments",
    "build_basis",
    "basis_derivative",
    "derivative_matrix",
    "triple_tensor",
    "project_function",
    "evaluate_expansion",
]

MAX_N = 8
GRAM_TOL = 1e-8
MIN_SAMPLES = 32


class BasisError(ValueError):
    """Raised when a basis object cannot be built or fails its invariants."""


def exp_moments(jmax: int, scale: float) -> np.ndarray:
    """Return ``[mu_0(s), ..., mu_jmax(s)]`` with ``mu_j(s) = int_0^1 x^j e^{sx} dx``.

    The recurrence ``mu_j = e^s/s - (j/s) mu_{j-1}`` amplifies rounding by
    ``j/s`` per step, so it is run downwards (where it contracts) from a
    top value obtained by the positive series ``sum_n s^n / (n! (j+n+1))``.
    Values are returned in extended precision; callers cast as needed.
    """
    if jmax < 0:
        raise ValueError("jmax must be >= 0")
    if scale <= 0:
        raise ValueError("scale must be positive")
    s = np.longdouble(scale)
    es = np.exp(s)
    out = np.empty(jmax + 1, dtype=np.longdouble)
    if jmax <= s:
        out[0] = np.expm1(s) / s
        for j in range(1, jmax + 1):
            out[j] = es / s - (j / s) * out[j - 1]
        return out
    # top value from the series; every term is positive so no cancellation
    total, term, n = np.longdouble(0), np.longdouble(1), 0
    while True:
        add = term / (jmax + n + 1)
        total += add
        if add < 1e-21 * total:
            break
        n += 1
        term *= s / n
    out[jmax] = total
    for j in range(jmax, 0, -1):
        out[j - 1] = (es - s * out[j]) / j
    return out


def exp_moment(j: int, scale: float) -> float:
    """Single exponential moment ``int_0^1 x^j e^{scale x} dx``."""
    return float(exp_moments(j, scale)[j])


@dataclass(frozen=True)
class ExpPolynomial:
    """The function ``P(x) e^x`` with ``P(x) = sum_j coeffs[j] x^j``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float)).copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        nz = np.flatnonzero(self.coeffs)
        return int(nz[-1]) if nz.size else 0

    def poly(self, x):
        return npoly.polyval(x, self.coeffs)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return npoly.polyval(x, self.coeffs) * np.exp(x)

    def __mul__(self, k: float) -> "ExpPolynomial":
        return ExpPolynomial(self.coeffs * k)

    __rmul__ = __mul__


def basis_derivative(e: ExpPolynomial) -> ExpPolynomial:
    """d/dx [P e^x] = (P + P') e^x, returned as an ExpPolynomial."""
    c = e.coeffs
    out = c.copy()
    if c.size > 1:
        out[:-1] += npoly.polyder(c)
    return ExpPolynomial(out)


def centered_moments(jmax: int, scale: float) -> np.ndarray:
    """``int_0^1 (x - 1/2)^j e^{scale x} dx`` for ``j = 0..jmax`` (extended precision).

    Same downward-recurrence scheme as :func:`exp_moments`.  Powers of the
    centred variable are far better conditioned on [0, 1] than plain powers,
    which keeps the Gram/triple sums free of catastrophic cancellation.
    """
    s = np.longdouble(scale)
    half = np.longdouble(0.5)
    ep, em = np.exp(s * half), np.exp(-s * half)

    def edge(j):
        # [t^j e^{st}]_{-1/2}^{1/2}
        return half**j * (ep - (-1) ** j * em)

    total, term, n = np.longdouble(0), np.longdouble(1), 0
    top = jmax + 40
    while True:
        p = top + n + 1
        add = term * (2 * half**p / p if p % 2 else 0)
        total += add
        if n > 4 and add < 1e-21 * total:
            break
        n += 1
        term *= s / n
    nu = np.empty(top + 1, dtype=np.longdouble)
    nu[top] = total
    for j in range(top, 0, -1):
        nu[j - 1] = (edge(j) - s * nu[j]) / j
    return ep * nu[: jmax + 1]


def _shift(c, a) -> np.ndarray:
    """Coefficients of P(y + a) in powers of y, given P's coefficients in y."""
    c = np.asarray(c, dtype=np.longdouble)
    n = c.size
    out = np.zeros(n, dtype=np.longdouble)
    a = np.longdouble(a)
    for j in range(n):
        # c_j (y + a)^j
        for i in range(j + 1):
            out[i] += c[j] * math.comb(j, i) * a ** (j - i)
    return out


def _pair(a, b, mu) -> np.longdouble:
    prod = np.convolve(np.asarray(a, mu.dtype), np.asarray(b, mu.dtype))
    return prod @ mu[: prod.size]


def _dcentered(c) -> np.ndarray:
    # coefficients of Q + Q' (Q in the centred variable; d/dt = d/dx)
    out = np.array(c, dtype=np.longdouble)
    if out.size > 1:
        out[:-1] += np.arange(1, out.size) * out[1:]
    return out


@dataclass(frozen=True)
class OrthonormalBasis:
    N: int
    elements: tuple
    gram_residual: float
    # the same polynomials in powers of (x - 1/2), extended precision
    centered: tuple = field(repr=False, compare=False, default=())

    def __len__(self):
        return self.N

    @property
    def coefficient_matrix(self) -> np.ndarray:
        """N x N array, row k = monomial coefficients of P_k (zero padded)."""
        C = np.zeros((self.N, self.N))
        for k, e in enumerate(self.elements):
            C[k, : e.coeffs.size] = e.coeffs
        return C

    def values(self, x) -> np.ndarray:
        """Array of shape (N, len(x)) holding psi_k(x)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.stack([e(x) for e in self.elements])

    def derivative_values(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.stack([basis_derivative(e)(x) for e in self.elements])


def build_basis(N: int) -> OrthonormalBasis:
    """Orthonormalise ``{x^k e^x}_{k<N}`` in L2(0,1).

    Modified Gram-Schmidt with one re-orthogonalisation pass.  The sweep is
    carried out on coefficient vectors in powers of ``x - 1/2`` (same flag of
    subspaces, hence the same orthonormal family) with exact moment inner
    products.
    """
    if not isinstance(N, (int, np.integer)) or N < 1 or N > MAX_N:
        raise BasisError(f"N must be an integer in [1, {MAX_N}], got {N!r}")
    N = int(N)
    mu = centered_moments(2 * N, 2.0)
    work: list[np.ndarray] = []
    for k in range(N):
        v = np.zeros(k + 1, dtype=mu.dtype)
        v[k] = 1
        for _ in range(2):
            for q in work:
                v[: q.size] -= _pair(v, q, mu) * q
        work.append(v / np.sqrt(_pair(v, v, mu)))
    G = np.array([[_pair(a, b, mu) for b in work] for a in work], dtype=float)
    resid = float(np.max(np.abs(G - np.eye(N))))
    if resid > GRAM_TOL:
        raise BasisError(f"Gram residual {resid:.3e} exceeds {GRAM_TOL:g} (N={N})")
    elements = tuple(ExpPolynomial(_shift(w, -0.5).astype(float)) for w in work)
    for k, e in enumerate(elements):
        if e.degree != k:
            raise BasisError(f"element {k} has degree {e.degree}")
    return OrthonormalBasis(
        N=N, elements=elements, gram_residual=resid, centered=tuple(work)
    )


def _centered_of(b: OrthonormalBasis):
    if b.centered:
        return b.centered
    return tuple(_shift(e.coeffs, 0.5) for e in b.elements)


@dataclass(frozen=True)
class DerivativeMatrix:
    """``entries[m, k] = <psi_k', psi_m>``; unit upper triangular."""

    entries: np.ndarray
    inverse: np.ndarray
    det: float


def derivative_matrix(b: OrthonormalBasis, tol: float = 1e-8) -> DerivativeMatrix:
    N = b.N
    mu = centered_moments(2 * N + 1, 2.0)
    cen = _centered_of(b)
    A = np.empty((N, N))
    for m in range(N):
        for k in range(N):
            A[m, k] = float(_pair(_dcentered(cen[k]), cen[m], mu))
    diag_err = np.max(np.abs(np.diag(A) - 1.0))
    low = A[np.tril_indices(N, -1)]
    low_err = np.max(np.abs(low)) if low.size else 0.0
    if diag_err > tol or low_err > tol:
        raise BasisError(
            f"derivative matrix is not unit upper triangular "
            f"(diag err {diag_err:.2e}, lower err {low_err:.2e})"
        )
    # the zero pattern is exact in exact arithmetic; impose it
    U = np.triu(A)
    np.fill_diagonal(U, 1.0)
    inv = solve_triangular(U, np.eye(N), lower=False)
    det = float(np.prod(np.diag(A)))
    if abs(det - 1.0) > 1e-6:
        raise BasisError(f"det(M_N) = {det!r} differs from 1")
    if np.max(np.abs(A @ inv - np.eye(N))) > tol:
        raise BasisError("M_N inverse check failed")
    return DerivativeMatrix(entries=A, inverse=inv, det=det)


@dataclass(frozen=True)
class TripleTensor:
    """``values[m, j, k] = int_0^1 psi_j psi_k' psi_m dx``."""

    values: np.ndarray = field(repr=False)


def triple_tensor(b: OrthonormalBasis) -> TripleTensor:
    N = b.N
    mu = centered_moments(3 * N, 3.0)
    P = _centered_of(b)
    D = [_dcentered(c) for c in P]
    T = np.empty((N, N, N))
    for m in range(N):
        for j in range(N):
            pjm = np.convolve(P[j], P[m])
            for k in range(N):
                prod = np.convolve(pjm, D[k])
                T[m, j, k] = float(prod @ mu[: prod.size])
    return TripleTensor(values=T)


def project_function(samples, b: OrthonormalBasis) -> np.ndarray:
    """Coefficients ``<v, psi_k>`` of samples on a uniform grid of [0, 1].

    ``samples`` has the x0 grid on axis 0; any trailing axes are carried
    through, so the result has shape ``(N,) + samples.shape[1:]``.
    """
    s = np.asarray(samples, dtype=float)
    K = s.shape[0]
    if K < MIN_SAMPLES:
        raise BasisError(f"need at least {MIN_SAMPLES} samples, got {K}")
    x = np.linspace(0.0, 1.0, K)
    psi = b.values(x)  # (N, K)
    integrand = psi.reshape(psi.shape + (1,) * (s.ndim - 1)) * s[None, ...]
    return simpson(integrand, x=x, axis=1)


def evaluate_expansion(coeffs, x0, b: OrthonormalBasis | None = None):
    """``sum_k coeffs[k] psi_k(x0)``.

    ``coeffs`` may carry trailing spatial axes; ``x0`` may be scalar or 1-D.
    For 1-D ``x0`` the x0 axis is placed first in the output.
    """
    c = np.asarray(coeffs, dtype=float)
    if b is None:
        b = build_basis(c.shape[0])
    if c.shape[0] != b.N:
        raise BasisError(f"expected {b.N} coefficients, got {c.shape[0]}")
    scalar = np.ndim(x0) == 0
    psi = b.values(np.atleast_1d(x0))  # (N, X)
    out = np.tensordot(psi, c, axes=(0, 0))  # (X,) + trailing
    return out[0] if scalar else out
