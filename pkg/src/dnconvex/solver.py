"""
Weighted Tikhonov-type functional, its gradient, and the minimisation by
gradient projection onto a Sobolev ball.

The unknown ``W`` is an ``(N, n1, n2)`` array in the zero-Cauchy class on
Gamma (trace and one-sided normal derivative vanish there).  The class is
parametrised by its free entries: everything except rows 0 and 2 of the
Gamma columns, which are slaved to row 1.  Gradients are returned with
the slaved entries set to zero, so ``<grad, H>`` is the directional
derivative for any ``H`` in the class.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .basis import OrthonormalBasis, evaluate_expansion
from .domain import EXP_GUARD, GridSpec
from .forward import SolverError, solve_elliptic
from .operators import sobolev_matrix
from .system import (
    ExtensionField,
    QuasilinearSystem,
    _check_class,
    class_gradient,
    residual_adjoint,
    residual_from_total,
    to_class,
)

__all__ = [
    "DivergenceError",
    "ObjectiveSpec",
    "Objective",
    "IterState",
    "ConvexityReport",
    "sobolev_norm",
    "evaluate_J",
    "gradient_J",
    "project_ball",
    "gradient_projection",
    "convexity_probe",
    "lipschitz_probe",
    "estimate_lipschitz",
    "ClassMetric",
    "schedule_params",
    "reconstruct_a0",
    "a0_from_sigma",
    "recover_sigma",
    "holder_fit",
    "h1_error",
    "random_class_field",
    "gradient_check",
]

log = logging.getLogger(__name__)

DIVERGENCE_STREAK = 10


class DivergenceError(RuntimeError):
    pass


def _h_of(W) -> float:
    return 1.0 / (np.shape(W)[1] - 1)


def sobolev_norm(W, order: int = 2, h: float | None = None) -> float:
    """Discrete ``H^order(Omega)`` norm summed over components."""
    W = np.asarray(W, dtype=float)
    h = h or _h_of(W)
    n1, n2 = W.shape[1:]
    S = sobolev_matrix(n1, n2, h, order)
    Wf = W.reshape(W.shape[0], -1)
    return float(np.sqrt(max(0.0, np.sum(Wf * (S @ Wf.T).T))))


def project_ball(W, R: float, order: int = 2, h: float | None = None):
    """Radial projection onto ``{||W||_{H^s} <= R}`` (exact in the H^s metric)."""
    W = np.asarray(W, dtype=float)
    nrm = sobolev_norm(W, order, h)
    if nrm <= R:
        return W
    return W * (R / nrm)


@dataclass(frozen=True)
class ObjectiveSpec:
    lam: float = 2.0
    gamma: float = 0.1
    d: float = 2.0
    c: float = 1.0
    s_order: int = 2
    R: float = 100.0
    use_residual: bool = True
    weighted: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.R <= 0:
            raise ValueError("R must be > 0")
        if self.s_order not in (1, 2, 3):
            raise ValueError("s_order must be 1, 2 or 3")


class Objective:
    """``J(W) = e^{-2 lam (d+c)} h^2 sum_interior |L|^2 phi^2 + gamma ||W||^2_{H^s}``."""

    def __init__(self, spec: ObjectiveSpec, q: QuasilinearSystem, p):
        self.spec = spec
        self.q = q
        self.p = p.p if isinstance(p, ExtensionField) else np.asarray(p, dtype=float)
        g = q.grid
        self.h = g.h
        self.columns = q.columns
        if spec.weighted and spec.lam > 0:
            if q.masks is None:
                raise ValueError("weighted objective needs region masks")
            m = q.masks.m_value
            if 2.0 * spec.lam * m > EXP_GUARD:
                raise ValueError(f"exp overflow guard: 2*lam*m = {2 * spec.lam * m:.1f}")
            w = np.exp(2.0 * spec.lam * (q.masks.xi - spec.d - spec.c))
        else:
            w = np.ones((g.n1, g.n2))
        self.weight = g.h**2 * w[1:-1, 1:-1]
        self.S = sobolev_matrix(g.n1, g.n2, g.h, spec.s_order)

    # -- values ---------------------------------------------------------
    def residual_term(self, W) -> float:
        L = residual_from_total(self.q, W + self.p)
        return float(np.sum(self.weight[None] * L**2))

    def penalty(self, W) -> float:
        Wf = W.reshape(W.shape[0], -1)
        return float(np.sum(Wf * (self.S @ Wf.T).T))

    def value(self, W) -> float:
        W = np.asarray(W, dtype=float)
        out = self.spec.gamma * self.penalty(W) if self.spec.gamma else 0.0
        if self.spec.use_residual:
            out += self.residual_term(W)
        return out

    def raw_gradient(self, W) -> np.ndarray:
        """Gradient w.r.t. every entry of W, ignoring the class constraint."""
        W = np.asarray(W, dtype=float)
        G = np.zeros_like(W)
        if self.spec.use_residual:
            U = W + self.p
            L = residual_from_total(self.q, U)
            G += residual_adjoint(self.q, U, 2.0 * self.weight[None] * L)
        if self.spec.gamma:
            Wf = W.reshape(W.shape[0], -1)
            G += 2.0 * self.spec.gamma * np.asarray((self.S @ Wf.T).T).reshape(W.shape)
        return G

    def gradient(self, W) -> np.ndarray:
        return class_gradient(self.raw_gradient(W), self.columns)


def evaluate_J(spec: ObjectiveSpec, q: QuasilinearSystem, p, W, check_class: bool = True) -> float:
    W = np.asarray(W, dtype=float)
    if check_class:
        _check_class(W, q.columns, q.grid.h)
    return Objective(spec, q, p).value(W)


def gradient_J(spec: ObjectiveSpec, q: QuasilinearSystem, p, W) -> np.ndarray:
    return Objective(spec, q, p).gradient(np.asarray(W, dtype=float))


# ---------------------------------------------------------------------------
# class parametrisation and the Sobolev Riesz map


class ClassMetric:
    """Inner products on the zero-Cauchy class.

    ``E`` maps free entries of one component to the full grid; the Sobolev
    Gram matrix restricted to the class is ``E^T S E``.
    """

    def __init__(self, grid: GridSpec, columns, order: int):
        n1, n2 = grid.n1, grid.n2
        n = n1 * n2
        idx = np.arange(n).reshape(n1, n2)
        slave = np.zeros((n1, n2), dtype=bool)
        slave[columns, 0] = True
        slave[columns, 2] = True
        free = np.flatnonzero(~slave.ravel())
        pos = -np.ones(n, dtype=int)
        pos[free] = np.arange(free.size)
        rows = list(free)
        cols = list(range(free.size))
        vals = [1.0] * free.size
        # row 2 = 4 * row 1 on Gamma
        for c in np.atleast_1d(columns):
            rows.append(idx[c, 2])
            cols.append(pos[idx[c, 1]])
            vals.append(4.0)
        self.E = sp.csr_matrix((vals, (rows, cols)), shape=(n, free.size))
        self.free = free
        self.S = sobolev_matrix(n1, n2, grid.h, order)
        self.Sz = (self.E.T @ self.S @ self.E).tocsc()
        self._lu = splu(self.Sz)
        self.shape = (n1, n2)

    def riesz(self, G: np.ndarray) -> np.ndarray:
        """Sobolev representative of a class gradient (slaved entries of G are zero)."""
        N = G.shape[0]
        gz = G.reshape(N, -1)[:, self.free]
        yz = self._lu.solve(np.ascontiguousarray(gz.T))
        return np.asarray((self.E @ yz).T).reshape(G.shape)

    def norm(self, W: np.ndarray) -> float:
        Wf = W.reshape(W.shape[0], -1)
        return float(np.sqrt(max(0.0, np.sum(Wf * (self.S @ Wf.T).T))))


def estimate_lipschitz(obj: Objective, cm: ClassMetric, W, metric: str = "sobolev",
                      iters: int = 30, seed: int = 0) -> float:
    """Largest eigenvalue of the Hessian of J at W in the chosen metric.

    Power iteration with Hessian-vector products from gradient differences.
    """
    rng = np.random.default_rng(seed)
    g = obj.q.grid
    v = to_class(rng.standard_normal((obj.q.N, g.n1, g.n2)), obj.columns)

    def nrm(x):
        return cm.norm(x) if metric == "sobolev" else float(np.linalg.norm(x))

    v /= nrm(v)
    G0 = obj.gradient(W)
    lam = 0.0
    for _ in range(iters):
        eps = 1e-6 * max(1.0, nrm(W))
        Hv = (obj.gradient(W + eps * v) - G0) / eps
        Hv = cm.riesz(Hv) if metric == "sobolev" else Hv
        lam = nrm(Hv)
        if lam == 0.0:
            break
        v = to_class(Hv / lam, obj.columns)
    return float(lam)


@dataclass
class IterState:
    W: np.ndarray = field(repr=False)
    J_value: float
    grad_norm: float
    n: int
    projected: bool
    error: float | None = None


@dataclass
class IterResult:
    W: np.ndarray = field(repr=False)
    history: list
    converged: bool
    metric: str
    step: float = float("nan")

    @property
    def final(self) -> IterState:
        return self.history[-1]


def gradient_projection(spec: ObjectiveSpec, q: QuasilinearSystem, p, W0, step,
                        max_iter: int = 500, tol: float = 1e-8, metric: str = "sobolev",
                        error_fn=None, keep_iterates: bool = False) -> IterResult:
    """``W_n = P_B(W_{n-1} - step * J'(W_{n-1}))``.

    ``metric="sobolev"`` uses the H^s Riesz representative of the gradient,
    for which the radial ball projection is the metric projection.
    ``metric="euclidean"`` steps along the plain discrete gradient.
    ``grad_norm`` is the H^s norm of ``(W - W_next) / step``.
    ``step="auto"`` uses ``0.5 / L`` with L from ``estimate_lipschitz`` at W0.
    """
    obj = Objective(spec, q, p)
    cm = ClassMetric(q.grid, q.columns, spec.s_order)
    W = to_class(np.asarray(W0, dtype=float), q.columns)
    if cm.norm(W) > spec.R * (1 + 1e-12):
        raise ValueError("W0 must lie in the ball")
    if isinstance(step, str):
        if step != "auto":
            raise ValueError("step must be a positive number or 'auto'")
        step = 0.5 / estimate_lipschitz(obj, cm, W, metric)
        log.info("automatic step %.3e", step)
    if not step > 0:
        raise ValueError("step must be > 0")

    def direction(W):
        G = obj.gradient(W)
        return cm.riesz(G) if metric == "sobolev" else G

    def advance(W):
        trial = to_class(W - step * direction(W), q.columns)
        nrm = cm.norm(trial)
        if nrm > spec.R:
            return trial * (spec.R / nrm), True
        return trial, False

    J = obj.value(W)
    nxt, projected = advance(W)
    gnorm = cm.norm(W - nxt) / step
    err = error_fn(W) if error_fn else None
    history = [IterState(W.copy() if keep_iterates else None, J, gnorm, 0, False, err)]
    streak = 0
    converged = gnorm <= tol
    n = 0
    while not converged and n < max_iter:
        n += 1
        W = nxt
        Jn = obj.value(W)
        if not np.isfinite(Jn):
            raise DivergenceError("J became non-finite; decrease the step")
        streak = streak + 1 if Jn > J else 0
        if streak >= DIVERGENCE_STREAK:
            raise DivergenceError(
                f"J increased {DIVERGENCE_STREAK} times in a row at n={n}; decrease the step"
            )
        J = Jn
        was_projected = projected
        nxt, projected = advance(W)
        gnorm = cm.norm(W - nxt) / step
        err = error_fn(W) if error_fn else None
        history.append(IterState(W.copy() if keep_iterates else None, J, gnorm, n, was_projected, err))
        converged = gnorm <= tol
    return IterResult(W, history, converged, metric, float(step))


def gradient_check(spec: ObjectiveSpec, q: QuasilinearSystem, p, pairs: int = 5, seed: int = 0,
                   scale: float = 0.3) -> list:
    """Relative gap between ``<J'(W), H>`` and a central difference of J.

    Central differences balance truncation (eps^2) against rounding
    (macheps / eps), so eps = macheps^(1/3) relative to the size of W and H.
    """
    obj = Objective(spec, q, p)
    rng = np.random.default_rng(seed)
    g = q.grid
    out = []
    for _ in range(pairs):
        W = scale * random_class_field(rng, g, q.N, q.columns)
        H = random_class_field(rng, g, q.N, q.columns)
        lin = float(np.sum(obj.gradient(W) * H))
        eps = np.finfo(float).eps ** (1 / 3) * max(1.0, float(np.abs(W).max())) / float(np.abs(H).max())
        fd = (obj.value(W + eps * H) - obj.value(W - eps * H)) / (2 * eps)
        out.append({"directional": lin, "central_difference": float(fd), "eps": float(eps),
                    "rel_error": abs(lin - fd) / abs(lin)})
    return out


# ---------------------------------------------------------------------------
# probes


def random_class_field(rng, grid: GridSpec, N: int, columns, modes: int = 4) -> np.ndarray:
    """Smooth random field vanishing to second order at x2 = 0, put in the class."""
    X1, X2 = grid.omega_coords()
    H = grid.height
    W = np.zeros((N, grid.n1, grid.n2))
    for k in range(N):
        a = rng.standard_normal((modes, modes)) / (1.0 + np.add.outer(np.arange(modes), np.arange(modes))) ** 2
        f = np.zeros_like(X1)
        for i in range(modes):
            for j in range(modes):
                f += a[i, j] * np.cos(np.pi * i * X1) * np.cos(np.pi * j * X2 / H)
        W[k] = f * (X2 / H) ** 2
    return to_class(W, columns)


def _in_ball(rng, W, R, order, h):
    nrm = sobolev_norm(W, order, h)
    return W * (R * rng.uniform(0.05, 1.0) / nrm)


@dataclass
class ConvexityReport:
    margins: list
    raw_gaps: list
    fraction_nonneg: float
    lam: float
    gamma: float
    seed: int
    pairs: int

    def as_dict(self) -> dict:
        return {
            "lam": self.lam,
            "gamma": self.gamma,
            "seed": self.seed,
            "pairs": self.pairs,
            "fraction_nonneg": self.fraction_nonneg,
            "min_margin": float(np.min(self.margins)),
            "median_margin": float(np.median(self.margins)),
            "min_raw_gap": float(np.min(self.raw_gaps)),
        }


def convexity_probe(spec: ObjectiveSpec, q: QuasilinearSystem, p, pairs: int = 100,
                    seed: int = 0, centre=None) -> ConvexityReport:
    """Bregman margins ``J(W2) - J(W1) - <J'(W1), W2-W1> - (gamma/2)||W2-W1||^2``.

    Pairs are drawn in the ball, optionally around ``centre`` (e.g. a
    reference solution) so the sample covers the region of interest.
    """
    if pairs < 50:
        raise ValueError("convexity_probe needs pairs >= 50")
    obj = Objective(spec, q, p)
    rng = np.random.default_rng(seed)
    g = q.grid
    cols = q.columns
    h = g.h
    margins, gaps = [], []
    base = np.zeros((q.N, g.n1, g.n2)) if centre is None else np.asarray(centre, dtype=float)
    room = spec.R - sobolev_norm(base, spec.s_order, h)
    if room <= 0:
        raise ValueError("centre lies outside the ball")
    for _ in range(pairs):
        W1 = base + _in_ball(rng, random_class_field(rng, g, q.N, cols), room, spec.s_order, h)
        W2 = base + _in_ball(rng, random_class_field(rng, g, q.N, cols), room, spec.s_order, h)
        D = W2 - W1
        gap = obj.value(W2) - obj.value(W1) - float(np.sum(obj.gradient(W1) * D))
        gaps.append(gap)
        margins.append(gap - 0.5 * spec.gamma * sobolev_norm(D, spec.s_order, h) ** 2)
    margins = np.asarray(margins)
    # rounding floor relative to the size of the terms involved
    frac = float(np.mean(margins >= -1e-10 * max(1.0, np.max(np.abs(gaps)))))
    return ConvexityReport(margins.tolist(), gaps, frac, spec.lam, spec.gamma, seed, pairs)


def lipschitz_probe(spec: ObjectiveSpec, q: QuasilinearSystem, p, trials: int = 50,
                    seed: int = 0) -> dict:
    """Max of ``||J'(W1) - J'(W2)|| / ||W1 - W2||`` in the H^s metric over random pairs."""
    if trials < 50:
        raise ValueError("lipschitz_probe needs trials >= 50")
    obj = Objective(spec, q, p)
    cm = ClassMetric(q.grid, q.columns, spec.s_order)
    rng = np.random.default_rng(seed)
    g = q.grid
    ratios = []
    for _ in range(trials):
        W1 = _in_ball(rng, random_class_field(rng, g, q.N, q.columns), spec.R, spec.s_order, g.h)
        W2 = _in_ball(rng, random_class_field(rng, g, q.N, q.columns), spec.R, spec.s_order, g.h)
        dG = cm.riesz(obj.gradient(W1) - obj.gradient(W2))
        ratios.append(cm.norm(dG) / cm.norm(W1 - W2))
    ratios = np.asarray(ratios)
    return {"max_ratio": float(ratios.max()), "median_ratio": float(np.median(ratios)),
            "trials": trials, "seed": seed, "lam": spec.lam}


# ---------------------------------------------------------------------------
# parameters and reconstruction


def schedule_params(noise_level: float, m: float, c: float, clamp: bool = False) -> dict:
    """``theta = c/(8m)``, ``lam = (2 theta / c) ln(1/sigma)``, ``gamma = e^{-lam c}``."""
    if not 0.0 < noise_level < 1.0:
        raise ValueError("noise_level must lie in (0, 1)")
    if m <= 0 or c <= 0:
        raise ValueError("m and c must be positive")
    theta = c / (8.0 * m)
    lam = (2.0 * theta / c) * np.log(1.0 / noise_level)
    gamma = noise_level ** (2.0 * theta)
    clamped = False
    if clamp and not 1.0 <= lam <= 3.0:
        lam = float(np.clip(lam, 1.0, 3.0))
        gamma = float(np.exp(-lam * c))
        clamped = True
    return {"lam": float(lam), "gamma": float(gamma), "theta": float(theta), "clamped": clamped}


def _lap_and_grad_sq(v: np.ndarray, h: float):
    """5-point Laplacian and centred |grad|^2 at interior points (leading axes kept)."""
    lap = (v[..., 2:, 1:-1] + v[..., :-2, 1:-1] + v[..., 1:-1, 2:] + v[..., 1:-1, :-2]
           - 4.0 * v[..., 1:-1, 1:-1]) / h**2
    g1 = (v[..., 2:, 1:-1] - v[..., :-2, 1:-1]) / (2 * h)
    g2 = (v[..., 1:-1, 2:] - v[..., 1:-1, :-2]) / (2 * h)
    return lap, g1**2 + g2**2


def reconstruct_a0(V, basis: OrthonormalBasis, x0_samples, h: float | None = None,
                   return_spread: bool = False):
    """``a0 = -mean_x0 (Delta v + |grad v|^2)`` at interior points; zero on the border."""
    V = np.asarray(V, dtype=float)
    h = h or _h_of(V)
    v = evaluate_expansion(V, np.asarray(x0_samples, dtype=float), basis)  # (K, n1, n2)
    lap, gsq = _lap_and_grad_sq(v, h)
    per = -(lap + gsq)
    a0 = np.zeros(V.shape[1:])
    a0[1:-1, 1:-1] = per.mean(axis=0)
    if return_spread:
        spread = np.zeros(V.shape[1:])
        spread[1:-1, 1:-1] = per.std(axis=0)
        return a0, spread
    return a0


def a0_from_sigma(sigma: np.ndarray, h: float) -> np.ndarray:
    """``Delta sqrt(sigma) / sqrt(sigma)`` at interior points; zero on the border."""
    r = np.sqrt(np.asarray(sigma, dtype=float))
    out = np.zeros_like(r)
    lap, _ = _lap_and_grad_sq(r, h)
    out[1:-1, 1:-1] = lap / r[1:-1, 1:-1]
    return out


def recover_sigma(a0: np.ndarray, grid: GridSpec | None = None, rtol: float = 1e-12) -> np.ndarray:
    """Solve ``Delta w - a0 w = 0`` in Omega, ``w = 1`` on the border; return ``w^2``."""
    a0 = np.asarray(a0, dtype=float)
    h = grid.h if grid is not None else _h_of(a0[None])
    w = solve_elliptic(-a0, np.zeros_like(a0), h, boundary=np.ones_like(a0), rtol=rtol)
    if np.any(w <= 0):
        raise SolverError("w <= 0: a0 is inconsistent with a positive conductivity")
    return w**2


def holder_fit(noise_levels, errors, c: float | None = None, m: float | None = None) -> dict:
    """Least-squares slope of log(error) against log(level)."""
    x = np.asarray(noise_levels, dtype=float)
    y = np.asarray(errors, dtype=float)
    if x.size < 3 or x.size != y.size:
        raise ValueError("need at least 3 (level, error) pairs")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("levels and errors must be positive")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    out = {"slope": float(slope), "intercept": float(intercept)}
    if c is not None and m is not None:
        out["rho_theory"] = float(c / (m + c))
    return out


def h1_error(W, W_ref, mask: np.ndarray, h: float | None = None) -> float:
    """``||W - W_ref||_{H^1}`` over the grid points of ``mask`` (interior only)."""
    E = np.asarray(W, dtype=float) - np.asarray(W_ref, dtype=float)
    h = h or _h_of(E)
    m = np.asarray(mask)[1:-1, 1:-1]
    e = E[:, 1:-1, 1:-1]
    g1 = (E[:, 2:, 1:-1] - E[:, :-2, 1:-1]) / (2 * h)
    g2 = (E[:, 1:-1, 2:] - E[:, 1:-1, :-2]) / (2 * h)
    tot = (e**2 + g1**2 + g2**2)[:, m].sum()
    return float(np.sqrt(h**2 * tot))
