"""
Grid geometry, level-set masks and Carleman weight functions.

The measurement domain is ``Omega = [0, 1] x [0, H]`` with data boundary
``Gamma`` on its bottom edge.  Omega sits inside a larger box ``G`` that
also holds the strip ``x2 = -1`` along which the source slides.  All grid
arrays use ``indexing="ij"``: axis 0 is x1, axis 1 is x2.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr

__all__ = [
    "DomainError",
    "GridSpec",
    "CWFSpec",
    "RegionMasks",
    "CWF_KINDS",
    "xi_elliptic",
    "xi_parabolic",
    "xi_hyperbolic",
    "xi_simple",
    "xi_field",
    "gamma_columns",
    "build_masks",
    "cwf_field",
    "carleman_probe",
]

SOURCE_X2 = -1.0
EXP_GUARD = 700.0
# probe bumps are fixed in physical units so refining the grid converges
# to a fixed family of test functions
PROBE_RADIUS = 0.1
PROBE_SPACING = 0.075
CWF_KINDS = ("elliptic", "parabolic", "hyperbolic", "planar_sq", "planar_exp", "radial")


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on Omega embedded in the enclosing box G.

    ``n1, n2`` are the point counts of Omega; the spacing is ``h = 1/(n1-1)``
    so Omega's height is ``(n2 - 1) h``.  G extends Omega by ``side``
    on the left and right, ``top`` above, and down to ``bottom`` (x2 value).
    """

    n1: int = 33
    n2: int = 33
    side: float = 0.5
    top: float = 0.5
    bottom: float = -1.5

    def __post_init__(self):
        if self.n1 < 5 or self.n2 < 5:
            raise DomainError("grid needs at least 5 points per axis")
        if self.side <= 0 or self.top <= 0:
            raise DomainError("G must strictly contain Omega (side, top > 0)")
        if self.bottom >= SOURCE_X2:
            raise DomainError("G must reach below the source line x2 = -1")

    @property
    def h(self) -> float:
        return 1.0 / (self.n1 - 1)

    @property
    def height(self) -> float:
        return (self.n2 - 1) * self.h

    @property
    def margins(self) -> tuple[int, int, int]:
        """Cell counts (side, top, bottom) of G around Omega."""
        h = self.h
        return (
            max(1, int(round(self.side / h))),
            max(1, int(round(self.top / h))),
            max(1, int(round(-self.bottom / h))),
        )

    @property
    def g_shape(self) -> tuple[int, int]:
        ms, mt, mb = self.margins
        return (self.n1 + 2 * ms, self.n2 + mt + mb)

    @property
    def omega_slice(self) -> tuple[slice, slice]:
        """Index of Omega's points inside a G array."""
        ms, _, mb = self.margins
        return (slice(ms, ms + self.n1), slice(mb, mb + self.n2))

    def omega_coords(self):
        x1 = np.linspace(0.0, 1.0, self.n1)
        x2 = np.arange(self.n2) * self.h
        return np.meshgrid(x1, x2, indexing="ij")

    def g_coords(self):
        ms, _, mb = self.margins
        n1g, n2g = self.g_shape
        x1 = (np.arange(n1g) - ms) * self.h
        x2 = (np.arange(n2g) - mb) * self.h
        return np.meshgrid(x1, x2, indexing="ij")

    def refine(self) -> "GridSpec":
        return replace(self, n1=2 * self.n1 - 1, n2=2 * self.n2 - 1)


@dataclass(frozen=True)
class CWFSpec:
    kind: str = "elliptic"
    omega_param: float = 2.0
    nu: float = 2.0
    lam: float = 2.0
    d: float = 2.0
    c: float = 1.0
    b1: float = 0.5
    rho_param: float = 0.5
    T: float = 1.0
    center: tuple = (0.5, -1.0)

    def __post_init__(self):
        if self.kind not in CWF_KINDS:
            raise DomainError(f"unknown CWF kind {self.kind!r}")
        if self.lam < 0:
            raise DomainError("lam must be >= 0")
        if self.nu <= 1:
            raise DomainError("nu must be > 1")
        if self.omega_param <= 1:
            raise DomainError("omega_param must be > 1")
        if self.c <= 0:
            raise DomainError("c must be > 0")
        if self.kind == "elliptic" and self.d <= 0:
            raise DomainError("d must be > 0 for the elliptic weight")

    def with_lam(self, lam: float) -> "CWFSpec":
        return replace(self, lam=lam)


def xi_elliptic(x1, x2, omega_param: float = 2.0, nu: float = 2.0):
    """``[x2 + (x1 - 1/2)^2 / omega^2 + 1/4]^(-nu)`` (2-D form)."""
    base = np.asarray(x2) + (np.asarray(x1) - 0.5) ** 2 / omega_param**2 + 0.25
    return base ** (-nu)


def xi_parabolic(x1, x2, t, omega_param: float, nu: float, T: float):
    base = (
        np.asarray(x2)
        + (np.asarray(x1) - 0.5) ** 2 / omega_param**2
        + (np.asarray(t) - T / 2) ** 2
        + 0.25
    )
    return base ** (-nu)


def xi_hyperbolic(x, t, rho_param: float, T: float):
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x**2, axis=-1) if x.ndim else x**2
    return r2 - rho_param**2 * (np.asarray(t) - T / 2) ** 2


def xi_simple(kind: str, coords, params: dict | None = None):
    """Exponent profiles of the simplified weights.

    ``planar_sq``: (x2 - B - b1)^2, ``planar_exp``: -x2, ``radial``: r.
    ``coords`` is ``(x1, x2)`` for the planar kinds and ``r`` for radial.
    """
    params = params or {}
    if kind == "planar_sq":
        _, x2 = coords
        return (np.asarray(x2) - params.get("B", 1.0) - params.get("b1", 0.5)) ** 2
    if kind == "planar_exp":
        _, x2 = coords
        return -np.asarray(x2, dtype=float)
    if kind == "radial":
        return np.asarray(coords, dtype=float)
    raise DomainError(f"xi_simple does not handle kind {kind!r}")


def xi_field(grid: GridSpec, spec: CWFSpec) -> np.ndarray:
    """xi sampled on the Omega grid."""
    X1, X2 = grid.omega_coords()
    if spec.kind == "elliptic":
        return xi_elliptic(X1, X2, spec.omega_param, spec.nu)
    if spec.kind in ("planar_sq", "planar_exp"):
        return xi_simple(spec.kind, (X1, X2), {"B": grid.height, "b1": spec.b1})
    if spec.kind == "radial":
        r = np.hypot(X1 - spec.center[0], X2 - spec.center[1])
        return xi_simple("radial", r)
    raise DomainError(f"{spec.kind} is formula-only; no 2-D stationary field")


@dataclass(frozen=True)
class RegionMasks:
    grid: GridSpec
    xi: np.ndarray = field(repr=False)
    omega_mask: np.ndarray = field(repr=False)
    gamma_mask: np.ndarray = field(repr=False)
    omega_d_mask: np.ndarray = field(repr=False)
    omega_dc_mask: np.ndarray = field(repr=False)
    gamma_d_mask: np.ndarray = field(repr=False)
    levelset_d_mask: np.ndarray = field(repr=False)
    m_value: float
    d: float
    c: float

    @property
    def gamma_columns(self) -> np.ndarray:
        """x1 indices of the Gamma points (bottom row)."""
        return np.flatnonzero(self.gamma_mask[:, 0])

    @property
    def interior_mask(self) -> np.ndarray:
        m = np.zeros_like(self.omega_mask)
        m[1:-1, 1:-1] = True
        return m

    def counts(self) -> dict:
        return {
            name: int(getattr(self, name).sum())
            for name in (
                "omega_mask",
                "gamma_mask",
                "omega_d_mask",
                "omega_dc_mask",
                "gamma_d_mask",
                "levelset_d_mask",
            )
        }


def gamma_columns(grid: GridSpec, omega_param: float = 2.0) -> np.ndarray:
    """x1 indices of the bottom-edge points with (x1 - 1/2)^2 / omega^2 < 1/4."""
    x1 = np.linspace(0.0, 1.0, grid.n1)
    return np.flatnonzero((x1 - 0.5) ** 2 / omega_param**2 < 0.25)


def build_masks(grid: GridSpec, spec: CWFSpec) -> RegionMasks:
    xi = xi_field(grid, spec)
    n1, n2 = xi.shape

    omega = np.zeros((n1, n2), dtype=bool)
    omega[1:-1, 1:-1] = True
    gamma = np.zeros((n1, n2), dtype=bool)
    gamma[gamma_columns(grid, spec.omega_param), 0] = True

    if spec.d >= xi[omega].max():
        raise DomainError(f"empty Omega_d: d = {spec.d} >= max xi over Omega")
    omega_d = omega & (xi > spec.d)
    omega_dc = omega & (xi > spec.d + spec.c)
    if not omega_dc.any():
        raise DomainError(f"empty Omega_(d+c) for d={spec.d}, c={spec.c}")
    gamma_d = gamma & (xi > spec.d)

    # one-cell band: points of closure(Omega_d) with a 4-neighbour outside it
    closed_d = omega_d | gamma_d
    outside = ~closed_d & (omega | gamma)
    nb = np.zeros_like(outside)
    nb[1:, :] |= outside[:-1, :]
    nb[:-1, :] |= outside[1:, :]
    nb[:, 1:] |= outside[:, :-1]
    nb[:, :-1] |= outside[:, 1:]
    band = omega_d & nb

    m_value = float(xi[closed_d].max())
    return RegionMasks(
        grid=grid,
        xi=xi,
        omega_mask=omega,
        gamma_mask=gamma,
        omega_d_mask=omega_d,
        omega_dc_mask=omega_dc,
        gamma_d_mask=gamma_d,
        levelset_d_mask=band,
        m_value=m_value,
        d=spec.d,
        c=spec.c,
    )


def cwf_field(masks: RegionMasks, spec: CWFSpec) -> np.ndarray:
    """phi_lambda^2 = exp(2 lambda xi) on the whole Omega grid."""
    if 2.0 * spec.lam * masks.m_value > EXP_GUARD:
        raise DomainError(
            f"exp overflow guard: 2*lam*m = {2 * spec.lam * masks.m_value:.1f} > {EXP_GUARD}"
        )
    return np.exp(2.0 * spec.lam * masks.xi)


def normalized_weight(masks: RegionMasks, spec: CWFSpec) -> np.ndarray:
    """``exp(-2 lam (d + c)) phi_lambda^2``, evaluated without forming phi^2."""
    cwf_field(masks, spec)  # guard
    return np.exp(2.0 * spec.lam * (masks.xi - spec.d - spec.c))


# ---------------------------------------------------------------------------
# Carleman estimate probe


def _bump_lattice(masks: RegionMasks, spacing: float, radius: float, clearance: int):
    """Centres of bumps whose support stays ``clearance`` cells inside Omega_d."""
    grid = masks.grid
    h = grid.h
    X1, X2 = grid.omega_coords()
    keep = masks.omega_d_mask.copy()
    for _ in range(clearance):
        k = keep.copy()
        k[1:, :] &= keep[:-1, :]
        k[:-1, :] &= keep[1:, :]
        k[:, 1:] &= keep[:, :-1]
        k[:, :-1] &= keep[:, 1:]
        k[0, :] = k[-1, :] = k[:, 0] = k[:, -1] = False
        keep = k
    c1 = np.arange(0.0, 1.0 + 1e-12, spacing)
    c2 = np.arange(0.0, grid.height + 1e-12, spacing)
    centres = []
    rr = int(np.ceil(radius / h))
    for a in c1:
        for b in c2:
            i, j = int(round(a / h)), int(round(b / h))
            lo1, hi1 = i - rr, i + rr + 1
            lo2, hi2 = j - rr, j + rr + 1
            if lo1 < 0 or lo2 < 0 or hi1 > grid.n1 or hi2 > grid.n2:
                continue
            sub = (X1[lo1:hi1, lo2:hi2] - a) ** 2 + (X2[lo1:hi1, lo2:hi2] - b) ** 2
            support = sub < radius**2
            if np.all(keep[lo1:hi1, lo2:hi2][support]):
                centres.append((a, b))
    return centres


def _laplacian_grid(f: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(f)
    out[1:-1, 1:-1] = (
        f[2:, 1:-1] + f[:-2, 1:-1] + f[1:-1, 2:] + f[1:-1, :-2] - 4 * f[1:-1, 1:-1]
    ) / h**2
    return out


def _grad_sq_grid(f: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(f)
    g1 = (f[2:, 1:-1] - f[:-2, 1:-1]) / (2 * h)
    g2 = (f[1:-1, 2:] - f[1:-1, :-2]) / (2 * h)
    out[1:-1, 1:-1] = g1**2 + g2**2
    return out


def carleman_probe(
    masks: RegionMasks,
    spec: CWFSpec,
    trials: int = 200,
    lam_list=(1.0, 2.0, 3.0),
    seed: int = 0,
    spacing: float | None = None,
    radius: float | None = None,
) -> dict:
    """Monte-Carlo look at the pointwise Carleman inequality.

    For random smooth ``h`` supported inside Omega_d (two cells clear of its
    boundary) computes

        ratio = int (Lap h)^2 phi^2 / (lam int |grad h|^2 phi^2 + lam^3 int h^2 phi^2)

    and reports min and median per lambda.  The same ``h`` draws are reused
    for every lambda so trends in lambda are paired.
    """
    if trials < 50:
        raise DomainError("carleman_probe needs trials >= 50")
    grid = masks.grid
    h = grid.h
    spacing = spacing or PROBE_SPACING
    radius = radius or PROBE_RADIUS
    centres = _bump_lattice(masks, spacing, radius, clearance=2)
    # a thin Omega_d gets a finer lattice, down to bumps three cells wide
    while not centres and radius * 0.75 >= 3 * h:
        radius, spacing = 0.75 * radius, 0.75 * spacing
        centres = _bump_lattice(masks, spacing, radius, clearance=2)
    if not centres:
        raise DomainError("Omega_d too small for the probe bump lattice")
    X1, X2 = grid.omega_coords()
    bumps = []
    for a, b in centres:
        r2 = ((X1 - a) ** 2 + (X2 - b) ** 2) / radius**2
        bumps.append(np.where(r2 < 1, (1 - r2) ** 3, 0.0))
    bumps = np.array(bumps)

    rng = np.random.default_rng(seed)
    fields = []
    while len(fields) < trials:
        coef = rng.standard_normal(len(centres)) * (rng.random(len(centres)) < 0.5)
        if not np.any(coef):
            continue
        fields.append(np.tensordot(coef, bumps, axes=1))

    report = []
    for lam in lam_list:
        w = np.exp(2 * lam * (masks.xi - masks.m_value))  # phi^2 up to a constant
        ratios = []
        for f in fields:
            num = np.sum(_laplacian_grid(f, h) ** 2 * w)
            den = lam * np.sum(_grad_sq_grid(f, h) * w) + lam**3 * np.sum(f**2 * w)
            ratios.append(num / den)
        ratios = np.array(ratios)
        report.append(
            {
                "lambda": float(lam),
                "min_ratio": float(ratios.min()),
                "median_ratio": float(np.median(ratios)),
                "trials": int(trials),
                "seed": int(seed),
            }
        )
    return {"per_lambda": report, "n_bumps": len(centres), "bump_radius": float(radius),
            "spearman": _spearman(report)}


def _spearman(report) -> float:
    if len(report) < 2:
        return float("nan")
    lam = [r["lambda"] for r in report]
    mins = [r["min_ratio"] for r in report]
    return float(spearmanr(lam, mins).statistic)
