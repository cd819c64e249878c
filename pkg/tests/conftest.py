"""Shared oracles and fixtures."""

import functools

import numpy as np
import pytest

from dnconvex.domain import GridSpec
from dnconvex.forward import CoefficientField, simulate, solve_elliptic

DEFAULT_INCLUSION = dict(center=(0.5, 0.2), radius=0.12, amplitude=-0.5)


def manufactured_error(grid: GridSpec, a0_fun=None) -> float:
    """Max error of the 5-point solve against u* = sin sin on the whole G box.

    The right-hand side ``-Delta u* - a0 u*`` is formed analytically, so the
    only error is the discretisation.
    """
    X1, X2 = grid.g_coords()
    x1a, x2a = X1[0, 0], X2[0, 0]
    L1, L2 = X1[-1, 0] - x1a, X2[0, -1] - x2a
    k1, k2 = np.pi / L1, np.pi / L2
    ustar = np.sin(k1 * (X1 - x1a)) * np.sin(k2 * (X2 - x2a))
    a0 = np.zeros_like(X1) if a0_fun is None else a0_fun(X1, X2)
    rhs = (k1**2 + k2**2) * ustar - a0 * ustar
    u = solve_elliptic(a0, rhs, grid.h, rtol=1e-12)
    return float(np.max(np.abs(u - ustar)))


def sigma_roundtrip_error(grid: GridSpec) -> float:
    """sigma -> a0 (exact formula) -> sigma through recover_sigma; max error."""
    from dnconvex.solver import recover_sigma

    X1, X2 = grid.omega_coords()
    H = grid.height
    c1, c2, r = 0.5, 0.5 * H, 0.3
    rr = ((X1 - c1) ** 2 + (X2 - c2) ** 2) / r**2
    # sqrt(sigma) = 1 + A (1 - rr)^4 inside rr < 1: C^3, equal to 1 near the border
    A = 0.3
    t = np.clip(1.0 - rr, 0.0, None)
    s = 1.0 + A * t**4
    # Laplacian of t^4 with t = 1 - rr, rr = |x - c|^2 / r^2 (2-D)
    # grad t = -2 (x - c) / r^2,  lap t = -4 / r^2
    # lap t^4 = 12 t^2 |grad t|^2 + 4 t^3 lap t
    g2 = 4.0 * rr / r**2
    lap = A * (12 * t**2 * g2 + 4 * t**3 * (-4.0 / r**2))
    a0 = lap / s
    sigma = recover_sigma(a0, grid, rtol=1e-13)
    return float(np.max(np.abs(sigma - s**2)))


def default_a0(grid: GridSpec) -> CoefficientField:
    return CoefficientField.from_truth(grid, 0.0, [DEFAULT_INCLUSION])


@functools.lru_cache(maxsize=4)
def _cached_stack(n1, n2, K, zero):
    g = GridSpec(n1=n1, n2=n2)
    a0 = CoefficientField.zero(g) if zero else default_a0(g)
    return simulate(a0, g, 0.25, K)


def field_stack(grid: GridSpec, K: int = 64, zero: bool = False) -> np.ndarray:
    return _cached_stack(grid.n1, grid.n2, K, zero).copy()


@pytest.fixture(scope="session")
def grid33():
    return GridSpec()


@pytest.fixture(scope="session")
def truth_stack(grid33):
    return field_stack(grid33)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
