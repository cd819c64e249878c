import math

import numpy as np
import pytest
from conftest import sigma_roundtrip_error
from hypothesis import given, settings, strategies as st

from dnconvex.basis import build_basis, derivative_matrix, project_function, triple_tensor
from dnconvex.domain import CWFSpec, GridSpec, build_masks
from dnconvex.forward import x0_grid
from dnconvex.solver import (
    ClassMetric,
    DivergenceError,
    ObjectiveSpec,
    convexity_probe,
    evaluate_J,
    gradient_J,
    gradient_check,
    gradient_projection,
    h1_error,
    holder_fit,
    lipschitz_probe,
    project_ball,
    random_class_field,
    reconstruct_a0,
    recover_sigma,
    schedule_params,
    sobolev_norm,
)
from dnconvex.system import build_system, class_gradient, class_violation, extension_from_field, to_class

# -- independent loop oracles ----------------------------------------------------


def _d1_loop(f, h, axis):
    """One derivative along axis: centred inside, second-order one-sided at the ends."""
    f = np.moveaxis(f, axis, 0)
    n = f.shape[0]
    out = np.empty_like(f)
    for i in range(n):
        if i == 0:
            out[i] = (-1.5 * f[0] + 2 * f[1] - 0.5 * f[2]) / h
        elif i == n - 1:
            out[i] = (0.5 * f[n - 3] - 2 * f[n - 2] + 1.5 * f[n - 1]) / h
        else:
            out[i] = (f[i + 1] - f[i - 1]) / (2 * h)
    return np.moveaxis(out, 0, axis)


def _d2_loop(f, h, axis):
    f = np.moveaxis(f, axis, 0)
    n = f.shape[0]
    out = np.empty_like(f)
    for i in range(n):
        if i == 0:
            out[i] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h**2
        elif i == n - 1:
            out[i] = (-f[n - 4] + 4 * f[n - 3] - 5 * f[n - 2] + 2 * f[n - 1]) / h**2
        else:
            out[i] = (f[i + 1] - 2 * f[i] + f[i - 1]) / h**2
    return np.moveaxis(out, 0, axis)


def _deriv_loop(f, h, order, axis):
    if order == 0:
        return f
    if order == 1:
        return _d1_loop(f, h, axis)
    if order == 2:
        return _d2_loop(f, h, axis)
    return _d1_loop(_d2_loop(f, h, axis), h, axis)


def sobolev_oracle(W, order, h):
    total = 0.0
    for comp in W:
        for k in range(order + 1):
            for a in range(k + 1):
                D = _deriv_loop(_deriv_loop(comp, h, a, 0), h, k - a, 1)
                for val in D.ravel():
                    total += h * h * val * val
    return math.sqrt(total)


def gaussian_field(n, N=1):
    x = np.linspace(0, 1, n)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    return np.stack([np.exp(-((X1 - 0.4) ** 2 + (X2 - 0.6) ** 2) / 0.05) * (k + 1) for k in range(N)])


# -- Sobolev norm -----------------------------------------------------------------


def test_sobolev_norm_zero():
    assert sobolev_norm(np.zeros((2, 9, 9)), 2) == 0.0


@pytest.mark.parametrize("order", [1, 2, 3])
def test_sobolev_norm_matches_loop_summation(order):
    W = gaussian_field(17, 2)
    h = 1 / 16
    assert sobolev_norm(W, order) == pytest.approx(sobolev_oracle(W, order, h), rel=1e-10)


@given(st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_sobolev_norm_monotone_in_order(seed):
    W = np.random.default_rng(seed).standard_normal((2, 9, 9))
    n1, n2, n3 = (sobolev_norm(W, k) for k in (1, 2, 3))
    assert n1 <= n2 <= n3


def test_sobolev_norm_order_validated():
    with pytest.raises(ValueError):
        sobolev_norm(np.zeros((1, 9, 9)), 4)


# -- ball projection --------------------------------------------------------------


def test_project_ball():
    W = gaussian_field(17)
    nrm = sobolev_norm(W, 2)
    assert project_ball(W, 2 * nrm) is not None
    np.testing.assert_array_equal(project_ball(W, 2 * nrm), W)
    P = project_ball(W, nrm / 2)
    assert sobolev_norm(P, 2) == pytest.approx(nrm / 2, rel=1e-12)
    np.testing.assert_allclose(P, W / 2, rtol=1e-12)
    np.testing.assert_array_equal(project_ball(P, nrm / 2), P)


def test_project_ball_preserves_class():
    cols = np.arange(17)
    W = to_class(np.random.default_rng(0).standard_normal((2, 17, 17)), cols)
    assert class_violation(project_ball(W, 1e-3), cols) < 1e-15


# -- objective ------------------------------------------------------------------------


def _problem(n=17, N=3, form="inverse", d=1.0, c=0.5, nu=2.0, seed=0, p_scale=0.2):
    g = GridSpec(n1=n, n2=n)
    masks = build_masks(g, CWFSpec(d=d, c=c, nu=nu))
    q = build_system(build_basis(N), g, masks, form)
    rng = np.random.default_rng(seed)
    V = p_scale * random_class_field(rng, g, N, np.array([], dtype=int))
    V += p_scale * np.sin(np.pi * g.omega_coords()[0])[None]
    p = extension_from_field(V, g, q.columns, cutoff_depth=0.5)
    return g, q, p


def test_J_zero_when_residual_and_penalty_vanish():
    g, q, _ = _problem()
    z = np.zeros((3, g.n1, g.n2))
    spec = ObjectiveSpec(lam=2.0, gamma=0.0, d=1.0, c=0.5)
    assert evaluate_J(spec, q, z, z) == 0.0
    np.testing.assert_array_equal(gradient_J(spec, q, z, z), 0.0)


@given(st.integers(0, 500), st.floats(0.0, 1.0))
@settings(max_examples=15, deadline=None)
def test_J_at_least_penalty(seed, gamma):
    g, q, p = _problem()
    W = 0.1 * random_class_field(np.random.default_rng(seed), g, 3, q.columns)
    spec = ObjectiveSpec(lam=1.0, gamma=gamma, d=1.0, c=0.5)
    assert evaluate_J(spec, q, p, W) >= gamma * sobolev_norm(W, 2) ** 2 * (1 - 1e-12)


def test_J_brute_force_5x5():
    # N = 1, lam = 0, gamma = 1, hand summation over the 3 x 3 interior
    g = GridSpec(n1=5, n2=5)
    b = build_basis(1)
    q = build_system(b, g)
    h = g.h
    rng = np.random.default_rng(4)
    W = to_class(rng.standard_normal((1, 5, 5)), q.columns)
    p = rng.standard_normal((1, 5, 5))
    U = (W + p)[0]
    C = -2.0 * derivative_matrix(b).inverse[0, 0] * triple_tensor(b).values[0, 0, 0]
    res = 0.0
    for i in range(1, 4):
        for j in range(1, 4):
            lap = (U[i + 1, j] + U[i - 1, j] + U[i, j + 1] + U[i, j - 1] - 4 * U[i, j]) / h**2
            gx = (U[i + 1, j] - U[i - 1, j]) / (2 * h)
            gy = (U[i, j + 1] - U[i, j - 1]) / (2 * h)
            L = lap - C * (gx * gx + gy * gy)
            res += h * h * L * L
    expected = res + sobolev_oracle(W, 2, h) ** 2
    spec = ObjectiveSpec(lam=0.0, gamma=1.0, d=1.0, c=0.5)
    assert evaluate_J(spec, q, p, W) == pytest.approx(expected, rel=1e-12)


def _fd_check(spec, q, p, W, H):
    G = gradient_J(spec, q, p, W)
    lin = float(np.sum(G * H))
    eps = 6e-6 * max(1.0, float(np.abs(W).max())) / float(np.abs(H).max())
    fd = (evaluate_J(spec, q, p, W + eps * H) - evaluate_J(spec, q, p, W - eps * H)) / (2 * eps)
    return abs(lin - fd) / abs(lin)


@pytest.mark.parametrize("form", ["inverse", "premultiplied"])
def test_gradient_matches_central_differences(form):
    g, q, p = _problem(form=form)
    rng = np.random.default_rng(0)
    spec = ObjectiveSpec(lam=2.0, gamma=0.1, d=1.0, c=0.5)
    for _ in range(5):
        W = 0.3 * random_class_field(rng, g, 3, q.columns)
        H = random_class_field(rng, g, 3, q.columns)
        assert _fd_check(spec, q, p, W, H) <= 1e-6


@pytest.mark.parametrize("form", ["inverse", "premultiplied"])
def test_gradient_check_routine(form):
    g, q, p = _problem(form=form)
    out = gradient_check(ObjectiveSpec(lam=2.0, gamma=0.1, d=1.0, c=0.5), q, p, pairs=5, seed=0)
    assert len(out) == 5
    assert max(r["rel_error"] for r in out) <= 1e-6


def test_gradient_has_zero_on_slaved_entries():
    g, q, p = _problem()
    W = 0.1 * random_class_field(np.random.default_rng(1), g, 3, q.columns)
    G = gradient_J(ObjectiveSpec(d=1.0, c=0.5), q, p, W)
    assert np.all(G[:, q.columns, 0] == 0) and np.all(G[:, q.columns, 2] == 0)


def test_gamma_term_isolation():
    g, q, p = _problem()
    W = random_class_field(np.random.default_rng(2), g, 3, q.columns)
    spec = ObjectiveSpec(lam=2.0, gamma=0.3, d=1.0, c=0.5, use_residual=False)
    from dnconvex.operators import sobolev_matrix

    S = sobolev_matrix(g.n1, g.n2, g.h, 2)
    ref = 2 * 0.3 * (S @ W.reshape(3, -1).T).T.reshape(W.shape)
    np.testing.assert_allclose(gradient_J(spec, q, p, W), class_gradient(ref, q.columns), rtol=1e-12, atol=1e-14)


def test_objective_spec_validation():
    for kw in (dict(lam=-1), dict(gamma=-0.1), dict(R=0), dict(s_order=4)):
        with pytest.raises(ValueError):
            ObjectiveSpec(**kw)


def test_class_violation_rejected():
    g, q, p = _problem()
    with pytest.raises(ValueError):
        evaluate_J(ObjectiveSpec(d=1.0, c=0.5), q, p, np.ones((3, g.n1, g.n2)))


# -- gradient projection ----------------------------------------------------------------


def test_fixed_point_terminates_immediately():
    g, q, p = _problem()
    spec = ObjectiveSpec(gamma=0.5, d=1.0, c=0.5, use_residual=False)
    W0 = np.zeros((3, g.n1, g.n2))
    res = gradient_projection(spec, q, p, W0, step=0.1, tol=1e-8)
    assert res.converged and len(res.history) == 1
    np.testing.assert_array_equal(res.W, W0)


def test_penalty_only_contracts_at_known_rate():
    # Sobolev-metric step on gamma ||W||^2: W_n = (1 - 2 gamma step)^n W_0
    g, q, p = _problem()
    gamma, step = 1.0, 0.1
    spec = ObjectiveSpec(lam=0.0, gamma=gamma, d=1.0, c=0.5, use_residual=False)
    W0 = random_class_field(np.random.default_rng(3), g, 3, q.columns)
    W0 = W0 / sobolev_norm(W0)
    res = gradient_projection(spec, q, p, W0, step=step, max_iter=30, tol=0.0,
                              error_fn=lambda W: sobolev_norm(W))
    errs = np.array([s.error for s in res.history])
    qfit = np.exp(np.polyfit(np.arange(errs.size), np.log(errs), 1)[0])
    assert 0 < qfit < 1
    assert qfit == pytest.approx(1 - 2 * gamma * step, rel=1e-8)


def test_linear_convergence_on_gamma_dominated_instance():
    g, q, p = _problem(p_scale=0.05)
    spec = ObjectiveSpec(lam=0.0, gamma=1.0, d=1.0, c=0.5, weighted=False)
    W0 = np.zeros((3, g.n1, g.n2))
    ref = gradient_projection(spec, q, p, W0, step="auto", max_iter=400, tol=1e-13)
    run = gradient_projection(spec, q, p, W0, step=ref.step, max_iter=40, tol=0.0,
                              error_fn=lambda W: sobolev_norm(W - ref.W))
    e = np.array([s.error for s in run.history])[5:]
    rate = np.exp(np.polyfit(np.arange(e.size), np.log(e), 1)[0])
    assert 0 < rate < 1
    assert np.all(np.diff(np.log(e)) < 0)


def test_descent_and_ball_feasibility():
    g, q, p = _problem(form="premultiplied")
    spec = ObjectiveSpec(lam=2.0, gamma=0.1, d=1.0, c=0.5, R=0.5)
    W0 = np.zeros((3, g.n1, g.n2))
    res = gradient_projection(spec, q, p, W0, step="auto", max_iter=60, tol=0.0, keep_iterates=True)
    J = np.array([s.J_value for s in res.history])
    assert np.all(np.diff(J) <= 1e-12 * J[0])
    for s in res.history:
        assert sobolev_norm(s.W, 2) <= spec.R + 1e-12
        assert class_violation(s.W, q.columns) < 1e-12


def test_divergence_guard():
    # step beyond 1/gamma: W_n = (1 - 2 gamma step)^n W_0 grows 19x per step
    g, q, p = _problem()
    spec = ObjectiveSpec(gamma=1.0, d=1.0, c=0.5, R=1e30, use_residual=False)
    W0 = random_class_field(np.random.default_rng(0), g, 3, q.columns)
    with pytest.raises(DivergenceError, match="decrease the step"):
        gradient_projection(spec, q, p, W0 / sobolev_norm(W0), step=10.0, max_iter=200)


def test_start_outside_ball_rejected():
    g, q, p = _problem()
    spec = ObjectiveSpec(d=1.0, c=0.5, R=1e-3)
    W0 = random_class_field(np.random.default_rng(0), g, 3, q.columns)
    with pytest.raises(ValueError):
        gradient_projection(spec, q, p, W0, step=0.1)


# -- probes -----------------------------------------------------------------------------


def test_convexity_pure_penalty_margin_exact():
    g, q, p = _problem()
    spec = ObjectiveSpec(gamma=0.2, d=1.0, c=0.5, use_residual=False, R=1.0)
    rep = convexity_probe(spec, q, p, pairs=50, seed=1)
    gaps = np.array(rep.raw_gaps)
    np.testing.assert_allclose(rep.margins, 0.5 * gaps, rtol=1e-9)
    assert rep.fraction_nonneg == 1.0


def test_convexity_probe_deterministic_and_validated():
    g, q, p = _problem()
    spec = ObjectiveSpec(lam=1.0, gamma=0.1, d=1.0, c=0.5, R=0.5)
    a = convexity_probe(spec, q, p, pairs=50, seed=7).as_dict()
    b = convexity_probe(spec, q, p, pairs=50, seed=7).as_dict()
    assert a == b
    with pytest.raises(ValueError):
        convexity_probe(spec, q, p, pairs=10)


def test_lipschitz_pure_penalty_is_two_gamma():
    g, q, p = _problem()
    spec = ObjectiveSpec(gamma=0.3, d=1.0, c=0.5, use_residual=False, R=1.0)
    out = lipschitz_probe(spec, q, p, trials=50, seed=0)
    assert out["max_ratio"] == pytest.approx(0.6, rel=1e-8)
    assert out["median_ratio"] == pytest.approx(0.6, rel=1e-8)


def test_lipschitz_grows_with_lambda():
    g, q, p = _problem()
    ratios = []
    for lam in (1.0, 2.0, 3.0):
        spec = ObjectiveSpec(lam=lam, gamma=0.1, d=1.0, c=0.5, R=0.5)
        ratios.append(lipschitz_probe(spec, q, p, trials=50, seed=0)["max_ratio"])
    assert np.all(np.isfinite(ratios))
    assert ratios[0] < ratios[1] < ratios[2]


# -- schedule -------------------------------------------------------------------------------


def test_schedule_examples():
    s = schedule_params(0.01, m=2.0, c=1.0)
    assert s["theta"] == 0.0625
    assert s["lam"] == pytest.approx(0.125 * np.log(100), rel=1e-14)
    assert s["lam"] == pytest.approx(0.5756, abs=5e-5)
    assert s["gamma"] == pytest.approx(0.5623, abs=5e-5)
    assert not s["clamped"]


@given(st.floats(1e-6, 0.999), st.floats(0.05, 50), st.floats(0.05, 10), st.booleans())
@settings(max_examples=100, deadline=None)
def test_schedule_identities(sigma, m, c, clamp):
    s = schedule_params(sigma, m, c, clamp)
    assert s["theta"] == c / (8 * m)
    assert s["gamma"] == pytest.approx(np.exp(-s["lam"] * c), rel=1e-12, abs=1e-300)
    if clamp:
        assert 1.0 <= s["lam"] <= 3.0


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 2.0])
def test_schedule_rejects_noise_outside_unit_interval(bad):
    with pytest.raises(ValueError):
        schedule_params(bad, 1.0, 1.0)


# -- reconstruction -----------------------------------------------------------------------------


def test_reconstruct_a0_constant_in_x():
    b = build_basis(4)
    V = np.ones((4, 9, 9)) * np.arange(1, 5)[:, None, None]
    a0 = reconstruct_a0(V, b, x0_grid(32))
    np.testing.assert_allclose(a0, 0.0, atol=1e-10)


def test_reconstruct_a0_linear_profile():
    # v = -x2 * f(x0) where f is the projection of 1 on the basis;
    # then Delta v = 0 and |grad v|^2 = f^2, so a0 = -mean(f^2) ~ -1
    N = 6
    b = build_basis(N)
    xs = x0_grid(64)
    xf = np.linspace(0, 1, 2049)
    c = project_function(np.ones_like(xf), b)
    n = 17
    x2 = np.linspace(0, 1, n)
    V = -c[:, None, None] * np.ones((n, 1)) * x2[None, None, :]
    a0 = reconstruct_a0(V, b, xs)
    f = c @ b.values(xs)
    inner = a0[1:-1, 1:-1]
    np.testing.assert_allclose(inner, -np.mean(f**2), rtol=1e-10)
    assert np.abs(inner + 1).max() < 1e-3
    assert np.all(a0[0] == 0) and np.all(a0[:, -1] == 0)


def test_recover_sigma_trivial():
    g = GridSpec(n1=17, n2=17)
    np.testing.assert_allclose(recover_sigma(np.zeros((17, 17)), g), 1.0, atol=1e-12)


def test_recover_sigma_roundtrip_second_order():
    g = GridSpec()
    e1 = sigma_roundtrip_error(g)
    e2 = sigma_roundtrip_error(g.refine())
    assert 3.4 <= e1 / e2 <= 4.6


@given(st.floats(0.0, 3.0), st.floats(0.05, 0.3))
@settings(max_examples=15, deadline=None)
def test_recover_sigma_floor_for_nonpositive_a0(amp, r):
    g = GridSpec(n1=17, n2=17)
    X1, X2 = g.omega_coords()
    a0 = -amp * np.exp(-((X1 - 0.5) ** 2 + (X2 - 0.5) ** 2) / r**2)
    sigma = recover_sigma(a0, g)
    # Delta w = a0 w <= 0 with w = 1 on the border: w >= 1 by the maximum principle
    assert sigma.min() >= 1 - 1e-10


# -- fits and errors -----------------------------------------------------------------------------


def test_holder_fit_examples():
    lv = [1e-3, 1e-2, 1e-1]
    out = holder_fit(lv, [x**0.5 for x in lv], c=1.0, m=3.0)
    assert out["slope"] == pytest.approx(0.5, abs=1e-10)
    assert out["rho_theory"] == 0.25
    assert holder_fit(lv, [2.0, 2.0, 2.0])["slope"] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        holder_fit(lv, [1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        holder_fit(lv[:2], [1.0, 1.0])


def test_h1_error_zero_and_scaling():
    n = 17
    W = gaussian_field(n, 2)
    mask = np.ones((n, n), bool)
    assert h1_error(W, W, mask) == 0
    assert h1_error(3 * W, 0 * W, mask) == pytest.approx(3 * h1_error(W, 0 * W, mask), rel=1e-12)


def test_class_metric_riesz_inverse_of_gram():
    g = GridSpec(n1=13, n2=13)
    cols = np.arange(13)
    cm = ClassMetric(g, cols, 2)
    rng = np.random.default_rng(0)
    Y = to_class(rng.standard_normal((2, 13, 13)), cols)
    from dnconvex.operators import sobolev_matrix

    S = sobolev_matrix(13, 13, g.h, 2)
    G = class_gradient((S @ Y.reshape(2, -1).T).T.reshape(Y.shape), cols)
    np.testing.assert_allclose(cm.riesz(G), Y, rtol=1e-8, atol=1e-10)
