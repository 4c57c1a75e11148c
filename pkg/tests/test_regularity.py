import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import systems
from lypmfd.perron import solve_fixed_point
from lypmfd.regularity import (
    LinearizedTrajectory,
    apply_T1,
    check_dphi_continuity,
    check_phi_pair_bound,
    continuity_constant,
    initial_linearized,
    solve_T1,
)
from lypmfd.trajectory import TimeGrid, Trajectory, matrix_exp, sigma_norm, sigma_weights


def _solve(case, y0, **kw):
    return solve_fixed_point(np.atleast_1d(y0), case.spec, case.tc, case.sigma, case.cfg, delta=case.delta, **kw)


def _t1(case, y0, res=None):
    res = res or _solve(case, y0)
    return solve_T1(np.atleast_1d(y0), res.phi, case.spec, case.tc, case.sigma, case.cfg, delta=case.delta)


def test_linearized_shape_check():
    g = TimeGrid(1.0, 4)
    with pytest.raises(ValueError):
        LinearizedTrajectory(g, np.zeros((5, 3, 2)), (1, 1, 1))


def test_zero_derivatives_give_linear_flow():
    case = systems.zero(1, 2, 1, B=[[0.0, 1.0], [-1.0, 0.0]])
    g = TimeGrid(8.0, 160)
    phi = Trajectory(g, np.zeros((161, 4)), case.spec.dims)
    rng = np.random.default_rng(0)
    D = LinearizedTrajectory(g, rng.normal(size=(161, 4, 2)), case.spec.dims)
    out = apply_T1(D, phi, case.spec, case.tc, case.sigma)
    for i in (0, 80, 160):
        np.testing.assert_allclose(out.values[i, 1:3], matrix_exp(case.spec.B, g.nodes[i]), atol=1e-12)
        assert np.all(out.values[i, [0, 3]] == 0)


def test_x_block_for_quadratic(quadratic):
    y0 = 0.3
    res = _solve(quadratic, y0)
    g = res.phi.grid
    vals = np.zeros((g.n_steps + 1, 2, 1))
    vals[:, 1, 0] = 1.0
    out = apply_T1(LinearizedTrajectory(g, vals, (1, 1, 0)), res.phi, quadratic.spec, quadratic.tc, quadratic.sigma)
    inner = np.abs(g.nodes) <= g.T_max / 2
    np.testing.assert_allclose(out.values[inner, 0, 0], 2 * y0, rtol=1e-4)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_y_block_identity_at_zero(seed):
    case = systems.reference()
    rng = np.random.default_rng(seed)
    g = TimeGrid(10.0, 200)
    phi = Trajectory(g, rng.normal(size=(201, 3)), case.spec.dims)
    D = LinearizedTrajectory(g, rng.normal(size=(201, 3, 1)), case.spec.dims)
    out = apply_T1(D, phi, case.spec, case.tc, case.sigma)
    assert out.values[g.mid, 1, 0] == 1.0


def test_zero_nonlinearity_derivative():
    case = systems.zero()
    t1 = _t1(case, 0.3)
    assert t1.iterations == 1 and np.all(t1.dphi == 0)
    np.testing.assert_array_equal(t1.Delta.values, initial_linearized(t1.Delta.grid, case.spec).values)


@pytest.mark.parametrize("y0", [0.1, -0.1, 0.3, -0.3])
def test_quadratic_derivative(quadratic, y0):
    t1 = _t1(quadratic, y0)
    assert t1.dphi.shape == (1, 1)
    assert t1.dphi[0, 0] == pytest.approx(2 * y0, abs=1e-4)
    assert t1.Delta.values[t1.Delta.grid.mid, 1, 0] == 1.0


@pytest.mark.parametrize("name,y0", [("reference", 0.6), ("reference", -1.3), ("carr_local", 0.15)])
def test_derivative_matches_central_difference(name, y0):
    case = getattr(systems, name)()
    res = _solve(case, y0)
    t1 = _t1(case, y0, res)
    h = 1e-3
    g = res.phi.grid
    plus = np.concatenate(_solve(case, y0 + h, grid=g).phi_value)
    minus = np.concatenate(_solve(case, y0 - h, grid=g).phi_value)
    fd = (plus - minus) / (2 * h)
    # C h^2 + 2 tol / h with a generous C
    assert np.max(np.abs(fd - t1.dphi[:, 0])) <= 10 * h**2 + 2 * case.cfg.tol / h


def _random_delta(rng, g, sigma, dims, scale):
    vals = rng.normal(size=(g.n_steps + 1, sum(dims), dims[1])) * scale
    return LinearizedTrajectory(g, vals / sigma_weights(g.nodes, sigma)[:, None, None], dims)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_T1_contraction_and_norm_bound(seed):
    case = systems.reference()
    rng = np.random.default_rng(seed)
    g = TimeGrid(20.0, 800)
    phi = Trajectory(g, rng.normal(size=(801, 3)) / sigma_weights(g.nodes, case.sigma)[:, None], case.spec.dims)
    D1, D2 = (_random_delta(rng, g, case.sigma, case.spec.dims, rng.uniform(0.1, 3)) for _ in range(2))
    o1, o2 = (apply_T1(D, phi, case.spec, case.tc, case.sigma) for D in (D1, D2))
    d_in = sigma_norm(LinearizedTrajectory(g, D1.values - D2.values, case.spec.dims), case.sigma)
    d_out = sigma_norm(LinearizedTrajectory(g, o1.values - o2.values, case.spec.dims), case.sigma)
    assert d_out <= (case.dphi + 0.05) * d_in
    n1 = sigma_norm(D1, case.sigma)
    assert sigma_norm(o1, case.sigma) <= case.tc.K_y + case.dphi * n1 + 0.05 * n1


def test_T1_measured_rates(reference):
    t1 = _t1(reference, 0.9)
    assert t1.max_rate <= reference.dphi + 0.05


# pair bound


def test_pair_bound_identical_points(reference):
    res = _solve(reference, 0.4)
    r = check_phi_pair_bound([0.4], [0.4], res.phi, res.phi, reference.tc, reference.delta)
    assert r.max_ratio == 0.0 and r.passed


def test_pair_bound_zero_nonlinearity():
    case = systems.zero(1, 1, 0)
    a, b = _solve(case, 0.2, T_max=10.0), _solve(case, -0.3, T_max=10.0)
    r = check_phi_pair_bound([0.2], [-0.3], a.phi, b.phi, case.tc, case.delta)
    assert r.max_ratio == pytest.approx(1 / math.e, rel=1e-12)
    assert r.a6


def test_pair_bound_records_a6(reference):
    a, b = _solve(reference, 0.2), _solve(reference, 0.5)
    r = check_phi_pair_bound([0.2], [0.5], a.phi, b.phi, reference.tc, reference.delta)
    assert r.a6 is False
    assert r.passed


@pytest.mark.parametrize("name", ["quadratic", "reference", "carr_local"])
def test_pair_bound_random_pairs(name):
    case = getattr(systems, name)()
    rng = np.random.default_rng(4)
    lim = 0.2 if name == "carr_local" else 0.3 if name == "quadratic" else 1.5
    for _ in range(5):
        y1, y2 = rng.uniform(-lim, lim, 2)
        a = _solve(case, y1)
        b = _solve(case, y2, grid=a.phi.grid)
        r = check_phi_pair_bound([y1], [y2], a.phi, b.phi, case.tc, case.delta)
        assert r.passed, r.to_dict()


# continuity of DPhi


def test_continuity_zero_nonlinearity():
    case = systems.zero()
    r = check_dphi_continuity([[-0.2], [0.0], [0.2]], case.spec, case.tc, case.sigma, delta=case.delta,
                              gamma=(0.0, 0.0, 0.0))
    assert r.quotients == [0.0, 0.0]


def test_continuity_quadratic_and_scaling():
    grid = [[-0.3], [-0.1], [0.1], [0.3]]
    full, half = systems.quadratic(1.0), systems.quadratic(0.5)
    r1 = check_dphi_continuity(grid, full.spec, full.tc, full.sigma, delta=full.delta, gamma=full.gamma)
    r2 = check_dphi_continuity(grid, half.spec, half.tc, half.sigma, delta=half.delta, gamma=half.gamma)
    np.testing.assert_allclose(r1.quotients, 2.0, rtol=1e-4)
    np.testing.assert_allclose(r2.quotients, 1.0, rtol=1e-4)
    assert r1.bounded and r2.bounded
    assert r2.constant < r1.constant


def test_continuity_constant_takes_larger_branch():
    case = systems.reference()
    c = continuity_constant(case.tc, case.delta, (0.1, 0.1, 0.1), case.sigma, 1.0)
    # t >= 0: v = 0.1, sigma = 0.5; t < 0: v = -0.1, sigma = -0.5
    terms = [0.1 * math.e / d for d in (0.1 + 0.5 + 1, 1 - 0.1 - 0.5, -0.1 - 0.5 + 1, 1 + 0.1 + 0.5)]
    assert c == pytest.approx(max(terms) / (1 - 0.2))
