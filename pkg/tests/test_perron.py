import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import systems
from lypmfd.errors import ConditionError, ConvergenceError, TailError
from lypmfd.perron import (
    FixedPointConfig,
    a_priori_iterations,
    apply_T,
    center_flow,
    initial_iterate,
    make_grid,
    sample_manifold,
    solve_fixed_point,
)
from lypmfd.trajectory import TimeGrid, Trajectory, matrix_exp, sigma_norm, sigma_weights


def _solve(case, y0, **kw):
    return solve_fixed_point(np.atleast_1d(y0), case.spec, case.tc, case.sigma, kw.pop("cfg", case.cfg),
                             delta=case.delta, **kw)


def test_config_validation():
    with pytest.raises(ValueError):
        FixedPointConfig(tol=0)
    with pytest.raises(ValueError):
        FixedPointConfig(max_iters=0)


def test_center_flow_matches_expm():
    B = np.array([[0.0, 1.0], [-1.0, 0.0]])
    g = TimeGrid(10.0, 200)
    flow = center_flow(g, B)
    for i in (0, 37, 100, 163, 200):
        np.testing.assert_allclose(flow[i], matrix_exp(B, g.nodes[i]), atol=1e-12)


def test_zero_nonlinearity_image_is_linear_flow():
    case = systems.zero(1, 2, 1, B=[[0.0, 1.0], [-1.0, 0.0]])
    g = TimeGrid(10.0, 200)
    rng = np.random.default_rng(0)
    phi = Trajectory(g, rng.normal(size=(201, 4)), case.spec.dims)
    y0 = np.array([0.3, -0.2])
    psi = apply_T(phi, y0, case.spec, case.tc, case.sigma)
    for i in (0, 50, 100, 200):
        expected = np.concatenate([[0.0], matrix_exp(case.spec.B, g.nodes[i]) @ y0, [0.0]])
        np.testing.assert_allclose(psi.values[i], expected, atol=1e-12)


def test_constant_trajectory_gives_y_squared(quadratic):
    y0 = 0.3
    g = make_grid(quadratic.tc, quadratic.sigma)
    phi = Trajectory(g, np.tile([0.0, y0], (g.n_steps + 1, 1)), quadratic.spec.dims)
    psi = apply_T(phi, [y0], quadratic.spec, quadratic.tc, quadratic.sigma)
    inner = np.abs(g.nodes) <= g.T_max / 2
    np.testing.assert_allclose(psi.values[inner, 0], y0**2, rtol=1e-4)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_image_is_anchored_at_y0(seed):
    case = systems.reference()
    rng = np.random.default_rng(seed)
    g = TimeGrid(10.0, 200)
    phi = Trajectory(g, rng.normal(size=(201, 3)), case.spec.dims)
    y0 = rng.normal(size=1)
    psi = apply_T(phi, y0, case.spec, case.tc, case.sigma)
    assert psi.values[g.mid, 1] == y0[0]


def test_zero_nonlinearity_one_iteration():
    case = systems.zero()
    res = _solve(case, [0.4])
    assert res.iterations == 1
    assert res.phi_value[0][0] == 0.0 and res.phi_value[1][0] == 0.0


@pytest.mark.parametrize("y0", [0.1, -0.1, 0.3, -0.3])
def test_quadratic_manifold(quadratic, y0):
    res = _solve(quadratic, y0)
    assert res.phi_value[0][0] == pytest.approx(y0**2, abs=1e-5)
    assert res.phi_value[1].shape == (0,)
    assert res.final_step_norm < quadratic.cfg.tol
    assert res.phi.values[res.phi.grid.mid, 1] == y0


def test_reference_manifold_is_invariant_under_symmetry(reference):
    # F, H are odd in y and G is odd in (x, z) jointly, so Phi(-y) = -Phi(y)
    a = _solve(reference, 0.5)
    b = _solve(reference, -0.5)
    np.testing.assert_allclose(np.concatenate(a.phi_value), -np.concatenate(b.phi_value), atol=1e-12)
    assert max(a.measured_rates) <= reference.dphi + 0.05


def test_uniqueness_from_different_initial_iterates(reference):
    y0 = np.array([0.7])
    a = _solve(reference, y0)
    g = a.phi.grid
    vals = np.zeros((g.n_steps + 1, 3))
    vals[g.mid, 1] = y0[0]
    b = _solve(reference, y0, grid=g, initial=Trajectory(g, vals, reference.spec.dims))
    rng = np.random.default_rng(2)
    weird = rng.normal(size=vals.shape) * 0.1 / sigma_weights(g.nodes, reference.sigma)[:, None]
    c = _solve(reference, y0, grid=g, initial=Trajectory(g, weird, reference.spec.dims))
    tol = reference.cfg.tol
    for other in (b, c):
        diff = Trajectory(g, a.phi.values - other.phi.values, reference.spec.dims)
        assert sigma_norm(diff, reference.sigma) <= 2 * tol


def test_conditions_enforced(carr):
    with pytest.raises(ConditionError):
        _solve(carr, 0.1, cfg=FixedPointConfig())


def test_underestimated_lipschitz_constant_is_caught(carr):
    case = systems.Case(carr.spec, carr.tc, (0.01, 0.01, 0.0))
    with pytest.raises(ConvergenceError):
        _solve(case, 0.2)


def test_max_iters(carr):
    with pytest.raises(ConvergenceError, match="max_iters"):
        _solve(carr, 0.2, cfg=FixedPointConfig(max_iters=3, enforce_conditions=False))


def test_tail_error_on_short_grid(reference):
    with pytest.raises(TailError):
        _solve(reference, 0.5, T_max=3.0, n_steps=64)


def test_a_priori_iterations():
    assert a_priori_iterations(1.0, 0.5, 1e-3) == math.ceil(math.log(0.5e-3) / math.log(0.5)) + 1
    assert a_priori_iterations(1e-12, 0.5, 1e-10) == 1
    assert a_priori_iterations(1.0, 1.2, 1e-3) == math.inf


def test_grid_covers_tails(reference):
    # the default horizon 40 / 0.5 = 80 is too short for a huge amplitude
    g = make_grid(reference.tc, reference.sigma, reference.delta, amplitude=1e15, tail_tol=1e-8)
    assert g.T_max > 80.0
    gap = reference.sigma.sigma_n - reference.tc.alpha_x
    assert 0.1 * 1e15 * math.exp(-gap * g.T_max) / gap < 1e-8
    res = _solve(reference, 0.5)
    assert max(res.tail.values()) < 1e-8


# contraction and norm bound on random trajectories


def _random_traj(rng, g, sigma, dims, scale=1.0):
    # bounded in the weighted norm: random values divided by the weight
    vals = rng.normal(size=(g.n_steps + 1, sum(dims))) * scale
    return Trajectory(g, vals / sigma_weights(g.nodes, sigma)[:, None], dims)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_contraction_property(seed):
    case = systems.reference()
    rng = np.random.default_rng(seed)
    g = TimeGrid(20.0, 800)
    p1, p2 = (_random_traj(rng, g, case.sigma, case.spec.dims, rng.uniform(0.1, 3)) for _ in range(2))
    y0 = rng.normal(size=1)
    d_in = sigma_norm(Trajectory(g, p1.values - p2.values, case.spec.dims), case.sigma)
    t1, t2 = (apply_T(p, y0, case.spec, case.tc, case.sigma) for p in (p1, p2))
    d_out = sigma_norm(Trajectory(g, t1.values - t2.values, case.spec.dims), case.sigma)
    assert d_out <= (case.dphi + 0.05) * d_in


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_norm_bound(seed):
    case = systems.reference()
    rng = np.random.default_rng(seed)
    g = TimeGrid(20.0, 800)
    phi = _random_traj(rng, g, case.sigma, case.spec.dims, rng.uniform(0.1, 3))
    y0 = rng.normal(size=1)
    out = sigma_norm(apply_T(phi, y0, case.spec, case.tc, case.sigma), case.sigma)
    bound = case.tc.K_y * abs(y0[0]) + case.dphi * sigma_norm(phi, case.sigma)
    assert out <= bound + 0.05 * sigma_norm(phi, case.sigma)


# sampling


def test_sample_zero_nonlinearity():
    case = systems.zero()
    s = sample_manifold([[-0.2], [0.0], [0.5]], case.spec, case.tc, case.sigma, delta=case.delta)
    assert all(np.all(r.phi == 0) for r in s.records)
    assert s.max_quotient == 0.0


def test_sample_quadratic(quadratic, tmp_path):
    s = sample_manifold([[-0.3], [0.0], [0.3]], quadratic.spec, quadratic.tc, quadratic.sigma, delta=quadratic.delta)
    np.testing.assert_allclose([r.phi_x[0] for r in s.records], [0.09, 0.0, 0.09], atol=1e-5)
    assert s.max_quotient == pytest.approx(0.3, abs=1e-4)
    assert s.lipschitz_violations == 0 and s.max_quotient <= s.lipschitz_bound
    doc = json.loads(s.to_json())
    assert set(doc["points"][0]) >= {"y0", "phi_x", "phi_z", "iters", "final_step_norm", "max_rate"}
    p = tmp_path / "s.csv"
    s.write_csv(p)
    assert p.read_text().splitlines()[0].startswith("y0_1,phi_x_1,iters")


def test_sample_records_failures_and_continues(carr):
    case = systems.Case(carr.spec, carr.tc, (0.01, 0.01, 0.0))
    s = sample_manifold([[0.0], [0.2]], case.spec, case.tc, case.sigma, delta=case.delta)
    assert s.records[0].ok and not s.records[1].ok
    assert "ConvergenceError" in s.records[1].error


def test_sample_parallel_matches_sequential(reference):
    grid = [[y] for y in np.linspace(-1, 1, 6)]
    a = sample_manifold(grid, reference.spec, reference.tc, reference.sigma, delta=reference.delta)
    b = sample_manifold(grid, reference.spec, reference.tc, reference.sigma, delta=reference.delta, workers=3)
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_array_equal(ra.phi, rb.phi)


def test_initial_iterate_is_flow(reference):
    g = TimeGrid(5.0, 10)
    phi = initial_iterate(g, reference.spec, [0.3])
    np.testing.assert_allclose(phi.values[:, 1], 0.3)
    assert np.all(phi.values[:, [0, 2]] == 0)
