import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from lypmfd.conditions import (
    SigmaParameters,
    TrichotomyConstants,
    check_conditions,
    choose_sigma,
    delta_phi,
    derive_constants,
    derive_trichotomy,
    gap_report,
    verification_grid,
    verify_trichotomy,
)
from lypmfd.errors import ConditionError, TrichotomyError

REF = TrichotomyConstants(-1.0, 0.0, 0.0, 1.0)


def test_scalar_blocks():
    assert derive_constants([[-1.0]], "stable") == ((-1.0,), 1.0)
    assert derive_constants([[2.0]], "unstable") == ((2.0,), 1.0)


def test_rotation_center_block_in_max_norm():
    (ay, by), K = derive_constants([[0.0, 1.0], [-1.0, 0.0]], "center")
    assert abs(ay) < 1e-12 and abs(by) < 1e-12
    # |cos t| + |sin t| peaks at sqrt(2); the grid sees nearly that
    assert 1.35 < K <= math.sqrt(2) + 1e-12


def test_defective_block_needs_margin():
    J = [[-1.0, 1.0], [0.0, -1.0]]
    with pytest.raises(TrichotomyError, match="eta"):
        derive_constants(J, "stable")
    (ax,), K = derive_constants(J, "stable", eta=0.05)
    assert ax == pytest.approx(-0.95) and K > 1
    tc, notes = derive_trichotomy(J, [[0.0]], np.zeros((0, 0)))
    assert tc.alpha_x == pytest.approx(-0.95) and notes


def test_empty_blocks_have_infinite_rates():
    tc, _ = derive_trichotomy(np.zeros((0, 0)), [[0.0]], np.zeros((0, 0)))
    assert tc.alpha_x == -math.inf and tc.beta_z == math.inf


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_derived_constants_satisfy_bounds_on_grid(seed):
    rng = np.random.default_rng(seed)

    def block(shift, n):
        Q = rng.normal(size=(n, n))
        return Q @ np.diag(shift + rng.uniform(-0.3, 0.3, n)) @ np.linalg.inv(Q)

    A, B, C = block(-2.0, 2), block(0.0, 1), block(2.0, 2)
    assume(np.linalg.cond(A) < 1e3 and np.linalg.cond(C) < 1e3)
    try:
        tc, _ = derive_trichotomy(A, B, C)
    except TrichotomyError:
        return
    ok, worst = verify_trichotomy(A, B, C, tc, verification_grid())
    assert ok, worst


def test_verify_detects_underestimated_K():
    ok, worst = verify_trichotomy([[0.0, 1.0], [-1.0, 0.0]], [[0.0]], np.zeros((0, 0)),
                                  TrichotomyConstants(0.0, 0.0, 0.0, math.inf))
    # alpha_x = 0 is not a decay rate but the check is only about the bound; K = 1 is too small
    assert not ok and worst > 1.3


def test_K_must_be_at_least_one():
    with pytest.raises(ValueError):
        TrichotomyConstants(-1, 0, 0, 1, K_x=0.5)


def test_gap_condition_examples():
    r = check_conditions(REF, (0.1, 0.1, 0.1))
    assert r.flags["A3"]
    assert check_conditions(REF, (0.0, 0.0, 0.0)).flags["A3"]
    assert not r.flags["A6"]
    assert not check_conditions(REF, (0.6, 0.5, 0.0)).flags["A3"]


def test_choose_sigma_midpoints():
    s = choose_sigma(REF, (0.1, 0.1, 0.1))
    assert s.sigma_n == pytest.approx(-0.5, abs=1e-15) and s.sigma_p == pytest.approx(0.5, abs=1e-15)
    s = choose_sigma(TrichotomyConstants(-3.0, 0.0, 0.0, 5.0), (0, 0, 0))
    assert (s.sigma_n, s.sigma_p) == (-1.5, 2.5)


def test_choose_sigma_empty_interval():
    with pytest.raises(ConditionError):
        choose_sigma(REF, (0.5, 0.6, 0.1))


def test_choose_sigma_absent_unstable_part():
    tc = TrichotomyConstants(-1.0, 0.0, 0.0, math.inf)
    s = choose_sigma(tc, (0.2, 0.1, 0.0))
    r = delta_phi(tc, (0.2, 0.1, 0.0), s)
    assert r.flags["C1"] and r.flags["C2"] and r.delta_phi < 1
    assert r.ratios["z"] == 0.0


def test_delta_phi_reference():
    r = delta_phi(REF, (0.1, 0.1, 0.1), SigmaParameters(-0.5, 0.5))
    assert all(v == pytest.approx(0.2, abs=1e-15) for v in r.ratios.values())
    assert r.delta_phi == 0.2
    assert r.lipschitz_bound == pytest.approx(math.exp(0.2), abs=1e-12)


def test_delta_phi_zero_nonlinearity():
    r = delta_phi(REF, (0, 0, 0), SigmaParameters(-0.5, 0.5))
    assert r.delta_phi == 0.0 and r.lipschitz_bound == REF.K_y


def test_delta_phi_bad_sigma():
    r = delta_phi(REF, (0.1, 0.1, 0.1), SigmaParameters(-0.05, 0.5))
    assert r.ratios["y_past"] == pytest.approx(2.0)
    assert r.delta_phi == pytest.approx(2.0) and not r.flags["C2"]


def test_sigma_helpers():
    s = SigmaParameters(-0.5, 0.5, alpha_y=-0.1, beta_y=0.2, ky_dy=0.05)
    np.testing.assert_allclose(s.c([1.0, -1.0]), [-0.1, 0.2])
    np.testing.assert_allclose(s.k([1.0, -1.0]), [0.05, -0.05])
    np.testing.assert_allclose(s.v([1.0, -1.0]), [-0.05, 0.15])
    np.testing.assert_allclose(s.sigma([0.0, -1e-9]), [0.5, -0.5])


def test_gap_report_falls_back_when_gap_fails():
    report, sigma = gap_report(REF, (0.6, 0.5, 0.1))
    assert not report.flags["A3"] and not report.passed
    assert REF.alpha_x < sigma.sigma_n < 0 < sigma.sigma_p < REF.beta_z


_delta = st.floats(0.0, 0.3)


@settings(max_examples=200, deadline=None)
@given(_delta, _delta, _delta, st.floats(0.1, 2.0), st.floats(0.1, 2.0))
def test_c2_implies_contraction(dx, dy, dz, gx, gz):
    tc = TrichotomyConstants(-gx, 0.0, 0.0, gz)
    try:
        s = choose_sigma(tc, (dx, dy, dz))
    except ConditionError:
        return
    r = delta_phi(tc, (dx, dy, dz), s)
    assert r.flags["C1"] and r.flags["C2"]
    assert r.delta_phi < 1


@settings(max_examples=200, deadline=None)
@given(_delta, _delta, _delta, st.integers(0, 2), st.floats(0.0, 0.2))
def test_delta_phi_monotone_in_delta(dx, dy, dz, which, bump):
    s = SigmaParameters(-0.5, 0.5)
    d = [dx, dy, dz]
    d2 = list(d)
    d2[which] += bump
    assert delta_phi(REF, d2, s).delta_phi >= delta_phi(REF, d, s).delta_phi
