"""Differentiability of the manifold map.

Differentiating the fixed-point equation in y0 gives a linear operator T1 on
matrix-valued trajectories Delta(t) in L(Y, E):

    Y-block  e^{tB} + int_0^t e^{(t-s)B} DG(phi(s)) Delta(s) ds
    Z-block  - int_t^inf e^{(t-s)C} DH(phi(s)) Delta(s) ds
    X-block  int_{-inf}^t e^{(t-s)A} DF(phi(s)) Delta(s) ds

Its fixed point Delta* is the derivative of phi* in y0, and DPhi(y0) is
Delta*(0) restricted to the X and Z rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .conditions import check_conditions, delta_phi
from .errors import ConditionError, ConvergenceError
from .perron import FixedPointConfig, _noise_floor, a_priori_iterations, center_flow, solve_fixed_point
from .trajectory import TailModel, Trajectory, sigma_norm, tail_bound, weighted_integrals

__all__ = [
    "LinearizedTrajectory",
    "T1Result",
    "initial_linearized",
    "apply_T1",
    "solve_T1",
    "solve_T1_fixed_point",
    "PairBoundReport",
    "check_phi_pair_bound",
    "ContinuityReport",
    "continuity_constant",
    "check_dphi_continuity",
]


@dataclass(frozen=True)
class LinearizedTrajectory(Trajectory):
    """Node values are ``(dim, n_y)`` matrices."""

    def __post_init__(self):
        super().__post_init__()
        if self.values.ndim != 3 or self.values.shape[2] != self.dims[1]:
            raise ValueError(f"linearized values must have shape (N+1, dim, {self.dims[1]})")


def initial_linearized(grid, spec, flow=None):
    """Delta_0(t) = (0, e^{tB}, 0)."""
    flow = center_flow(grid, spec.B) if flow is None else flow
    vals = np.zeros((grid.n_steps + 1, spec.dim, spec.n_y))
    vals[:, spec.slices[1], :] = flow
    return LinearizedTrajectory(grid, vals, spec.dims)


def _jacobians(phi0, spec):
    U = phi0.values
    return spec.F.jacobian(U), spec.G.jacobian(U), spec.H.jacobian(U)


def apply_T1(Delta, phi0, spec, tc, sigma, delta=None, tail_tol=None, flow=None, jacobians=None):
    """One application of the differentiated operator around the fixed point ``phi0``."""
    grid = Delta.grid
    if phi0.grid != grid:
        raise ValueError("Delta and phi0 must share a grid")
    if delta is not None and tail_tol is not None:
        _check_tails_T1(Delta, spec, tc, sigma, delta, tail_tol)
    DF, DG, DH = _jacobians(phi0, spec) if jacobians is None else jacobians
    D = Delta.values
    sx, sy, sz = spec.slices
    flow = center_flow(grid, spec.B) if flow is None else flow
    out = np.zeros_like(D)
    out[:, sy, :] = flow + weighted_integrals("Y", grid, DG @ D, spec.B)
    if spec.n_x:
        out[:, sx, :] = weighted_integrals("X", grid, DF @ D, spec.A)
    if spec.n_z:
        out[:, sz, :] = -weighted_integrals("Z", grid, DH @ D, spec.C)
    return LinearizedTrajectory(grid, out, spec.dims)


def _tails_T1(Delta, spec, tc, sigma, delta):
    tail = TailModel(sigma_norm(Delta, sigma), sigma.sigma_n, sigma.sigma_p)
    T = Delta.grid.T_max
    return {
        "X": tail_bound("X", 0.0, T, tail, tc.K_x, delta[0], tc.alpha_x) if spec.n_x else 0.0,
        "Z": tail_bound("Z", 0.0, T, tail, tc.K_z, delta[2], tc.beta_z) if spec.n_z else 0.0,
    }


def _check_tails_T1(Delta, spec, tc, sigma, delta, tail_tol):
    from .errors import TailError

    worst = max(_tails_T1(Delta, spec, tc, sigma, delta).values())
    if worst > tail_tol:
        raise TailError(f"tail bound {worst:.3e} at t = 0 exceeds tail_tol {tail_tol:.1e}; increase T_max")


@dataclass
class T1Result:
    Delta: LinearizedTrajectory
    dphi: np.ndarray
    iterations: int
    step_norms: list
    measured_rates: list
    delta_phi: float
    tail: dict = field(default_factory=dict)
    iterates: Optional[list] = None

    @property
    def max_rate(self):
        return max(self.measured_rates) if self.measured_rates else 0.0

    @property
    def final_step_norm(self):
        return self.step_norms[-1]


def solve_T1(y0, phi0, spec, tc, sigma, cfg=None, delta=None, keep_iterates=False):
    """Iterate T1 from Delta_0 with the same stopping rule and watchdogs as the main solve."""
    cfg = cfg or FixedPointConfig()
    delta = tuple(delta if delta is not None else (spec.lipschitz or (0.0, 0.0, 0.0)))
    report = delta_phi(tc, delta, sigma)
    dphi = report.delta_phi
    admissible = report.flags["C1"] and report.flags["C2"]
    if cfg.enforce_conditions and not admissible:
        raise ConditionError("; ".join(report.messages) or "weights are not admissible")
    y_phi = phi0.values[phi0.grid.mid, spec.slices[1]]
    if not np.allclose(y_phi, np.atleast_1d(y0), rtol=0, atol=1e-12):
        raise ValueError("phi0 is not anchored at y0")
    grid = phi0.grid
    flow = center_flow(grid, spec.B)
    jacs = _jacobians(phi0, spec)
    D = initial_linearized(grid, spec, flow)
    watch = admissible and dphi < 1
    steps, rates = [], []
    iterates = [D] if keep_iterates else None
    over, bound = 0, math.inf
    for k in range(1, cfg.max_iters + 1):
        nxt = apply_T1(D, phi0, spec, tc, sigma, delta=delta, tail_tol=cfg.tail_tol, flow=flow, jacobians=jacs)
        step = sigma_norm(LinearizedTrajectory(grid, nxt.values - D.values, spec.dims), sigma)
        steps.append(step)
        if keep_iterates:
            iterates.append(nxt)
        if len(steps) >= 2 and steps[-2] > _noise_floor(D, sigma):
            rate = step / steps[-2]
            rates.append(rate)
            over = over + 1 if (watch and rate > dphi + cfg.rate_slack) else 0
            if over >= cfg.stall_window:
                raise ConvergenceError(
                    f"linearized iteration rate {rate:.4f} exceeded delta_phi + slack = "
                    f"{dphi + cfg.rate_slack:.4f} for {over} consecutive iterations"
                )
        if k == 1 and cfg.a_priori_check and watch:
            bound = a_priori_iterations(step, dphi, cfg.tol)
        D = nxt
        if step < cfg.tol:
            break
        if k >= bound:
            raise ConvergenceError(
                f"linearized iteration did not converge after {k} iterations (Banach bound {bound})"
            )
    else:
        raise ConvergenceError(f"max_iters = {cfg.max_iters} exceeded in the linearized iteration")
    D0 = D.values[grid.mid]
    sx, _, sz = spec.slices
    dphi_mat = np.concatenate([D0[sx], D0[sz]], axis=0)
    return T1Result(D, dphi_mat, k, steps, rates, dphi, _tails_T1(D, spec, tc, sigma, delta), iterates)


def solve_T1_fixed_point(y0, phi0, spec, tc, sigma, cfg=None, delta=None):
    """Return ``(Delta*, DPhi(y0))``; DPhi has shape ``(n_x + n_z, n_y)``."""
    res = solve_T1(y0, phi0, spec, tc, sigma, cfg, delta)
    return res.Delta, res.dphi


# -- bounds ------------------------------------------------------------------


@dataclass
class PairBoundReport:
    max_ratio: float
    worst_t: float
    passed: bool
    a6: bool
    slack: float

    def to_dict(self):
        return {
            "max_ratio": self.max_ratio,
            "worst_t": self.worst_t,
            "passed": self.passed,
            "A6": self.a6,
            "slack": self.slack,
        }


def check_phi_pair_bound(y1, y2, phi1, phi2, tc, delta, sigma=None, slack=1.05):
    """Compare |phi1(t) - phi2(t)| with K_y e e^{rate t} |y1 - y2| at every node.

    The rate is K_y d_y + alpha_y for t >= 0 and beta_y - K_y d_y for t <= 0.
    ``max_ratio`` is the largest lhs / rhs; nodes where both sides vanish
    count as ratio 0.
    """
    t = phi1.grid.nodes
    dy = float(np.max(np.abs(np.atleast_1d(y1) - np.atleast_1d(y2)))) if np.size(y1) else 0.0
    lhs = np.abs(phi1.values - phi2.values).max(axis=1)
    ky = tc.K_y * delta[1]
    rate = np.where(t >= 0, ky + tc.alpha_y, tc.beta_y - ky)
    with np.errstate(over="ignore"):
        rhs = tc.K_y * math.e * np.exp(rate * t) * dy
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lhs == 0, 0.0, lhs / rhs)
    i = int(np.argmax(ratio))
    a6 = check_conditions(tc, delta).flags["A6"]
    return PairBoundReport(float(ratio[i]), float(t[i]), bool(ratio[i] <= slack), a6, slack)


@dataclass
class ContinuityReport:
    quotients: list
    constant: float
    flags: dict
    dphi: list

    @property
    def max_quotient(self):
        return max(self.quotients) if self.quotients else 0.0

    @property
    def bounded(self):
        return self.max_quotient <= self.constant

    def to_dict(self):
        return {
            "quotients": [float(q) for q in self.quotients],
            "max_quotient": self.max_quotient,
            "constant": self.constant if math.isfinite(self.constant) else None,
            "bounded": self.bounded,
            "flags": self.flags,
        }


def continuity_constant(tc, delta, gamma, sigma, delta_norm):
    """Bound on |DPhi(y1) - DPhi(y2)| / |y1 - y2|.

    (1 - delta_phi)^{-1} |Delta_1*| max{K_x K_y g_x e / (v + sigma - alpha_x),
    K_z K_y g_z e / (beta_z - v - sigma)}, evaluated on both half-lines
    (t >= 0 and t < 0 give different v and sigma) and the larger taken.
    """
    dphi = delta_phi(tc, delta, sigma).delta_phi
    if not dphi < 1:
        return math.inf
    gx, _, gz = gamma
    terms = []
    for t in (1.0, -1.0):
        v = float(sigma.v(t))
        s = float(sigma.sigma(t))
        for num, den in (
            (tc.K_x * tc.K_y * gx * math.e, v + s - tc.alpha_x),
            (tc.K_z * tc.K_y * gz * math.e, tc.beta_z - v - s),
        ):
            if num == 0:
                terms.append(0.0)
            elif den <= 0:
                terms.append(math.inf)
            else:
                terms.append(num / den)
    return delta_norm * max(terms) / (1 - dphi)


def check_dphi_continuity(y_grid, spec, tc, sigma, cfg=None, delta=None, gamma=None, n_steps=None):
    """Difference quotients of DPhi over adjacent grid points against the continuity constant."""
    cfg = cfg or FixedPointConfig()
    delta = tuple(delta if delta is not None else (spec.lipschitz or (0.0, 0.0, 0.0)))
    gamma = tuple(gamma if gamma is not None else (spec.deriv_lipschitz or (0.0, 0.0, 0.0)))
    kw = {} if n_steps is None else {"n_steps": n_steps}
    mats, norms = [], []
    for y0 in y_grid:
        res = solve_fixed_point(y0, spec, tc, sigma, cfg, delta=delta, **kw)
        t1 = solve_T1(y0, res.phi, spec, tc, sigma, cfg, delta)
        mats.append(t1.dphi)
        norms.append(sigma_norm(t1.Delta, sigma))
    ys = [np.atleast_1d(np.asarray(y, dtype=float)) for y in y_grid]
    q = []
    for i in range(len(ys) - 1):
        dy = float(np.max(np.abs(ys[i + 1] - ys[i])))
        if dy == 0:
            continue
        dm = mats[i + 1] - mats[i]
        q.append(float(np.abs(dm).sum(axis=1).max()) / dy if dm.size else 0.0)
    const = continuity_constant(tc, delta, gamma, sigma, max(norms) if norms else 0.0)
    flags = check_conditions(tc, delta).flags
    flags = {"A6": flags["A6"], "A4": all(math.isfinite(g) for g in gamma)}
    return ContinuityReport(q, const, flags, [m.tolist() for m in mats])
