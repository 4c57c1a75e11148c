"""The Lyapunov-Perron operator, its fixed point and the manifold map.

For a center coordinate y0 the operator sends a trajectory phi to

    Y(t) = e^{tB} y0 + int_0^t e^{(t-s)B} G(phi(s)) ds
    Z(t) = - int_t^inf e^{(t-s)C} H(phi(s)) ds
    X(t) = int_{-inf}^t e^{(t-s)A} F(phi(s)) ds

and its fixed point phi* is the trajectory through the manifold point over
y0. The manifold map is Phi(y0) = (phi*(0)|_X, phi*(0)|_Z).
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .conditions import delta_phi
from .errors import ConditionError, ConvergenceError, LypmfdError, TailError
from .trajectory import (
    TailModel,
    TimeGrid,
    Trajectory,
    matrix_exp,
    sigma_norm,
    tail_bound,
    weighted_integrals,
)

log = logging.getLogger(__name__)

__all__ = [
    "FixedPointConfig",
    "SolveResult",
    "ManifoldRecord",
    "ManifoldSample",
    "make_grid",
    "center_flow",
    "initial_iterate",
    "apply_T",
    "tail_estimates",
    "solve_fixed_point",
    "sample_manifold",
    "a_priori_iterations",
]

DEFAULT_N_STEPS = 4096


@dataclass(frozen=True)
class FixedPointConfig:
    """Stopping rule and watchdogs for the fixed-point iterations.

    ``enforce_conditions=False`` lets a run proceed when the weights do not
    satisfy the admissibility conditions; the contraction is then unproven and
    the rate watchdog is disabled.
    """

    tol: float = 1e-10
    max_iters: int = 500
    a_priori_check: bool = True
    rate_slack: float = 0.05
    tail_tol: float = 1e-8
    enforce_conditions: bool = True
    stall_window: int = 3

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def _gaps(tc, sigma):
    out = []
    if math.isfinite(tc.alpha_x):
        out.append(sigma.sigma_n - tc.alpha_x)
    if math.isfinite(tc.beta_z):
        out.append(tc.beta_z - sigma.sigma_p)
    return out


def make_grid(tc, sigma, delta=None, amplitude=None, n_steps=DEFAULT_N_STEPS, T_max=None,
              tail_tol=1e-8):
    """Symmetric grid long enough for the tails to be negligible at t = 0.

    The default horizon is 40 / min(sigma_n - alpha_x, beta_z - sigma_p, 1);
    it is lengthened if the tail bound at t = 0 for the given amplitude would
    still exceed ``tail_tol``.
    """
    if T_max is None:
        gaps = [g for g in _gaps(tc, sigma) if g > 0]
        T_max = 40.0 / min(gaps + [1.0])
        if delta is not None and amplitude:
            tail = TailModel(amplitude, sigma.sigma_n, sigma.sigma_p)
            for kind, K, d, rate in (("X", tc.K_x, delta[0], tc.alpha_x), ("Z", tc.K_z, delta[2], tc.beta_z)):
                est = tail_bound(kind, 0.0, 0.0, tail, K, d, rate)
                if est > tail_tol and math.isfinite(est):
                    gap = (sigma.sigma_n - rate) if kind == "X" else (rate - sigma.sigma_p)
                    T_max = max(T_max, math.log(est / tail_tol) / gap * 1.05)
    return TimeGrid(float(T_max), int(n_steps))


def center_flow(grid, B):
    """exp(t_i B) at every node, shape ``(N+1, n_y, n_y)``."""
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    t = grid.nodes
    if n == 1:
        return np.exp(B[0, 0] * t)[:, None, None]
    out = np.empty((t.size, n, n))
    m = grid.mid
    out[m] = np.eye(n)
    Ef, Eb = matrix_exp(B, grid.h), matrix_exp(B, -grid.h)
    for i in range(m, grid.n_steps):
        out[i + 1] = Ef @ out[i]
    for i in range(m, 0, -1):
        out[i - 1] = Eb @ out[i]
    return out


def initial_iterate(grid, spec, y0):
    """phi_0(t) = (0, e^{tB} y0, 0): the exact fixed point for zero nonlinearity."""
    vals = np.zeros((grid.n_steps + 1, spec.dim))
    vals[:, spec.slices[1]] = center_flow(grid, spec.B) @ np.asarray(y0, dtype=float)
    return Trajectory(grid, vals, spec.dims)


def tail_estimates(phi, spec, tc, sigma, delta):
    """Bounds at t = 0 on the X and Z integrals beyond the grid."""
    tail = TailModel(sigma_norm(phi, sigma), sigma.sigma_n, sigma.sigma_p)
    T = phi.grid.T_max
    return {
        "X": tail_bound("X", 0.0, T, tail, tc.K_x, delta[0], tc.alpha_x) if spec.n_x else 0.0,
        "Z": tail_bound("Z", 0.0, T, tail, tc.K_z, delta[2], tc.beta_z) if spec.n_z else 0.0,
    }


def _check_tails(est, tail_tol):
    worst = max(est.values())
    if worst > tail_tol:
        raise TailError(f"tail bound {worst:.3e} at t = 0 exceeds tail_tol {tail_tol:.1e}; increase T_max")


def apply_T(phi, y0, spec, tc, sigma, delta=None, tail_tol=None, flow=None):
    """One application of the Lyapunov-Perron operator on the grid of ``phi``.

    When ``delta`` and ``tail_tol`` are given, the analytic bounds on the
    truncated tails at t = 0 are checked and a :class:`TailError` raised if
    they exceed ``tail_tol``.
    """
    grid = phi.grid
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if y0.shape != (spec.n_y,):
        raise ValueError(f"y0 has shape {y0.shape}, expected ({spec.n_y},)")
    if delta is not None and tail_tol is not None:
        _check_tails(tail_estimates(phi, spec, tc, sigma, delta), tail_tol)
    U = phi.values
    sx, sy, sz = spec.slices
    out = np.empty_like(U)
    flow = center_flow(grid, spec.B) if flow is None else flow
    out[:, sy] = flow @ y0 + weighted_integrals("Y", grid, spec.G(U), spec.B)
    if spec.n_x:
        out[:, sx] = weighted_integrals("X", grid, spec.F(U), spec.A)
    if spec.n_z:
        out[:, sz] = -weighted_integrals("Z", grid, spec.H(U), spec.C)
    return Trajectory(grid, out, spec.dims)


def a_priori_iterations(first_step, delta_phi_value, tol):
    """Iteration count after which the Banach error bound falls below ``tol``."""
    if first_step <= tol or delta_phi_value <= 0:
        return 1
    if delta_phi_value >= 1:
        return math.inf
    k = math.log(tol * (1 - delta_phi_value) / first_step) / math.log(delta_phi_value)
    return math.ceil(k) + 1


@dataclass
class SolveResult:
    phi: Trajectory
    y0: np.ndarray
    iterations: int
    final_step_norm: float
    step_norms: list
    measured_rates: list
    phi_value: tuple
    delta_phi: float
    sigma: object
    tail: dict = field(default_factory=dict)
    iterates: Optional[list] = None
    conditions_enforced: bool = True

    @property
    def max_rate(self):
        return max(self.measured_rates) if self.measured_rates else 0.0

    def to_dict(self):
        return {
            "y0": self.y0.tolist(),
            "phi_x": self.phi_value[0].tolist(),
            "phi_z": self.phi_value[1].tolist(),
            "iterations": self.iterations,
            "final_step_norm": self.final_step_norm,
            "measured_rates": [float(r) for r in self.measured_rates],
            "max_rate": self.max_rate,
            "delta_phi": self.delta_phi if math.isfinite(self.delta_phi) else None,
            "T_max": self.phi.grid.T_max,
            "n_steps": self.phi.grid.n_steps,
            "tail_estimate": {k: float(v) for k, v in self.tail.items()},
            "conditions_enforced": self.conditions_enforced,
        }


def _noise_floor(phi, sigma):
    return 1e3 * np.finfo(float).eps * max(1.0, sigma_norm(phi, sigma))


def solve_fixed_point(y0, spec, tc, sigma, cfg=None, grid=None, initial=None, delta=None,
                      keep_iterates=False, n_steps=DEFAULT_N_STEPS, T_max=None):
    """Iterate the operator from ``initial`` (default ``initial_iterate``) to its fixed point.

    Stops when successive iterates differ by less than ``cfg.tol`` in the
    weighted norm. Raises :class:`ConvergenceError` when ``max_iters`` is
    exceeded, when the a-priori Banach iteration count is overrun, or when the
    measured contraction rate exceeds ``delta_phi + rate_slack`` for
    ``stall_window`` consecutive iterations.
    """
    cfg = cfg or FixedPointConfig()
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    delta = tuple(delta if delta is not None else (spec.lipschitz or (0.0, 0.0, 0.0)))
    report = delta_phi(tc, delta, sigma)
    dphi = report.delta_phi
    admissible = report.flags["C1"] and report.flags["C2"]
    if cfg.enforce_conditions and not admissible:
        raise ConditionError("; ".join(report.messages) or "weights are not admissible")
    if grid is None:
        amp = tc.K_y * float(np.max(np.abs(y0))) / (1 - dphi) if dphi < 1 else None
        grid = make_grid(tc, sigma, delta, amp, n_steps=n_steps, T_max=T_max, tail_tol=cfg.tail_tol)
    flow = center_flow(grid, spec.B)
    phi = initial if initial is not None else initial_iterate(grid, spec, y0)
    watch = admissible and dphi < 1
    steps, rates, iterates = [], [], [phi] if keep_iterates else None
    over = 0
    bound = math.inf
    for k in range(1, cfg.max_iters + 1):
        nxt = apply_T(phi, y0, spec, tc, sigma, delta=delta, tail_tol=cfg.tail_tol, flow=flow)
        step = sigma_norm(Trajectory(grid, nxt.values - phi.values, spec.dims), sigma)
        steps.append(step)
        if keep_iterates:
            iterates.append(nxt)
        if len(steps) >= 2 and steps[-2] > _noise_floor(phi, sigma):
            rate = step / steps[-2]
            rates.append(rate)
            over = over + 1 if (watch and rate > dphi + cfg.rate_slack) else 0
            if over >= cfg.stall_window:
                raise ConvergenceError(
                    f"measured rate {rate:.4f} exceeded delta_phi + slack = {dphi + cfg.rate_slack:.4f} "
                    f"for {over} consecutive iterations; a Lipschitz constant is probably underestimated"
                )
        if k == 1 and cfg.a_priori_check and watch:
            bound = a_priori_iterations(step, dphi, cfg.tol)
        phi = nxt
        if step < cfg.tol:
            break
        if k >= bound:
            raise ConvergenceError(
                f"no convergence after {k} iterations although the Banach bound allows {bound}"
            )
    else:
        raise ConvergenceError(f"max_iters = {cfg.max_iters} exceeded (last step {steps[-1]:.3e})")
    tails = tail_estimates(phi, spec, tc, sigma, delta)
    u0 = phi.at_zero()
    sx, _, sz = spec.slices
    return SolveResult(
        phi=phi,
        y0=y0,
        iterations=k,
        final_step_norm=steps[-1],
        step_norms=steps,
        measured_rates=rates,
        phi_value=(u0[sx].copy(), u0[sz].copy()),
        delta_phi=dphi,
        sigma=sigma,
        tail=tails,
        iterates=iterates,
        conditions_enforced=cfg.enforce_conditions,
    )


# -- manifold sampling -------------------------------------------------------


@dataclass
class ManifoldRecord:
    y0: np.ndarray
    phi_x: Optional[np.ndarray] = None
    phi_z: Optional[np.ndarray] = None
    iters: int = 0
    final_step_norm: float = math.nan
    max_rate: float = math.nan
    dphi_x: Optional[np.ndarray] = None
    dphi_z: Optional[np.ndarray] = None
    error: Optional[str] = None

    @property
    def ok(self):
        return self.error is None

    @property
    def phi(self):
        return np.concatenate([self.phi_x, self.phi_z])

    def to_dict(self):
        d = {
            "y0": self.y0.tolist(),
            "phi_x": None if self.phi_x is None else self.phi_x.tolist(),
            "phi_z": None if self.phi_z is None else self.phi_z.tolist(),
            "iters": self.iters,
            "final_step_norm": _num(self.final_step_norm),
            "max_rate": _num(self.max_rate),
        }
        if self.dphi_x is not None:
            d["dphi_x"] = self.dphi_x.tolist()
            d["dphi_z"] = self.dphi_z.tolist()
        if self.error:
            d["error"] = self.error
        return d


def _num(v):
    return float(v) if v is not None and math.isfinite(v) else None


@dataclass
class ManifoldSample:
    records: list
    lipschitz_bound: float
    quotients: np.ndarray
    delta_phi: float

    @property
    def max_quotient(self):
        return float(np.max(self.quotients)) if self.quotients.size else 0.0

    @property
    def lipschitz_violations(self):
        return int(np.sum(self.quotients > self.lipschitz_bound))

    @property
    def failures(self):
        return [r for r in self.records if not r.ok]

    def to_dict(self):
        return {
            "points": [r.to_dict() for r in self.records],
            "lipschitz": {
                "bound": _num(self.lipschitz_bound),
                "max_quotient": self.max_quotient,
                "violations": self.lipschitz_violations,
                "pairs": int(self.quotients.size),
            },
            "delta_phi": _num(self.delta_phi),
            "failures": len(self.failures),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def write_csv(self, path):
        ok = [r for r in self.records]
        if not ok:
            return
        n_y = ok[0].y0.size
        first = next((r for r in ok if r.ok), None)
        n_x = first.phi_x.size if first else 0
        n_z = first.phi_z.size if first else 0
        with_d = first is not None and first.dphi_x is not None
        header = [f"y0_{i + 1}" for i in range(n_y)]
        header += [f"phi_x_{i + 1}" for i in range(n_x)] + [f"phi_z_{i + 1}" for i in range(n_z)]
        if with_d:
            header += [f"dphi_x_{i + 1}_{j + 1}" for i in range(n_x) for j in range(n_y)]
            header += [f"dphi_z_{i + 1}_{j + 1}" for i in range(n_z) for j in range(n_y)]
        header += ["iters", "final_step_norm", "max_rate", "error"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in self.records:
                row = [repr(float(v)) for v in r.y0]
                if r.ok:
                    row += [repr(float(v)) for v in np.concatenate([r.phi_x, r.phi_z])]
                    if with_d:
                        row += [repr(float(v)) for v in np.concatenate([r.dphi_x.ravel(), r.dphi_z.ravel()])]
                else:
                    row += [""] * (len(header) - n_y - 4)
                row += [r.iters, r.final_step_norm, r.max_rate, r.error or ""]
                w.writerow(row)


def lipschitz_quotients(records):
    """All pairwise |Phi(y_i) - Phi(y_j)| / |y_i - y_j| among successful records."""
    ok = [r for r in records if r.ok]
    q = []
    for i in range(len(ok)):
        for j in range(i + 1, len(ok)):
            dy = np.max(np.abs(ok[i].y0 - ok[j].y0))
            if dy == 0:
                continue
            dphi = ok[i].phi - ok[j].phi
            q.append(float(np.max(np.abs(dphi))) / dy if dphi.size else 0.0)
    return np.asarray(q)


def sample_manifold(y_grid, spec, tc, sigma, cfg=None, delta=None, workers=1, with_derivative=False,
                    n_steps=DEFAULT_N_STEPS, T_max=None):
    """Solve independently at each center point; one failure does not stop the sweep."""
    cfg = cfg or FixedPointConfig()
    ys = [np.atleast_1d(np.asarray(y, dtype=float)) for y in y_grid]
    delta = tuple(delta if delta is not None else (spec.lipschitz or (0.0, 0.0, 0.0)))
    report = delta_phi(tc, delta, sigma)
    dphi = report.delta_phi
    amp_y = max((float(np.max(np.abs(y))) for y in ys), default=0.0)
    amp = tc.K_y * amp_y / (1 - dphi) if dphi < 1 else None
    grid = make_grid(tc, sigma, delta, amp, n_steps=n_steps, T_max=T_max, tail_tol=cfg.tail_tol)

    def one(y0):
        rec = ManifoldRecord(y0=y0)
        try:
            res = solve_fixed_point(y0, spec, tc, sigma, cfg, grid=grid, delta=delta)
            rec.phi_x, rec.phi_z = res.phi_value
            rec.iters, rec.final_step_norm, rec.max_rate = res.iterations, res.final_step_norm, res.max_rate
            if with_derivative:
                from .regularity import solve_T1_fixed_point

                _, D = solve_T1_fixed_point(y0, res.phi, spec, tc, sigma, cfg, delta=delta)
                rec.dphi_x, rec.dphi_z = D[: spec.n_x], D[spec.n_x :]
        except LypmfdError as exc:
            log.warning("solve failed at y0 = %s: %s", y0, exc)
            rec.error = f"{type(exc).__name__}: {exc}"
        return rec

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, ys))
    else:
        records = [one(y) for y in ys]
    return ManifoldSample(records, report.lipschitz_bound, lipschitz_quotients(records), dphi)
