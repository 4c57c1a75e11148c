"""Independent checks of computed manifolds.

A fixed-step RK4 integrator serves as the reference for the flow. Invariance
is measured by evolving an on-manifold point and re-solving the manifold map
at the evolved center coordinate, so interpolation error never enters it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import IntegrationError, LypmfdError
from .perron import FixedPointConfig, sample_manifold, solve_fixed_point
from .system import StateVector, compose

log = logging.getLogger(__name__)

__all__ = [
    "Segment",
    "integrate",
    "ManifoldMap",
    "InvarianceResult",
    "invariance_check",
    "ode_residual_check",
    "spotcheck_a2",
    "reduced_dynamics_compare",
    "ValidationReport",
    "run_validation",
    "INVARIANCE_TOL",
]

INVARIANCE_TOL = 1e-4


@dataclass
class Segment:
    t: np.ndarray
    values: np.ndarray

    def at(self, tc):
        """State at the node nearest ``tc``."""
        return self.values[int(np.argmin(np.abs(self.t - tc)))]


def integrate(spec, u0, t_span, h):
    """Classical fixed-step RK4 on [t0, t1]; the step is shrunk to land on t1."""
    if not h > 0:
        raise ValueError("step h must be positive")
    t0, t1 = map(float, t_span)
    if not (math.isfinite(t0) and math.isfinite(t1)):
        raise ValueError("t_span must be finite")
    u = compose(u0) if isinstance(u0, StateVector) else np.asarray(u0, dtype=float).copy()
    n = max(1, int(math.ceil(abs(t1 - t0) / h - 1e-9)))
    dt = (t1 - t0) / n
    ts = t0 + dt * np.arange(n + 1)
    ts[-1] = t1
    out = np.empty((n + 1, u.size))
    out[0] = u

    def f(v):
        return spec.rhs_batch(v[None, :])[0]

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            k1 = f(u)
            k2 = f(u + 0.5 * dt * k1)
            k3 = f(u + 0.5 * dt * k2)
            k4 = f(u + dt * k3)
            u = u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(u)):
                raise IntegrationError("state became non-finite", time=float(ts[i + 1]))
            out[i + 1] = u
    return Segment(ts, out)


class ManifoldMap:
    """y -> (Phi_x(y), Phi_z(y)) by a fresh fixed-point solve per query."""

    def __init__(self, spec, tc, sigma, cfg=None, delta=None, n_steps=None, T_max=None):
        self.spec, self.tc, self.sigma = spec, tc, sigma
        self.cfg = cfg or FixedPointConfig()
        self.delta = delta
        self.kw = {k: v for k, v in (("n_steps", n_steps), ("T_max", T_max)) if v is not None}
        self.solves = 0

    def solve(self, y):
        self.solves += 1
        return solve_fixed_point(np.atleast_1d(y), self.spec, self.tc, self.sigma, self.cfg,
                                 delta=self.delta, **self.kw)

    def __call__(self, y):
        return self.solve(y).phi_value

    def lift(self, y):
        """The manifold point over y as a flat state."""
        px, pz = self(y)
        return np.concatenate([px, np.atleast_1d(y).astype(float), pz])


@dataclass
class InvarianceResult:
    max_residual: float
    checkpoints: list
    residuals: list
    truncated_at: Optional[float] = None

    def to_dict(self):
        return {
            "max_residual": self.max_residual,
            "checkpoints": [float(t) for t in self.checkpoints],
            "residuals": [float(r) for r in self.residuals],
            "truncated_at": self.truncated_at,
        }


def invariance_check(y0, manifold, spec, horizon, h=0.01, n_checkpoints=8, u0=None, plateau=None):
    """Evolve a point of the manifold and measure its distance from the graph.

    The start is ``(Phi_x(y0), y0, Phi_z(y0))`` unless ``u0`` is given. At
    ``n_checkpoints`` equally spaced times (spacing horizon / n_checkpoints)
    the distance |(x, z) - Phi(y)| is computed by re-solving at y(t). When
    ``plateau`` is set and the Euclidean norm of the state exceeds it, the
    check stops there with a warning: the cutoff no longer leaves the system
    unmodified.
    """
    u0 = manifold.lift(y0) if u0 is None else compose(u0) if isinstance(u0, StateVector) else np.asarray(u0, float)
    seg = integrate(spec, u0, (0.0, horizon), h)
    sx, sy, sz = spec.slices
    truncated = None
    if plateau is not None:
        out = np.linalg.norm(seg.values, axis=1) > plateau
        if np.any(out):
            truncated = float(seg.t[int(np.argmax(out))])
            log.warning("trajectory leaves the cutoff plateau at t = %.4g; invariance check truncated", truncated)
    times, res = [], []
    for tc in np.linspace(0.0, horizon, n_checkpoints + 1):
        if truncated is not None and tc >= truncated:
            break
        u = seg.at(tc)
        px, pz = manifold(u[sy])
        r = np.concatenate([u[sx] - px, u[sz] - pz])
        times.append(float(tc))
        res.append(float(np.max(np.abs(r))) if r.size else 0.0)
    return InvarianceResult(max(res) if res else 0.0, times, res, truncated)


def ode_residual_check(phi, spec):
    """Max over nodes with |t| <= T_max/2 of |central difference - rhs(phi(t))|."""
    t = phi.grid.nodes
    h = phi.grid.h
    idx = np.nonzero(np.abs(t) <= phi.grid.T_max / 2 + 1e-12)[0]
    idx = idx[(idx > 0) & (idx < t.size - 1)]
    U = phi.values
    deriv = (U[idx + 1] - U[idx - 1]) / (2 * h)
    rhs = spec.rhs_batch(U[idx])
    return float(np.max(np.abs(deriv - rhs)))


def spotcheck_a2(spec, box, pairs=1000, seed=0, declared=None):
    """Largest sampled Lipschitz quotient of F, G and H over random pairs in ``box``.

    Returns ``{"F": q, "G": q, "H": q, "violations": [...]}`` where a violation
    is a quotient above the declared constant.
    """
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    lo, hi = box[:, 0], box[:, 1]
    rng = np.random.default_rng(seed)
    U1 = lo + (hi - lo) * rng.random((pairs, lo.size))
    U2 = lo + (hi - lo) * rng.random((pairs, lo.size))
    du = np.abs(U1 - U2).max(axis=1)
    keep = du > 0
    out = {}
    for name, m in (("F", spec.F), ("G", spec.G), ("H", spec.H)):
        if m.n_out == 0 or not np.any(keep):
            out[name] = 0.0
            continue
        d = np.abs(m(U1[keep]) - m(U2[keep])).max(axis=1)
        out[name] = float(np.max(d / du[keep]))
    declared = declared if declared is not None else spec.lipschitz
    viol = []
    if declared is not None:
        for name, q, d in zip("FGH", (out["F"], out["G"], out["H"]), declared):
            if q > d:
                viol.append(name)
    out["violations"] = viol
    return out


def reduced_dynamics_compare(y0, manifold, spec, T, h=0.01, n_checkpoints=10, n_nodes=41):
    """|y_full(t) - y_reduced(t)| at checkpoints.

    The reduced system y' = By + G(Phi_x(y), y, Phi_z(y)) needs Phi at every
    RK stage. For a scalar center direction Phi is sampled on the range
    visited by the full trajectory and replaced by a cubic spline; otherwise
    it is re-solved at every stage.
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    full = integrate(spec, manifold.lift(y0), (0.0, T), h)
    sx, sy, sz = spec.slices
    if spec.n_y == 1:
        ys = full.values[:, sy][:, 0]
        lo, hi = float(ys.min()), float(ys.max())
        pad = 0.1 * max(hi - lo, 1e-3)
        nodes = np.linspace(lo - pad, hi + pad, n_nodes)
        vals = np.array([np.concatenate(manifold([y])) for y in nodes])
        spline = CubicSpline(nodes, vals, axis=0) if vals.shape[1] else None

        def phi_of(y):
            v = spline(y[0]) if spline is not None else np.zeros(0)
            return v[: spec.n_x], v[spec.n_x :]
    else:
        phi_of = manifold

    def rhs(y):
        px, pz = phi_of(y)
        u = np.concatenate([px, y, pz])[None, :]
        return spec.B @ y + spec.G(u)[0]

    n = max(1, int(math.ceil(T / h - 1e-9)))
    dt = T / n
    y = y0.copy()
    red = [y.copy()]
    for _ in range(n):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        red.append(y.copy())
    red = np.array(red)
    ts = dt * np.arange(n + 1)
    out_t, out_d = [], []
    for tc in np.linspace(0.0, T, n_checkpoints + 1):
        i = int(np.argmin(np.abs(ts - tc)))
        out_t.append(float(ts[i]))
        out_d.append(float(np.max(np.abs(full.values[i, sy] - red[i]))))
    return out_t, out_d


@dataclass
class ValidationReport:
    invariance_max_residual: float = 0.0
    ode_residual: float = 0.0
    lipschitz_violations: int = 0
    contraction_violations: int = 0
    a2_spotcheck_max_quotient: float = 0.0
    details: dict = field(default_factory=dict)
    hard_failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.hard_failures

    def to_dict(self):
        return {
            "invariance_max_residual": self.invariance_max_residual,
            "ode_residual": self.ode_residual,
            "lipschitz_violations": self.lipschitz_violations,
            "contraction_violations": self.contraction_violations,
            "a2_spotcheck_max_quotient": self.a2_spotcheck_max_quotient,
            "passed": self.passed,
            "hard_failures": list(self.hard_failures),
            "details": self.details,
        }


def run_validation(spec, tc, sigma, y0, horizon=5.0, cfg=None, delta=None, box=None, seed=0, h=0.01,
                   plateau=None, invariance_tol=INVARIANCE_TOL, spot_pairs=2000, n_steps=None):
    """The full suite around one center point."""
    cfg = cfg or FixedPointConfig()
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    rep = ValidationReport()
    mm = ManifoldMap(spec, tc, sigma, cfg, delta, n_steps=n_steps)
    res = mm.solve(y0)
    slack_rate = res.delta_phi + cfg.rate_slack
    rep.contraction_violations = sum(r > slack_rate for r in res.measured_rates) if res.delta_phi < 1 else 0
    rep.ode_residual = ode_residual_check(res.phi, spec)
    rep.details["solve"] = res.to_dict()
    try:
        inv = invariance_check(y0, mm, spec, horizon, h, plateau=plateau)
        rep.invariance_max_residual = inv.max_residual
        rep.details["invariance"] = inv.to_dict()
        if inv.max_residual > invariance_tol:
            rep.hard_failures.append(f"invariance residual {inv.max_residual:.3e} > {invariance_tol:.1e}")
    except LypmfdError as exc:
        rep.hard_failures.append(f"invariance check failed: {exc}")
        rep.details["invariance"] = {"error": str(exc)}

    scale = max(float(np.max(np.abs(y0))), 0.05)
    offsets = np.linspace(-1.0, 1.0, 9) * 0.5 * scale
    grid = [y0 + o for o in offsets]
    sample = sample_manifold(grid, spec, tc, sigma, cfg, delta=delta, **({} if n_steps is None else {"n_steps": n_steps}))
    rep.lipschitz_violations = sample.lipschitz_violations
    rep.details["lipschitz"] = sample.to_dict()["lipschitz"]
    if rep.lipschitz_violations:
        rep.hard_failures.append(f"{rep.lipschitz_violations} Lipschitz quotient(s) above the bound")
    if rep.contraction_violations:
        rep.hard_failures.append(f"{rep.contraction_violations} iteration rate(s) above delta_phi + slack")

    if box is not None:
        spot = spotcheck_a2(spec, box, spot_pairs, seed, declared=delta)
        rep.a2_spotcheck_max_quotient = max(spot["F"], spot["G"], spot["H"])
        rep.details["a2_spotcheck"] = spot
        if spot["violations"]:
            rep.hard_failures.append(f"sampled Lipschitz quotient exceeds the declared constant for {spot['violations']}")
    return rep
