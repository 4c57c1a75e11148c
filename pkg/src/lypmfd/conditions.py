"""Trichotomy constants, gap conditions and the contraction rate.

Rates are proposed from eigenvalue real parts and the constants K are then
computed on a verification grid, so the exponential bounds on the linear flow
are checked rather than assumed. Absent components (n_x = 0 or n_z = 0) carry
infinite rates, which makes every inequality involving them hold trivially and
every ratio involving them vanish.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConditionError, TrichotomyError
from .trajectory import matrix_exp

__all__ = [
    "TrichotomyConstants",
    "SigmaParameters",
    "GapReport",
    "verification_grid",
    "derive_constants",
    "derive_trichotomy",
    "verify_trichotomy",
    "check_conditions",
    "choose_sigma",
    "delta_phi",
    "gap_report",
    "REQUIRED_FLAGS",
    "K_LIMIT",
    "DEFAULT_ETA",
]

K_LIMIT = 1e6
DEFAULT_ETA = 0.05
REQUIRED_FLAGS = ("A1", "A2", "A3", "C1", "C2")


@dataclass(frozen=True)
class TrichotomyConstants:
    alpha_x: float
    alpha_y: float
    beta_y: float
    beta_z: float
    K_x: float = 1.0
    K_y: float = 1.0
    K_z: float = 1.0

    def __post_init__(self):
        for name in ("K_x", "K_y", "K_z"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1 (the bound at t = 0 forces it)")

    @property
    def ordered(self):
        return self.alpha_x < self.alpha_y <= self.beta_y < self.beta_z

    def to_dict(self):
        return {k: _finite_or_none(v) for k, v in asdict(self).items()}


def _finite_or_none(v):
    return float(v) if math.isfinite(v) else None


@dataclass(frozen=True)
class SigmaParameters:
    """Weights sigma_n (t <= 0) and sigma_p (t >= 0) plus the piecewise helpers."""

    sigma_n: float
    sigma_p: float
    alpha_y: float = 0.0
    beta_y: float = 0.0
    ky_dy: float = 0.0

    def sigma(self, t):
        return np.where(np.asarray(t) >= 0, self.sigma_p, self.sigma_n)

    def c(self, t):
        return np.where(np.asarray(t) >= 0, self.alpha_y, self.beta_y)

    def k(self, t):
        return np.where(np.asarray(t) >= 0, self.ky_dy, -self.ky_dy)

    def v(self, t):
        return self.c(t) + self.k(t)

    def to_dict(self):
        return {"sigma_n": _finite_or_none(self.sigma_n), "sigma_p": _finite_or_none(self.sigma_p)}


@dataclass
class GapReport:
    ratios: dict = field(default_factory=dict)
    delta_phi: float = math.nan
    lipschitz_bound: float = math.nan
    flags: dict = field(default_factory=dict)
    messages: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.flags.get(f, False) for f in REQUIRED_FLAGS)

    def merge(self, other):
        self.ratios.update(other.ratios)
        if not math.isnan(other.delta_phi):
            self.delta_phi = other.delta_phi
            self.lipschitz_bound = other.lipschitz_bound
        self.flags.update(other.flags)
        self.messages.extend(other.messages)
        self.constants.update(other.constants)
        return self

    def to_dict(self):
        return {
            "ratios": {k: _finite_or_none(v) for k, v in self.ratios.items()},
            "delta_phi": _finite_or_none(self.delta_phi),
            "lipschitz_bound": _finite_or_none(self.lipschitz_bound),
            "flags": dict(self.flags),
            "passed": self.passed,
            "messages": list(self.messages),
            "constants": self.constants,
        }


def verification_grid(T_ver=50.0, n=512):
    return np.linspace(0.0, T_ver, n)


def _inf_norms(M, ts, sign):
    return np.array([np.abs(matrix_exp(M, sign * t)).sum(axis=1).max() for t in ts])


def _grid_constant(norms, ts, rate, sign):
    """Smallest K with norms <= K exp(sign * rate * t); flags growth at the horizon."""
    with np.errstate(over="ignore"):
        g = norms * np.exp(-sign * rate * ts)
    K = float(np.max(g))
    half = len(ts) // 2
    growing = K > 1.01 * float(np.max(g[: half + 1]))
    # rounding in exp(tM) exp(-rate t) can leave K a few ulp above 1
    return (1.0 if K <= 1 + 1e-12 else K), growing


def derive_constants(M, kind, t_grid=None, eta=0.0):
    """Rates from eigenvalue real parts and the grid-verified constant K.

    ``kind`` is ``"stable"``, ``"center"`` or ``"unstable"``. The proposed
    rates are widened by ``eta`` (decay rates raised, growth rates lowered).
    Returns ``(rates, K)`` where ``rates`` is ``(alpha_x,)``,
    ``(alpha_y, beta_y)`` or ``(beta_z,)``.
    """
    M = np.asarray(M, dtype=float)
    ts = verification_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    if M.size == 0:
        return {"stable": (-math.inf,), "center": (-math.inf, math.inf), "unstable": (math.inf,)}[kind], 1.0
    re = np.linalg.eigvals(M).real
    if kind == "stable":
        rates = (float(re.max()) + eta,)
        checks = [(_inf_norms(M, ts, 1), rates[0], 1)]
    elif kind == "center":
        rates = (float(re.min()) - eta, float(re.max()) + eta)
        checks = [(_inf_norms(M, ts, 1), rates[0], 1), (_inf_norms(M, ts, -1), rates[1], -1)]
    elif kind == "unstable":
        rates = (float(re.min()) - eta,)
        checks = [(_inf_norms(M, ts, -1), rates[0], -1)]
    else:
        raise ValueError(f"unknown block kind {kind!r}")
    K, growing = 1.0, False
    for norms, rate, sign in checks:
        k, g = _grid_constant(norms, ts, rate, sign)
        K, growing = max(K, k), growing or g
    if K > K_LIMIT or growing:
        raise TrichotomyError(
            f"{kind} rates {rates} do not bound exp(tM) on [0, {ts[-1]:g}] "
            f"(K = {K:.3g}{', still growing at the horizon' if growing else ''}); "
            f"the block is probably defective: widen the rate by a margin eta"
        )
    return rates, K


def derive_trichotomy(A, B, C, t_grid=None, eta=DEFAULT_ETA):
    """Derive all constants, retrying each block with margin ``eta`` if needed.

    Returns ``(TrichotomyConstants, notes)``.
    """
    notes = []
    out = {}
    for key, M, kind in (("x", A, "stable"), ("y", B, "center"), ("z", C, "unstable")):
        try:
            out[key] = derive_constants(M, kind, t_grid)
        except TrichotomyError as exc:
            if eta <= 0:
                raise
            out[key] = derive_constants(M, kind, t_grid, eta=eta)
            notes.append(f"{kind} block widened by eta = {eta}: {exc}")
    (ax,), Kx = out["x"]
    (ay, by), Ky = out["y"]
    (bz,), Kz = out["z"]
    return TrichotomyConstants(ax, ay, by, bz, Kx, Ky, Kz), notes


def verify_trichotomy(A, B, C, tc, t_grid=None, rtol=1e-9):
    """Check the four exponential bounds at every grid time. Returns (ok, worst ratio)."""
    ts = verification_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    worst = 0.0
    for M, rate, K, sign in (
        (A, tc.alpha_x, tc.K_x, 1),
        (B, tc.alpha_y, tc.K_y, 1),
        (B, tc.beta_y, tc.K_y, -1),
        (C, tc.beta_z, tc.K_z, -1),
    ):
        M = np.asarray(M, dtype=float)
        if M.size == 0:
            continue
        with np.errstate(over="ignore"):
            ratio = _inf_norms(M, ts, sign) / (K * np.exp(sign * rate * ts))
        worst = max(worst, float(np.max(ratio)))
    return worst <= 1 + rtol, worst


def check_conditions(tc, delta):
    """Flags for the ordering of the rates, the gap condition and its restriction.

    Never raises: failures are reported in the flags.
    """
    dx, dy, dz = delta
    kx, ky, kz = tc.K_x * dx, tc.K_y * dy, tc.K_z * dz
    gap_lower = tc.beta_y - tc.alpha_x
    gap_upper = tc.beta_z - tc.alpha_y
    a3 = (gap_lower > kx + ky) and (gap_upper > ky + kz)
    a6 = (ky + tc.alpha_y <= 0) and (tc.beta_y - ky >= 0)
    r = GapReport(flags={"A1_order": tc.ordered, "A3": a3, "A6": a6})
    if not tc.ordered:
        r.messages.append("rates violate alpha_x < alpha_y <= beta_y < beta_z")
    if not a3:
        r.messages.append(
            f"gap condition fails: beta_y - alpha_x = {gap_lower:.6g} vs K_x d_x + K_y d_y = {kx + ky:.6g}; "
            f"beta_z - alpha_y = {gap_upper:.6g} vs K_y d_y + K_z d_z = {ky + kz:.6g}"
        )
    if not a6:
        r.messages.append("gap restriction fails: need K_y d_y + alpha_y <= 0 and beta_y - K_y d_y >= 0")
    r.constants.update({"trichotomy": tc.to_dict(), "delta": [float(d) for d in delta]})
    return r


def _sigma_intervals(tc, delta):
    dx, dy, dz = delta
    ky = tc.K_y * dy
    lo_n = max(tc.alpha_x + tc.K_x * dx, tc.alpha_x)
    hi_n = min(tc.beta_y - ky, tc.alpha_y)
    lo_p = max(tc.alpha_y + ky, tc.beta_y)
    hi_p = min(tc.beta_z - tc.K_z * dz, tc.beta_z)
    return (lo_n, hi_n), (lo_p, hi_p)


def choose_sigma(tc, delta, sigma_n=None, sigma_p=None):
    """Midpoints of the admissible weight intervals (intersected with the rate ordering).

    With an absent stable (unstable) part the interval is unbounded below
    (above); the weight is then placed ``max(2 K_y d_y, half the other
    interval)`` beyond the finite endpoint. Explicit overrides are accepted
    as given.
    """
    ky = tc.K_y * delta[1]
    (lo_n, hi_n), (lo_p, hi_p) = _sigma_intervals(tc, delta)
    if sigma_n is None or sigma_p is None:
        if not lo_n < hi_n:
            raise ConditionError(
                f"no admissible sigma_n: interval ({lo_n:.6g}, {hi_n:.6g}) is empty (gap condition violated)"
            )
        if not lo_p < hi_p:
            raise ConditionError(
                f"no admissible sigma_p: interval ({lo_p:.6g}, {hi_p:.6g}) is empty (gap condition violated)"
            )
    halves = [(hi - lo) / 2 for lo, hi in ((lo_n, hi_n), (lo_p, hi_p)) if math.isfinite(hi - lo)]
    offset = max([2 * ky] + halves) or 0.5
    if sigma_n is None:
        sigma_n = (lo_n + hi_n) / 2 if math.isfinite(lo_n) else hi_n - offset
    if sigma_p is None:
        sigma_p = (lo_p + hi_p) / 2 if math.isfinite(hi_p) else lo_p + offset
    return SigmaParameters(float(sigma_n), float(sigma_p), tc.alpha_y, tc.beta_y, ky)


def fallback_sigma(tc, delta):
    """Weights for a run whose gap condition fails: midpoints of the raw rate gaps."""
    try:
        return choose_sigma(tc, delta)
    except ConditionError:
        pass
    zero = (0.0, 0.0, 0.0)
    s = choose_sigma(tc, zero)
    ky = tc.K_y * delta[1]
    sigma_p = s.sigma_p if math.isfinite(tc.beta_z) else max(s.sigma_p, tc.alpha_y + 2 * ky)
    sigma_n = s.sigma_n if math.isfinite(tc.alpha_x) else min(s.sigma_n, tc.beta_y - 2 * ky)
    return SigmaParameters(sigma_n, sigma_p, tc.alpha_y, tc.beta_y, ky)


def _ratio(num, den):
    if num == 0:
        return 0.0
    if den <= 0:
        return math.inf
    return num / den


def delta_phi(tc, delta, sigma):
    """The four contraction ratios, their maximum and the manifold Lipschitz bound."""
    dx, dy, dz = delta
    sn, sp = sigma.sigma_n, sigma.sigma_p
    ratios = {
        "y_past": _ratio(tc.K_y * dy, tc.beta_y - sn),
        "y_future": _ratio(tc.K_y * dy, sp - tc.alpha_y),
        "z": _ratio(tc.K_z * dz, tc.beta_z - sp),
        "x": _ratio(tc.K_x * dx, sn - tc.alpha_x),
    }
    dphi = max(ratios.values())
    c1 = tc.alpha_x < sn < tc.alpha_y <= tc.beta_y < sp < tc.beta_z
    c2 = (
        tc.alpha_x + tc.K_x * dx < sn < tc.beta_y - tc.K_y * dy
        and tc.alpha_y + tc.K_y * dy < sp < tc.beta_z - tc.K_z * dz
    )
    r = GapReport(
        ratios=ratios,
        delta_phi=dphi,
        lipschitz_bound=tc.K_y * math.exp(dphi) if math.isfinite(dphi) else math.inf,
        flags={"C1": c1, "C2": c2},
    )
    if not c1:
        r.messages.append(f"weights violate alpha_x < sigma_n < alpha_y <= beta_y < sigma_p < beta_z ({sn:.6g}, {sp:.6g})")
    if not c2:
        r.messages.append(f"weights violate the admissible intervals ({sn:.6g}, {sp:.6g}); delta_phi = {dphi:.6g}")
    r.constants["sigma"] = sigma.to_dict()
    return r


def gap_report(tc, delta, sigma=None):
    """Combined report; chooses sigma when not given (falls back if the gap fails)."""
    report = check_conditions(tc, delta)
    if sigma is None:
        try:
            sigma = choose_sigma(tc, delta)
        except ConditionError as exc:
            report.messages.append(str(exc))
            sigma = fallback_sigma(tc, delta)
    return report.merge(delta_phi(tc, delta, sigma)), sigma
