"""Discretized trajectory space with the two-sided exponential weight.

A trajectory lives on a symmetric grid ``t_i = -T + i h`` and is measured in
the weighted sup norm  ``sup_t exp(-sigma(t) t) |phi(t)|`` with
``sigma(t) = sigma_p`` for t >= 0 and ``sigma_n`` for t <= 0.

The integrals of the Lyapunov-Perron operator are evaluated with the
composite trapezoid rule. :func:`weighted_integral` sums the rule directly at a
single time; :func:`weighted_integrals` produces the same sums at every node
with an O(N) recurrence that propagates the partial integral by ``exp(hM)``.
The parts of the improper integrals beyond the grid are not added; they are
bounded analytically by :func:`tail_bound`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.signal import lfilter

from .errors import DimensionError, LypmfdError, TailError

__all__ = [
    "TimeGrid",
    "Trajectory",
    "TailModel",
    "sigma_weights",
    "sigma_norm",
    "weighted_sup",
    "matrix_exp",
    "weighted_integral",
    "weighted_integrals",
    "tail_bound",
    "interpolate",
    "write_trajectory_csv",
]


@dataclass(frozen=True)
class TimeGrid:
    T_max: float
    n_steps: int

    def __post_init__(self):
        if not self.T_max > 0:
            raise ValueError("T_max must be positive")
        if self.n_steps < 2 or self.n_steps % 2:
            raise ValueError("n_steps must be an even integer >= 2")

    @property
    def h(self):
        return 2.0 * self.T_max / self.n_steps

    @property
    def mid(self):
        return self.n_steps // 2

    @property
    def nodes(self):
        t = -self.T_max + self.h * np.arange(self.n_steps + 1)
        t[self.mid] = 0.0
        t[-1] = self.T_max
        return t

    def refined(self, factor=2):
        return TimeGrid(self.T_max, self.n_steps * factor)


@dataclass(frozen=True)
class Trajectory:
    """Node values of a candidate trajectory, one state per row."""

    grid: TimeGrid
    values: np.ndarray
    dims: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[0] != self.grid.n_steps + 1:
            raise DimensionError(f"{v.shape[0]} values for {self.grid.n_steps + 1} nodes")
        if v.ndim < 2 or v.shape[1] != sum(self.dims):
            raise DimensionError(f"values have shape {v.shape}, expected state size {sum(self.dims)}")
        if not np.all(np.isfinite(v)):
            raise LypmfdError("trajectory values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def t(self):
        return self.grid.nodes

    def component(self, name):
        n_x, n_y, _ = self.dims
        return {
            "x": self.values[:, :n_x],
            "y": self.values[:, n_x : n_x + n_y],
            "z": self.values[:, n_x + n_y :],
        }[name]

    def at_zero(self):
        return self.values[self.grid.mid]


@dataclass(frozen=True)
class TailModel:
    """Beyond the grid, |phi(t)| <= amplitude * exp(rate * t), rate = left/right."""

    amplitude: float
    left_rate: float
    right_rate: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("tail amplitude must be nonnegative")


def sigma_weights(t, sigma):
    """Weights exp(-sigma(t) t); both branches give 1 at t = 0."""
    t = np.asarray(t, dtype=float)
    rate = np.where(t >= 0, sigma.sigma_p, sigma.sigma_n)
    return np.exp(-rate * t)


def weighted_sup(t, pointwise_norms, sigma):
    if pointwise_norms.size == 0:
        return 0.0
    return float(np.max(sigma_weights(t, sigma) * pointwise_norms))


def _node_norms(values):
    """Max-norm of each state, or infinity-induced norm of each matrix."""
    v = np.asarray(values)
    if v.shape[1] == 0:
        return np.zeros(v.shape[0])
    if v.ndim == 2:
        return np.abs(v).max(axis=1)
    return np.abs(v).sum(axis=2).max(axis=1)


def sigma_norm(phi, sigma):
    """Weighted sup norm of a trajectory (or of a matrix-valued trajectory)."""
    return weighted_sup(phi.grid.nodes, _node_norms(phi.values), sigma)


def matrix_exp(M, t=1.0):
    """exp(tM) by scaling and squaring with a Pade core."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros((0, 0))
    with np.errstate(over="ignore", invalid="ignore"):
        E = scipy.linalg.expm(t * M)
    if not np.all(np.isfinite(E)):
        raise OverflowError(f"exp(tM) overflows at t = {t}")
    return E


def tail_bound(kind, t, T_max, tail, K, delta, rate):
    """Bound on the part of the improper integral beyond the grid.

    For ``kind == "X"`` this bounds |int_{-inf}^{-T} e^{(t-s)A} F(phi(s)) ds|
    using |e^{tA}| <= K e^{rate t}, |F(u)| <= delta |u| and the left tail rate;
    ``"Z"`` mirrors it on [T, inf). ``"Y"`` has finite limits and no tail.
    """
    if kind == "Y" or delta == 0 or tail.amplitude == 0 or not math.isfinite(rate):
        return 0.0
    if kind == "X":
        gap = tail.left_rate - rate
        if gap <= 0:
            return math.inf
        return K * delta * tail.amplitude * math.exp(rate * t - gap * T_max) / gap
    if kind == "Z":
        gap = rate - tail.right_rate
        if gap <= 0:
            return math.inf
        return K * delta * tail.amplitude * math.exp(rate * t - gap * T_max) / gap
    raise ValueError(f"unknown integral kind {kind!r}")


def _trapezoid_points(grid, integrand, a, b):
    """Nodes strictly inside (a, b) plus the endpoints, with integrand values."""
    t = grid.nodes
    f = np.asarray(integrand, dtype=float)
    lo, hi = min(a, b), max(a, b)
    inside = (t > lo) & (t < hi)
    ts = np.concatenate([[lo], t[inside], [hi]])
    fl = _interp_rows(t, f, lo)
    fh = _interp_rows(t, f, hi)
    fs = np.concatenate([fl[None], f[inside], fh[None]])
    return ts, fs


def _interp_rows(t, f, s):
    i = int(np.clip(np.searchsorted(t, s) - 1, 0, len(t) - 2))
    w = (s - t[i]) / (t[i + 1] - t[i])
    if w <= 0:
        return f[i]
    if w >= 1:
        return f[i + 1]
    return (1 - w) * f[i] + w * f[i + 1]


def weighted_integral(kind, t, grid, integrand, M, tail=None, K=1.0, delta=0.0, rate=math.nan,
                      tail_tol=None):
    """Trapezoid sum of one Lyapunov-Perron integral at a single time ``t``.

    ``kind`` selects the integral:

    * ``"Y"``: int_0^t e^{(t-s)M} f(s) ds
    * ``"Z"``: int_t^inf e^{(t-s)M} f(s) ds (grid part [t, T])
    * ``"X"``: int_{-inf}^t e^{(t-s)M} f(s) ds (grid part [-T, t])

    ``integrand`` holds f at the grid nodes, shape ``(N+1, n, ...)``. Returns
    ``(value, tail_estimate)``; the tail estimate is reported, not added.
    """
    M = np.asarray(M, dtype=float)
    f = np.asarray(integrand, dtype=float)
    n = M.shape[0]
    if n == 0:
        return np.zeros(f.shape[1:]), 0.0
    if abs(t) > grid.T_max * (1 + 1e-12):
        raise ValueError(f"t = {t} lies outside the grid")
    if kind == "Y":
        a, b = 0.0, t
    elif kind == "X":
        a, b = -grid.T_max, t
    elif kind == "Z":
        a, b = t, grid.T_max
    else:
        raise ValueError(f"unknown integral kind {kind!r}")
    ts, fs = _trapezoid_points(grid, f, a, b)
    vals = np.stack([matrix_exp(M, t - s) @ fi for s, fi in zip(ts, fs)])
    dt = np.diff(ts)
    total = np.tensordot(dt / 2, vals[:-1] + vals[1:], axes=(0, 0))
    if kind == "Y" and t < 0:
        total = -total
    est = 0.0
    if tail is not None:
        est = tail_bound(kind, t, grid.T_max, tail, K, delta, rate)
        if tail_tol is not None and est > tail_tol:
            raise TailError(
                f"tail bound {est:.3e} exceeds tail_tol {tail_tol:.1e}; increase T_max"
            )
    return total, est


def _linear_recurrence(a, c, x0):
    """x_{k+1} = a x_k + c_k for scalar a, vectorized over trailing axes."""
    zi = np.asarray(a * x0)[None, ...]
    return lfilter([1.0], [1.0, -a], c, axis=0, zi=zi)[0]


def weighted_integrals(kind, grid, integrand, M):
    """The same trapezoid sums as :func:`weighted_integral`, at every node.

    Uses the exact propagation e^{(t+h-s)M} = e^{hM} e^{(t-s)M}, so the result
    equals the direct composite trapezoid sum up to rounding.
    """
    M = np.asarray(M, dtype=float)
    f = np.asarray(integrand, dtype=float)
    n = M.shape[0]
    out = np.zeros_like(f)
    if n == 0 or f.shape[0] == 0:
        return out
    h = grid.h
    N = grid.n_steps

    def step_terms(E, f_from, f_to):
        Ef = np.einsum("ij,mj...->mi...", E, f_from)
        return 0.5 * h * (Ef + f_to)

    def run(E, c, start, stop, step):
        if E.shape == (1, 1):
            out[start + step : stop : step] = _linear_recurrence(E[0, 0], c, out[start])
            return
        prev = out[start]
        idx = start
        for k in range(c.shape[0]):
            prev = E @ prev + c[k]
            idx += step
            out[idx] = prev

    if kind == "X":
        E = matrix_exp(M, h)
        c = step_terms(E, f[:-1], f[1:])
        run(E, c, 0, N + 1, 1)
    elif kind == "Z":
        E = matrix_exp(M, -h)
        c = step_terms(E, f[1:][::-1], f[:-1][::-1])
        run(E, c, N, None, -1)
    elif kind == "Y":
        m = grid.mid
        E = matrix_exp(M, h)
        run(E, step_terms(E, f[m:-1], f[m + 1 :]), m, N + 1, 1)
        E = matrix_exp(M, -h)
        c = -step_terms(E, f[1 : m + 1][::-1], f[:m][::-1])
        run(E, c, m, None, -1)
    else:
        raise ValueError(f"unknown integral kind {kind!r}")
    return out


def interpolate(phi, t):
    """Linear interpolation between the bracketing nodes; exact at nodes."""
    T = phi.grid.T_max
    if abs(t) > T * (1 + 1e-12):
        raise ValueError(f"t = {t} lies outside the grid [-{T}, {T}]")
    return _interp_rows(phi.grid.nodes, phi.values, float(np.clip(t, -T, T)))


def write_trajectory_csv(phi, path):
    n_x, n_y, n_z = phi.dims
    header = (
        ["t"]
        + [f"x_{i + 1}" for i in range(n_x)]
        + [f"y_{i + 1}" for i in range(n_y)]
        + [f"z_{i + 1}" for i in range(n_z)]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, row in zip(phi.grid.nodes, phi.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
