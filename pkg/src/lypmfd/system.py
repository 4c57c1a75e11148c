"""Decomposed autonomous systems  x' = Ax + F(u),  y' = By + G(u),  z' = Cz + H(u).

The phase space is E = R^n_x x R^n_y x R^n_z with the max of the component
infinity-norms. Nonlinear terms are wrapped in :class:`NonlinearMap`, which
evaluates on batches of states so that a whole time grid can be pushed through
in one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, EvaluationError, NonDifferentiableError

__all__ = [
    "NonlinearMap",
    "zero_map",
    "StateVector",
    "SystemSpec",
    "split",
    "compose",
    "eval_rhs",
    "eval_jacobian",
    "DEFAULT_H_FD",
]

DEFAULT_H_FD = 1e-5


@dataclass(frozen=True)
class NonlinearMap:
    """A map R^n_in -> R^n_out evaluated row-wise on ``(N, n_in)`` batches.

    ``jac`` returns ``(N, n_out, n_in)``. When it is None the Jacobian is
    approximated by central differences with step ``h_fd``.
    """

    n_in: int
    n_out: int
    func: Callable[[np.ndarray], np.ndarray]
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    h_fd: float = DEFAULT_H_FD
    label: str = ""

    def __call__(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        out = np.asarray(self.func(U), dtype=float)
        return out.reshape(U.shape[0], self.n_out)

    def jacobian(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if self.jac is not None:
            J = np.asarray(self.jac(U), dtype=float)
            return J.reshape(U.shape[0], self.n_out, self.n_in)
        return self.fd_jacobian(U)

    def fd_jacobian(self, U, h=None):
        h = self.h_fd if h is None else h
        U = np.atleast_2d(np.asarray(U, dtype=float))
        J = np.empty((U.shape[0], self.n_out, self.n_in))
        for j in range(self.n_in):
            dU = np.zeros(self.n_in)
            dU[j] = h
            J[:, :, j] = (self(U + dU) - self(U - dU)) / (2 * h)
        return J

    @property
    def is_zero(self):
        return self.label == "zero"


def zero_map(n_in, n_out):
    return NonlinearMap(
        n_in,
        n_out,
        lambda U: np.zeros((U.shape[0], n_out)),
        lambda U: np.zeros((U.shape[0], n_out, n_in)),
        label="zero",
    )


@dataclass(frozen=True)
class StateVector:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def norm(self):
        parts = [np.max(np.abs(p)) for p in (self.x, self.y, self.z) if p.size]
        return float(max(parts)) if parts else 0.0

    @property
    def dims(self):
        return (self.x.size, self.y.size, self.z.size)


def split(u, dims):
    """Split a flat state into its (x, y, z) parts."""
    n_x, n_y, n_z = dims
    u = np.asarray(u, dtype=float)
    if u.shape != (n_x + n_y + n_z,):
        raise DimensionError(
            f"state has shape {u.shape}, expected ({n_x + n_y + n_z},)", component="u"
        )
    return StateVector(u[:n_x].copy(), u[n_x : n_x + n_y].copy(), u[n_x + n_y :].copy())


def compose(sv):
    return np.concatenate([sv.x, sv.y, sv.z])


def _as_matrix(M, n, name):
    M = np.asarray(M, dtype=float)
    if n == 0:
        return np.zeros((0, 0))
    if M.shape != (n, n):
        raise DimensionError(f"{name} has shape {M.shape}, expected ({n}, {n})", component=name)
    return M


@dataclass(frozen=True)
class SystemSpec:
    """The decomposed system together with its Lipschitz data.

    ``lipschitz`` holds (delta_x, delta_y, delta_z) and ``deriv_lipschitz`` the
    Lipschitz constants (gamma_x, gamma_y, gamma_z) of DF, DG, DH. Either may be
    None until estimated.
    """

    n_x: int
    n_y: int
    n_z: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    F: NonlinearMap
    G: NonlinearMap
    H: NonlinearMap
    lipschitz: Optional[tuple] = None
    deriv_lipschitz: Optional[tuple] = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.n_y < 1:
            raise DimensionError("a center direction is required (n_y >= 1)", component="y")
        if min(self.n_x, self.n_z) < 0:
            raise DimensionError("dimensions must be nonnegative")
        object.__setattr__(self, "A", _as_matrix(self.A, self.n_x, "A"))
        object.__setattr__(self, "B", _as_matrix(self.B, self.n_y, "B"))
        object.__setattr__(self, "C", _as_matrix(self.C, self.n_z, "C"))
        d = self.dim
        for label, m, n in (("F", self.F, self.n_x), ("G", self.G, self.n_y), ("H", self.H, self.n_z)):
            if m.n_in != d or m.n_out != n:
                raise DimensionError(
                    f"{label} maps R^{m.n_in} -> R^{m.n_out}, expected R^{d} -> R^{n}",
                    component=label,
                )
        for label, vals in (("lipschitz", self.lipschitz), ("deriv_lipschitz", self.deriv_lipschitz)):
            if vals is not None:
                vals = tuple(float(v) for v in vals)
                if len(vals) != 3 or any(v < 0 for v in vals):
                    raise ValueError(f"{label} must be three nonnegative reals")
                object.__setattr__(self, label, vals)

    @property
    def dims(self):
        return (self.n_x, self.n_y, self.n_z)

    @property
    def dim(self):
        return self.n_x + self.n_y + self.n_z

    @property
    def slices(self):
        return (
            slice(0, self.n_x),
            slice(self.n_x, self.n_x + self.n_y),
            slice(self.n_x + self.n_y, self.dim),
        )

    @property
    def linear_part(self):
        L = np.zeros((self.dim, self.dim))
        sx, sy, sz = self.slices
        L[sx, sx] = self.A
        L[sy, sy] = self.B
        L[sz, sz] = self.C
        return L

    @property
    def has_nonlinearity(self):
        return not (self.F.is_zero and self.G.is_zero and self.H.is_zero)

    def replace(self, **changes):
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return SystemSpec(**kw)

    def nonlinear_batch(self, U):
        """Stack F, G, H on a batch of flat states -> ``(N, dim)``."""
        U = np.atleast_2d(U)
        return np.concatenate([self.F(U), self.G(U), self.H(U)], axis=1)

    def rhs_batch(self, U):
        U = np.atleast_2d(U)
        return U @ self.linear_part.T + self.nonlinear_batch(U)

    def nonlinear_jacobian_batch(self, U):
        U = np.atleast_2d(U)
        return np.concatenate(
            [self.F.jacobian(U), self.G.jacobian(U), self.H.jacobian(U)], axis=1
        )


def _flatten_state(spec, u):
    if isinstance(u, StateVector):
        for name, part, n in zip("xyz", (u.x, u.y, u.z), spec.dims):
            if np.asarray(part).shape != (n,):
                raise DimensionError(
                    f"component {name} has shape {np.asarray(part).shape}, expected ({n},)",
                    component=name,
                )
        return compose(u)
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.dim,):
        raise DimensionError(f"state has shape {u.shape}, expected ({spec.dim},)", component="u")
    return u


def eval_rhs(spec, u):
    """Right-hand side (Ax + F(u), By + G(u), Cz + H(u)) at a single state."""
    flat = _flatten_state(spec, u)
    return split(spec.rhs_batch(flat[None, :])[0], spec.dims)


def eval_jacobian(spec, u):
    """Full Jacobian of the right-hand side, a ``(dim, dim)`` block matrix."""
    flat = _flatten_state(spec, u)
    try:
        J = spec.nonlinear_jacobian_batch(flat[None, :])[0]
    except EvaluationError as exc:
        raise NonDifferentiableError(f"nonlinearity is not differentiable at {flat}: {exc}") from exc
    if not np.all(np.isfinite(J)):
        raise NonDifferentiableError(f"nonlinearity is not differentiable at {flat}")
    return spec.linear_part + J
