"""Test systems shared by the unit and acceptance suites."""
import numpy as np

from lypmfd.conditions import TrichotomyConstants, derive_trichotomy, gap_report
from lypmfd.expr import CutoffSpec, apply_cutoff, compile_vector, variables_for
from lypmfd.perron import FixedPointConfig
from lypmfd.system import SystemSpec, zero_map


class Case:
    """A system with its constants, weights and solver settings."""

    def __init__(self, spec, tc, delta, cfg=None, sigma=None, plateau=None, gamma=None):
        self.spec, self.tc, self.delta = spec, tc, tuple(delta)
        self.report, self.sigma = gap_report(tc, self.delta, sigma)
        self.cfg = cfg or FixedPointConfig()
        self.plateau = plateau
        self.gamma = gamma

    @property
    def dphi(self):
        return self.report.delta_phi


def build(n_x, n_y, n_z, A, B, C, F, G, H, cutoff=None):
    v = variables_for(n_x, n_y, n_z)
    maps = []
    for exprs in (F, G, H):
        m = compile_vector(exprs, v)
        maps.append(apply_cutoff(m, cutoff) if cutoff else m)
    return SystemSpec(n_x, n_y, n_z, np.array(A, float).reshape(n_x, n_x), np.array(B, float).reshape(n_y, n_y),
                      np.array(C, float).reshape(n_z, n_z), *maps)


def quadratic(scale=1.0):
    """x' = -x + scale y^2, y' = 0 with cutoff rho = 1; manifold x = scale y^2.

    Lipschitz data on the region |u| <= 0.3 (|DF| <= 0.6 scale, with margin).
    """
    spec = build(1, 1, 0, [[-1]], [[0]], [], [f"{scale} * y1^2"], ["0"], [], CutoffSpec(1.0, 1.0))
    tc = TrichotomyConstants(-1.0, 0.0, 0.0, np.inf)
    return Case(spec, tc, (0.66 * scale, 0.0, 0.0), plateau=1.0, gamma=(2.2 * scale, 0.0, 0.0))


def carr():
    """x' = -x + y^2, y' = x y with cutoff rho = 0.5.

    The honest constants on |u| <= 0.3 violate the gap condition
    (delta_x + delta_y = 1.32 > 1), so the conditions are not enforced.
    """
    spec = build(1, 1, 0, [[-1]], [[0]], [], ["y1^2"], ["x1 * y1"], [], CutoffSpec(0.5, 0.5))
    tc = TrichotomyConstants(-1.0, 0.0, 0.0, np.inf)
    cfg = FixedPointConfig(enforce_conditions=False, max_iters=2000)
    return Case(spec, tc, (0.66, 0.66, 0.0), cfg=cfg, plateau=0.5, gamma=(2.2, 2.2, 0.0))


def carr_local():
    """Carr system with constants on |x| <= 0.05, |y| <= 0.2 where the gap condition holds."""
    case = carr()
    return Case(case.spec, case.tc, (0.44, 0.275, 0.0), plateau=0.5, gamma=(2.2, 2.2, 0.0))


REFERENCE_F = ["0.05 * sin(y1) + 0.04 * tanh(z1)"]
REFERENCE_G = ["0.03 * sin(x1 + z1)"]
REFERENCE_H = ["0.05 * sin(y1) * cos(x1)"]


def reference():
    """Three-dimensional system with A = -1, B = 0, C = 1 and delta = 0.1 in every component."""
    spec = build(1, 1, 1, [[-1]], [[0]], [[1]], REFERENCE_F, REFERENCE_G, REFERENCE_H)
    tc = TrichotomyConstants(-1.0, 0.0, 0.0, 1.0)
    from lypmfd.conditions import SigmaParameters

    sigma = SigmaParameters(-0.5, 0.5, 0.0, 0.0, 0.1)
    return Case(spec, tc, (0.1, 0.1, 0.1), sigma=sigma, gamma=(0.1, 0.1, 0.1))


def zero(n_x=1, n_y=1, n_z=1, B=None):
    B = np.zeros((n_y, n_y)) if B is None else np.asarray(B, float)
    spec = SystemSpec(n_x, n_y, n_z, -np.eye(n_x), B, np.eye(n_z),
                      zero_map(n_x + n_y + n_z, n_x), zero_map(n_x + n_y + n_z, n_y), zero_map(n_x + n_y + n_z, n_z))
    tc, _ = derive_trichotomy(spec.A, spec.B, spec.C)
    return Case(spec, tc, (0.0, 0.0, 0.0))
