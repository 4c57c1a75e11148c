"""JSON problem descriptions.

A document has the sections ``dimensions``, ``linear``, ``nonlinear`` and
optionally ``constants``, ``cutoff``, ``numerics`` and ``name``. Unknown keys
are rejected with their path. :func:`build_problem` turns a document into a
:class:`Problem`: the system, its trichotomy constants, Lipschitz data,
weights and solver settings.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .conditions import (
    TrichotomyConstants,
    choose_sigma,
    derive_trichotomy,
    fallback_sigma,
    gap_report,
    SigmaParameters,
    verify_trichotomy,
)
from .errors import ConditionError, ConfigError, ParseError, TrichotomyError
from .expr import CutoffSpec, apply_cutoff, compile_vector, estimate_deriv_lipschitz, estimate_lipschitz, parse, variables_for
from .perron import DEFAULT_N_STEPS, FixedPointConfig
from .system import SystemSpec
from .validation import spotcheck_a2

__all__ = ["Problem", "load_config", "build_problem", "NUMERICS_DEFAULTS"]

NUMERICS_DEFAULTS = {
    "T_max": None,
    "n_steps": DEFAULT_N_STEPS,
    "tol": 1e-10,
    "max_iters": 500,
    "tail_tol": 1e-8,
    "seed": 0,
    "rate_slack": 0.05,
    "region_radius": None,
    "lipschitz_samples": 4096,
}

_SCHEMA = {
    "name": None,
    "dimensions": {"n_x": None, "n_y": None, "n_z": None},
    "linear": {"A": None, "B": None, "C": None},
    "nonlinear": {"F": None, "G": None, "H": None},
    "constants": {
        k: None
        for k in ("alpha_x", "alpha_y", "beta_y", "beta_z", "K_x", "K_y", "K_z", "delta", "gamma", "sigma_n", "sigma_p")
    },
    "cutoff": {"rho": None, "width": None},
    "numerics": {k: None for k in NUMERICS_DEFAULTS},
}
_REQUIRED = ("dimensions", "linear", "nonlinear")


def _check_keys(doc, schema, path=""):
    if not isinstance(doc, dict):
        raise ConfigError("expected an object", path)
    for key, value in doc.items():
        sub = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown key {key!r}", sub)
        if isinstance(schema[key], dict):
            _check_keys(value, schema[key], sub)


def load_config(path):
    """Read and parse a JSON document; syntax errors carry line and column."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})") from exc


def _int(doc, key, path, minimum=0):
    v = doc.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise ConfigError(f"must be an integer >= {minimum}", f"{path}.{key}")
    return v


def _real(v, path, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError("must be a finite number", path)
    if positive and v <= 0:
        raise ConfigError("must be positive", path)
    return float(v)


def _matrix(doc, key, n, path):
    raw = doc.get(key, [] if n == 0 else None)
    if raw is None:
        raise ConfigError("missing", f"{path}.{key}")
    try:
        M = np.array(raw, dtype=float).reshape(-1, n) if n else np.zeros((0, 0))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"not a numeric matrix: {exc}", f"{path}.{key}") from exc
    if M.shape != (n, n) or (n and np.array(raw, dtype=object).ndim != 2):
        raise ConfigError(f"expected a {n} x {n} array of rows", f"{path}.{key}")
    if not np.all(np.isfinite(M)):
        raise ConfigError("entries must be finite", f"{path}.{key}")
    return M


def _triple(v, path):
    if not isinstance(v, list) or len(v) != 3:
        raise ConfigError("expected three numbers [x, y, z]", path)
    out = tuple(_real(x, f"{path}[{i}]") for i, x in enumerate(v))
    if any(x < 0 for x in out):
        raise ConfigError("must be nonnegative", path)
    return out


@dataclass
class Problem:
    spec: SystemSpec
    tc: TrichotomyConstants
    sigma: SigmaParameters
    delta: tuple
    report: object
    cfg: FixedPointConfig
    numerics: dict
    box: list
    plateau: Optional[float] = None
    notes: list = field(default_factory=list)
    declared_gamma: Optional[tuple] = None
    name: str = ""

    @property
    def seed(self):
        return self.numerics["seed"]

    @property
    def solve_kwargs(self):
        return {"n_steps": self.numerics["n_steps"], "T_max": self.numerics["T_max"]}

    @cached_property
    def gamma(self):
        """Lipschitz constants of DF, DG, DH: declared or estimated over the region."""
        if self.declared_gamma is not None:
            return self.declared_gamma
        n = self.numerics["lipschitz_samples"]
        return tuple(
            estimate_deriv_lipschitz(m, self.box, samples=n, seed=self.seed)
            for m in (self.spec.F, self.spec.G, self.spec.H)
        )

    def to_dict(self):
        return {
            "name": self.name,
            "dims": list(self.spec.dims),
            "trichotomy": self.tc.to_dict(),
            "delta": list(self.delta),
            "sigma": self.sigma.to_dict(),
            "region_radius": self.box[0][1] if self.box else None,
            "notes": list(self.notes),
        }


def build_problem(doc, seed=None, force=False):
    """Validate a document and assemble the problem.

    Lipschitz constants that are not declared are estimated over the region
    ``|u| <= region_radius`` (default: the cutoff support, else 1). Declared
    constants are spot-checked there instead. ``seed`` overrides
    ``numerics.seed``.
    """
    _check_keys(doc, _SCHEMA)
    for key in _REQUIRED:
        if key not in doc:
            raise ConfigError("missing section", key)
    dims = doc["dimensions"]
    n_x, n_y, n_z = (_int(dims, k, "dimensions", m) for k, m in (("n_x", 0), ("n_y", 1), ("n_z", 0)))
    A = _matrix(doc["linear"], "A", n_x, "linear")
    B = _matrix(doc["linear"], "B", n_y, "linear")
    C = _matrix(doc["linear"], "C", n_z, "linear")

    num = dict(NUMERICS_DEFAULTS)
    for k, v in doc.get("numerics", {}).items():
        p = f"numerics.{k}"
        if k in ("n_steps", "max_iters", "seed", "lipschitz_samples"):
            if not isinstance(v, int) or isinstance(v, bool) or v < (0 if k == "seed" else 1):
                raise ConfigError("must be a positive integer", p)
            if k == "n_steps" and v % 2:
                raise ConfigError("must be even", p)
            num[k] = v
        else:
            num[k] = _real(v, p, positive=k != "rate_slack")
    if seed is not None:
        num["seed"] = int(seed)

    cutoff = None
    if "cutoff" in doc:
        c = doc["cutoff"]
        if "rho" not in c:
            raise ConfigError("missing", "cutoff.rho")
        rho = _real(c["rho"], "cutoff.rho", positive=True)
        width = _real(c.get("width", rho), "cutoff.width", positive=True)
        cutoff = CutoffSpec(rho, width)

    variables = variables_for(n_x, n_y, n_z)
    maps = {}
    for key, n in (("F", n_x), ("G", n_y), ("H", n_z)):
        srcs = doc["nonlinear"].get(key, ["0"] * n)
        if not isinstance(srcs, list) or len(srcs) != n:
            raise ConfigError(f"expected a list of {n} expression strings", f"nonlinear.{key}")
        exprs = []
        for i, s in enumerate(srcs):
            if not isinstance(s, str):
                raise ConfigError("expected an expression string", f"nonlinear.{key}[{i}]")
            try:
                exprs.append(parse(s, variables))
            except ParseError as exc:
                raise ConfigError(str(exc), f"nonlinear.{key}[{i}]") from exc
        m = compile_vector(exprs, variables, label=key)
        maps[key] = apply_cutoff(m, cutoff) if cutoff is not None else m

    radius = num["region_radius"] or (cutoff.support if cutoff else 1.0)
    box = [(-radius, radius)] * (n_x + n_y + n_z)

    consts = doc.get("constants", {})
    for k, v in consts.items():
        if k not in ("delta", "gamma"):
            _real(v, f"constants.{k}")
    notes = []
    rate_keys = ("alpha_x", "alpha_y", "beta_y", "beta_z", "K_x", "K_y", "K_z")
    derived = None
    try:
        derived, notes = derive_trichotomy(A, B, C)
    except TrichotomyError as exc:
        if not all(k in consts for k in rate_keys):
            raise ConditionError(f"cannot derive trichotomy constants: {exc}") from exc
        notes.append(str(exc))
    tc_kw = {k: getattr(derived, k) for k in rate_keys} if derived else {}
    tc_kw.update({k: float(consts[k]) for k in rate_keys if k in consts})
    try:
        tc = TrichotomyConstants(**tc_kw)
    except ValueError as exc:
        raise ConfigError(str(exc), "constants") from exc

    spec0 = SystemSpec(n_x, n_y, n_z, A, B, C, maps["F"], maps["G"], maps["H"], name=doc.get("name", ""))
    a2_note = None
    if "delta" in consts:
        delta = _triple(consts["delta"], "constants.delta")
        spot = spotcheck_a2(spec0, box, pairs=2000, seed=num["seed"], declared=delta)
        a2 = not spot["violations"]
        if not a2:
            a2_note = f"declared delta violated by sampled quotients for {spot['violations']}"
    else:
        n = num["lipschitz_samples"]
        delta = tuple(estimate_lipschitz(maps[k], box, samples=n, seed=num["seed"]) for k in "FGH")
        a2 = all(math.isfinite(d) for d in delta)
    gamma = _triple(consts["gamma"], "constants.gamma") if "gamma" in consts else None
    spec = spec0.replace(lipschitz=delta, deriv_lipschitz=gamma)

    sigma = None
    if "sigma_n" in consts or "sigma_p" in consts:
        try:
            sigma = choose_sigma(tc, delta, consts.get("sigma_n"), consts.get("sigma_p"))
        except ConditionError:
            base = fallback_sigma(tc, delta)
            sigma = SigmaParameters(
                float(consts.get("sigma_n", base.sigma_n)),
                float(consts.get("sigma_p", base.sigma_p)),
                tc.alpha_y, tc.beta_y, tc.K_y * delta[1],
            )
    report, sigma = gap_report(tc, delta, sigma)
    a1, worst = verify_trichotomy(A, B, C, tc)
    report.flags["A1"] = bool(a1 and tc.ordered)
    report.flags["A2"] = bool(a2)
    if not a1:
        report.messages.append(f"declared trichotomy constants do not bound the linear flow (worst ratio {worst:.6g})")
    if a2_note:
        report.messages.append(a2_note)
    report.messages.extend(notes)
    report.constants["region_radius"] = radius

    cfg = FixedPointConfig(
        tol=num["tol"],
        max_iters=num["max_iters"],
        tail_tol=num["tail_tol"],
        rate_slack=num["rate_slack"],
        enforce_conditions=not force,
    )
    return Problem(
        spec=spec,
        tc=tc,
        sigma=sigma,
        delta=delta,
        report=report,
        cfg=cfg,
        numerics=num,
        box=box,
        plateau=cutoff.radius if cutoff else None,
        notes=notes,
        declared_gamma=gamma,
        name=doc.get("name", ""),
    )
