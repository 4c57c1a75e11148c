"""A small expression language for nonlinear terms.

Grammar (standard precedence, ``^`` binds tightest, then unary minus, then
``* /``, then ``+ -``; binary operators are left associative)::

    expr     := term (("+" | "-") term)*
    term     := unary (("*" | "/") unary)*
    unary    := "-" unary | power
    power    := atom ("^" exponent)?
    exponent := ["-"] NUMBER | "(" ["-"] NUMBER ")"
    atom     := NUMBER | VAR | FUNC "(" expr ")" | "(" expr ")"

Variables are ``x1..xN``, ``y1..`` and ``z1..``; functions are sin, cos, tanh
and exp. Expressions compile to vectorized numpy callables and differentiate
symbolically, with constant folding as the only simplification.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.optimize import minimize

from .errors import EvaluationError, ParseError
from .system import NonlinearMap

__all__ = [
    "Num",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Call",
    "Expression",
    "parse",
    "to_source",
    "differentiate",
    "evaluate",
    "variables_for",
    "free_variables",
    "compile_vector",
    "CutoffSpec",
    "smoothstep_cutoff",
    "apply_cutoff",
    "estimate_lipschitz",
    "estimate_deriv_lipschitz",
    "FUNCTIONS",
]

FUNCTIONS = ("sin", "cos", "tanh", "exp")


# -- AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expression"


@dataclass(frozen=True)
class Add:
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Sub:
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Mul:
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Div:
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Pow:
    base: "Expression"
    exponent: float


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expression"


Expression = Union[Num, Var, Neg, Add, Sub, Mul, Div, Pow, Call]
_BINARY = {Add: "+", Sub: "-", Mul: "*", Div: "/"}


def variables_for(n_x, n_y, n_z):
    """Declared variable names, in state order."""
    return (
        [f"x{i + 1}" for i in range(n_x)]
        + [f"y{i + 1}" for i in range(n_y)]
        + [f"z{i + 1}" for i in range(n_z)]
    )


# -- parsing -----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(source):
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "ws":
            tokens.append(_Token(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, source, variables):
        self.tokens = _tokenize(source)
        self.i = 0
        self.variables = None if variables is None else set(variables)

    @property
    def tok(self):
        return self.tokens[self.i]

    def error(self, message, tok=None):
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.col)

    def accept(self, text):
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            found = "end of input" if self.tok.kind == "eof" else repr(self.tok.text)
            raise self.error(f"expected {text!r}, found {found}")

    def parse(self):
        if self.tok.kind == "eof":
            raise self.error("empty expression")
        node = self.expr()
        if self.tok.kind != "eof":
            if self.tok.text == ")":
                raise self.error("unbalanced parenthesis")
            raise self.error(f"unexpected {self.tok.text!r}")
        return node

    def expr(self):
        node = self.term()
        while True:
            if self.accept("+"):
                node = Add(node, self.term())
            elif self.accept("-"):
                node = Sub(node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            if self.accept("*"):
                node = Mul(node, self.unary())
            elif self.accept("/"):
                node = Div(node, self.unary())
            else:
                return node

    def unary(self):
        if self.accept("-"):
            nxt = self.tokens[self.i + 1] if self.i + 1 < len(self.tokens) else None
            if self.tok.kind == "num" and not (nxt and nxt.text == "^"):
                # a signed literal is a single number, so -2 round-trips as Num(-2)
                value = -float(self.tok.text)
                self.i += 1
                return Num(value)
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.accept("^"):
            return Pow(base, self.exponent())
        return base

    def exponent(self):
        paren = self.accept("(")
        sign = -1.0 if self.accept("-") else 1.0
        if self.tok.kind != "num":
            raise self.error("exponent must be a numeric literal")
        value = sign * float(self.tok.text)
        self.i += 1
        if paren:
            self.expect(")")
        return value

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.i += 1
            if tok.text in FUNCTIONS:
                if not (self.tok.kind == "op" and self.tok.text == "("):
                    raise self.error(f"function {tok.text!r} needs an argument")
                self.i += 1
                arg = self.expr()
                if not self.accept(")"):
                    raise self.error("unbalanced parenthesis")
                return Call(tok.text, arg)
            if self.variables is not None and tok.text not in self.variables:
                raise self.error(f"unknown identifier {tok.text!r}", tok)
            return Var(tok.text)
        if self.accept("("):
            node = self.expr()
            if not self.accept(")"):
                raise self.error("unbalanced parenthesis")
            return node
        if tok.kind == "eof":
            raise self.error("unexpected end of input")
        raise self.error(f"unexpected {tok.text!r}")


def parse(source, variables=None):
    """Parse ``source`` into an AST.

    ``variables`` is the set of declared names; any other identifier is a
    :class:`ParseError`. Pass None to accept every identifier.
    """
    return _Parser(source, variables).parse()


# -- printing ----------------------------------------------------------------


def _fmt_number(v):
    if math.isfinite(v) and float(v).is_integer() and abs(v) < 1e16:
        s = str(int(v))
    else:
        s = repr(float(v))
    return s


def to_source(e):
    """Render an AST as source text that parses back to the same tree."""
    if isinstance(e, Num):
        s = _fmt_number(abs(e.value))
        return f"(-{s})" if e.value < 0 or (e.value == 0 and math.copysign(1, e.value) < 0) else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        arg = to_source(e.arg)
        if isinstance(e.arg, Num) and not arg.startswith("("):
            arg = f"({arg})"
        return f"(-{arg})"
    if isinstance(e, Call):
        return f"{e.func}({to_source(e.arg)})"
    if isinstance(e, Pow):
        base = to_source(e.base)
        if not isinstance(e.base, (Var, Call)) and not (isinstance(e.base, Num) and e.base.value >= 0):
            base = f"({base})"
        return f"{base}^{_fmt_number(e.exponent)}"
    op = _BINARY[type(e)]
    return f"({to_source(e.left)} {op} {to_source(e.right)})"


# -- symbolic differentiation ------------------------------------------------


def _num(e):
    return e.value if isinstance(e, Num) else None


def _add(a, b):
    va, vb = _num(a), _num(b)
    if va is not None and vb is not None:
        return Num(va + vb)
    if va == 0:
        return b
    if vb == 0:
        return a
    return Add(a, b)


def _sub(a, b):
    va, vb = _num(a), _num(b)
    if va is not None and vb is not None:
        return Num(va - vb)
    if vb == 0:
        return a
    if va == 0:
        return _neg(b)
    return Sub(a, b)


def _neg(a):
    va = _num(a)
    if va is not None:
        return Num(-va)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a, b):
    va, vb = _num(a), _num(b)
    if va is not None and vb is not None:
        return Num(va * vb)
    if va == 0 or vb == 0:
        return Num(0.0)
    if va == 1:
        return b
    if vb == 1:
        return a
    return Mul(a, b)


def _div(a, b):
    va, vb = _num(a), _num(b)
    if va == 0 and vb != 0:
        return Num(0.0)
    if vb == 1:
        return a
    if va is not None and vb is not None and vb != 0:
        return Num(va / vb)
    return Div(a, b)


def _pow(base, n):
    if n == 0:
        return Num(1.0)
    if n == 1:
        return base
    vb = _num(base)
    if vb is not None and (vb > 0 or float(n).is_integer()) and not (vb == 0 and n < 0):
        return Num(vb ** n)
    return Pow(base, n)


def differentiate(e, var):
    """Partial derivative of ``e`` with respect to the variable named ``var``."""
    if isinstance(e, Num):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0 if e.name == var else 0.0)
    if isinstance(e, Neg):
        return _neg(differentiate(e.arg, var))
    if isinstance(e, Add):
        return _add(differentiate(e.left, var), differentiate(e.right, var))
    if isinstance(e, Sub):
        return _sub(differentiate(e.left, var), differentiate(e.right, var))
    if isinstance(e, Mul):
        return _add(
            _mul(differentiate(e.left, var), e.right),
            _mul(e.left, differentiate(e.right, var)),
        )
    if isinstance(e, Div):
        dl, dr = differentiate(e.left, var), differentiate(e.right, var)
        if _num(dr) == 0:
            return _div(dl, e.right)
        return _div(_sub(_mul(dl, e.right), _mul(e.left, dr)), _pow(e.right, 2.0))
    if isinstance(e, Pow):
        db = differentiate(e.base, var)
        return _mul(_mul(Num(e.exponent), _pow(e.base, e.exponent - 1.0)), db)
    if isinstance(e, Call):
        da = differentiate(e.arg, var)
        if _num(da) == 0:
            return Num(0.0)
        if e.func == "sin":
            outer = Call("cos", e.arg)
        elif e.func == "cos":
            outer = _neg(Call("sin", e.arg))
        elif e.func == "tanh":
            outer = _sub(Num(1.0), _pow(Call("tanh", e.arg), 2.0))
        else:
            outer = Call("exp", e.arg)
        return _mul(outer, da)
    raise TypeError(f"not an expression node: {e!r}")


def free_variables(e):
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, (Neg, Call)):
        return free_variables(e.arg)
    if isinstance(e, Pow):
        return free_variables(e.base)
    return free_variables(e.left) | free_variables(e.right)


# -- evaluation --------------------------------------------------------------

_NP_FUNCS = {"sin": np.sin, "cos": np.cos, "tanh": np.tanh, "exp": np.exp}


def _compile(e):
    """Compile to a closure over an environment dict of equally shaped arrays."""
    if isinstance(e, Num):
        v = float(e.value)
        return lambda env, shape: np.full(shape, v)
    if isinstance(e, Var):
        name = e.name

        def var(env, shape):
            try:
                return env[name]
            except KeyError:
                raise EvaluationError(f"variable {name!r} is not bound") from None

        return var
    if isinstance(e, Neg):
        f = _compile(e.arg)
        return lambda env, shape: -f(env, shape)
    if isinstance(e, Call):
        f, g = _compile(e.arg), _NP_FUNCS[e.func]
        return lambda env, shape: g(f(env, shape))
    if isinstance(e, Pow):
        f, n = _compile(e.base), e.exponent
        integral = float(n).is_integer()

        def power(env, shape):
            b = f(env, shape)
            if not integral and np.any(b < 0):
                raise EvaluationError(f"non-integer power {n} of a negative base")
            if n < 0 and np.any(b == 0):
                raise EvaluationError("division by zero in negative power")
            if integral:
                return b ** int(n) if n >= 0 else 1.0 / b ** int(-n)
            return b ** n

        return power
    left, right = _compile(e.left), _compile(e.right)
    if isinstance(e, Add):
        return lambda env, shape: left(env, shape) + right(env, shape)
    if isinstance(e, Sub):
        return lambda env, shape: left(env, shape) - right(env, shape)
    if isinstance(e, Mul):
        return lambda env, shape: left(env, shape) * right(env, shape)

    def divide(env, shape):
        den = right(env, shape)
        if np.any(den == 0):
            raise EvaluationError("division by zero")
        return left(env, shape) / den

    return divide


def evaluate(e, env):
    """Evaluate at scalar or array values bound in ``env`` (name -> value)."""
    arrays = {k: np.asarray(v, dtype=float) for k, v in env.items()}
    shape = np.broadcast_shapes(*(a.shape for a in arrays.values())) if arrays else ()
    with np.errstate(over="ignore"):
        out = _compile(e)(arrays, shape)
    out = np.broadcast_to(out, shape)
    return float(out) if out.ndim == 0 else np.array(out)


def _coerce(e, variables):
    return parse(e, variables) if isinstance(e, str) else e


def compile_vector(exprs, variables, label=""):
    """Turn a list of expressions over ``variables`` into a :class:`NonlinearMap`.

    The Jacobian is assembled from symbolic partial derivatives.
    """
    variables = list(variables)
    exprs = [_coerce(e, variables) for e in exprs]
    values = [_compile(e) for e in exprs]
    partials = [[_compile(differentiate(e, v)) for v in variables] for e in exprs]
    n_in, n_out = len(variables), len(exprs)
    all_zero = all(isinstance(e, Num) and e.value == 0 for e in exprs)

    def env_of(U):
        return {v: U[:, i] for i, v in enumerate(variables)}

    def func(U):
        env, shape = env_of(U), (U.shape[0],)
        out = np.empty((U.shape[0], n_out))
        with np.errstate(over="ignore"):
            for k, f in enumerate(values):
                out[:, k] = f(env, shape)
        return out

    def jac(U):
        env, shape = env_of(U), (U.shape[0],)
        out = np.empty((U.shape[0], n_out, n_in))
        with np.errstate(over="ignore"):
            for k, row in enumerate(partials):
                for j, f in enumerate(row):
                    out[:, k, j] = f(env, shape)
        return out

    return NonlinearMap(n_in, n_out, func, jac, label="zero" if all_zero else label)


# -- cutoff ------------------------------------------------------------------


@dataclass(frozen=True)
class CutoffSpec:
    """Smooth localization: multiplier 1 for r <= radius, 0 for r >= radius + width."""

    radius: float
    width: float

    def __post_init__(self):
        if not (self.radius > 0 and self.width > 0):
            raise ValueError("cutoff radius and width must be positive")

    @property
    def support(self):
        return self.radius + self.width


def smoothstep_cutoff(r, c):
    """Cubic C^1 cutoff chi(r) and its derivative chi'(r)."""
    s = np.clip((np.asarray(r, dtype=float) - c.radius) / c.width, 0.0, 1.0)
    chi = 1.0 - s * s * (3.0 - 2.0 * s)
    dchi = -6.0 * s * (1.0 - s) / c.width
    return chi, dchi


def apply_cutoff(m, c):
    """Return ``u -> chi(|u|_2) * m(u)`` as a new :class:`NonlinearMap`.

    The Euclidean radius keeps the multiplier C^1 in u (the max-norm has
    corners where two coordinates tie).
    """

    def func(U):
        chi, _ = smoothstep_cutoff(np.linalg.norm(U, axis=1), c)
        return chi[:, None] * m(U)

    def jac(U):
        r = np.linalg.norm(U, axis=1)
        chi, dchi = smoothstep_cutoff(r, c)
        with np.errstate(invalid="ignore", divide="ignore"):
            grad_r = np.where(r[:, None] > 0, U / r[:, None], 0.0)
        J = chi[:, None, None] * m.jacobian(U)
        return J + m(U)[:, :, None] * (dchi[:, None] * grad_r)[:, None, :]

    label = "zero" if m.is_zero else (m.label + " [cutoff]")
    return NonlinearMap(m.n_in, m.n_out, func, jac, h_fd=m.h_fd, label=label)


# -- Lipschitz estimation ----------------------------------------------------


def _as_map(e, variables):
    if isinstance(e, NonlinearMap):
        return e
    if isinstance(e, (str, Num, Var, Neg, Add, Sub, Mul, Div, Pow, Call)):
        e = [e]
    return compile_vector(list(e), variables)


def _box_arrays(box):
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    lo, hi = box[:, 0], box[:, 1]
    if np.any(hi < lo):
        raise ValueError("box intervals must satisfy lo <= hi")
    return lo, hi


def _design(lo, hi, samples, rng):
    d = lo.size
    pts = [lo + (hi - lo) * rng.random((samples, d)), ((lo + hi) / 2)[None, :]]
    if d <= 10:
        corners = np.array(list(itertools.product(*zip(lo, hi))), dtype=float)
        pts.append(corners)
    return np.concatenate(pts)


def _refine(objective, starts, lo, hi):
    """Polish the best samples with a bounded local maximization."""
    best = -np.inf
    bounds = list(zip(lo, hi))
    for u0 in starts:
        res = minimize(lambda u: -objective(u[None, :])[0], u0, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 60})
        if np.all(np.isfinite(res.x)):
            best = max(best, objective(np.clip(res.x, lo, hi)[None, :])[0])
    return best


def estimate_lipschitz(e, box, samples=4096, variables=None, safety=1.1, seed=0, refine=4):
    """Estimate a Lipschitz constant of an expression vector over a box.

    The estimate is the largest infinity-induced Jacobian norm seen on random
    samples, the box corners and centre, polished by local maximization from
    the ``refine`` best samples, then multiplied by ``safety``.

    ``e`` may be a :class:`NonlinearMap`, a single expression or a list of
    expressions; ``box`` is one ``(lo, hi)`` interval per input variable.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    lo, hi = _box_arrays(box)
    if variables is None and not isinstance(e, NonlinearMap):
        exprs = [e] if not isinstance(e, (list, tuple)) else e
        names = set()
        for x in exprs:
            names |= free_variables(_coerce(x, None))
        variables = sorted(names, key=lambda s: (s[0] != "x", s[0] != "y", s[0], int(s[1:] or 0)))
        if len(variables) != lo.size:
            raise ValueError(f"box has {lo.size} intervals for variables {variables}")
    m = _as_map(e, variables)
    if m.n_out == 0 or m.is_zero:
        return 0.0
    if m.n_in != lo.size:
        raise ValueError(f"box has {lo.size} intervals but the map takes {m.n_in} inputs")

    def objective(U):
        J = m.jacobian(U)
        return np.abs(J).sum(axis=2).max(axis=1)

    rng = np.random.default_rng(seed)
    pts = _design(lo, hi, samples, rng)
    try:
        vals = objective(pts)
    except EvaluationError as exc:
        raise EvaluationError(f"Lipschitz estimation failed inside the box: {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise EvaluationError("Jacobian is not finite inside the box")
    est = float(vals.max())
    if refine and est > 0:
        starts = pts[np.argsort(vals)[-refine:]]
        est = max(est, float(_refine(objective, starts, lo, hi)))
    return safety * est


def estimate_deriv_lipschitz(m, box, samples=4096, safety=1.1, seed=0, h=None):
    """Estimate a Lipschitz constant of ``u -> DF(u)`` (induced infinity norm).

    Sampled difference quotients of the Jacobian over pairs ``(u, u + h v)``
    with ``v`` uniform in the unit cube.
    """
    lo, hi = _box_arrays(box)
    if m.n_out == 0 or m.is_zero:
        return 0.0
    rng = np.random.default_rng(seed)
    width = float(np.max(hi - lo)) if np.any(hi > lo) else 1.0
    h = 1e-3 * width if h is None else h
    U1 = lo + (hi - lo) * rng.random((samples, lo.size))
    V = rng.uniform(-1.0, 1.0, (samples, lo.size))
    U2 = np.clip(U1 + h * V, lo, hi)
    du = np.abs(U2 - U1).max(axis=1)
    keep = du > 0
    dJ = m.jacobian(U1[keep]) - m.jacobian(U2[keep])
    q = np.abs(dJ).sum(axis=2).max(axis=1) / du[keep]
    return safety * float(q.max()) if q.size else 0.0
