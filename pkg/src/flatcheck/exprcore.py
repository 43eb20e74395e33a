"""Symbolic expressions over jet variables.

Expressions are plain sympy expressions whose symbols follow a naming
convention for jet coordinates: ``z1`` is order 0, ``z1'`` and ``z1''`` are
orders 1 and 2, and ``z1^(k)`` is order ``k`` for ``k >= 3``.  sympy's
automatic canonicalisation (flattening, constant folding, collection of
identical terms) is the only normalisation applied; no trigonometric or
rational rewriting happens behind the caller's back.

Numeric work goes through :func:`evaluate`, a guarded float evaluator that
raises :class:`DomainError` instead of returning ``nan`` or ``inf``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Mapping

import numpy as np
import sympy as sp

from .errors import CyclicBindings, DomainError, NoValidSample, UnboundVariable

KINDS = ("free", "state", "arbitrary", "exogenous", "ghost", "aux")

FUNCTIONS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "atan": sp.atan,
    "arctan": sp.atan,
    "atan2": sp.atan2,
    "sqrt": sp.sqrt,
    "exp": sp.exp,
    "ln": sp.log,
    "log": sp.log,
}

DEFAULT_TRIALS = 20
DEFAULT_TOL = 1e-9
EVAL_GUARD = 1e-12
SAMPLING_GUARD = 1e-6

_JET_RE = re.compile(r"^(?P<base>.+?)(?:(?P<primes>'+)|\^\((?P<order>\d+)\))?$")


def jet_name(base: str, order: int = 0) -> str:
    if order < 0:
        raise ValueError("jet order must be non-negative")
    if order == 0:
        return base
    if order <= 2:
        return base + "'" * order
    return f"{base}^({order})"


@lru_cache(maxsize=None)
def jet(base: str, order: int = 0) -> sp.Symbol:
    """The symbol of the ``order``-th derivative of ``base``."""
    return sp.Symbol(jet_name(base, order))


@lru_cache(maxsize=None)
def split_jet(sym: sp.Symbol) -> tuple[str, int]:
    """Inverse of :func:`jet`: ``z1''`` -> ``("z1", 2)``."""
    m = _JET_RE.match(sym.name)
    if m.group("primes"):
        return m.group("base"), len(m.group("primes"))
    if m.group("order"):
        return m.group("base"), int(m.group("order"))
    return m.group("base"), 0


def shift(sym: sp.Symbol, by: int = 1) -> sp.Symbol:
    base, k = split_jet(sym)
    return jet(base, k + by)


@dataclass(frozen=True)
class Variable:
    """A named jet coordinate together with its role in a model."""

    name: str
    kind: str = "free"
    order: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.order < 0:
            raise ValueError("derivative order must be non-negative")
        if self.kind == "ghost" and self.order > 0:
            raise ValueError("ghost variables carry no derivatives")

    @property
    def symbol(self) -> sp.Symbol:
        return jet(self.name, self.order)

    def derivative(self, by: int = 1) -> "Variable":
        return Variable(self.name, self.kind, self.order + by)


def as_symbol(v) -> sp.Symbol:
    if isinstance(v, Variable):
        return v.symbol
    if isinstance(v, str):
        return sp.Symbol(v)
    return v


def normalize(e) -> sp.Expr:
    """Syntactic normal form; sympy canonicalises at construction time."""
    return sp.sympify(e)


def constant(literal) -> sp.Expr:
    """Exact constant from an int, a decimal literal string or a Fraction."""
    if isinstance(literal, float):
        literal = repr(literal)
    return sp.Rational(literal)


NON_SMOOTH = (sp.Abs, sp.sign, sp.floor, sp.ceiling, sp.Max, sp.Min, sp.Piecewise,
              sp.Heaviside)


def partial_derivative(e, v) -> sp.Expr:
    e, v = normalize(e), as_symbol(v)
    if not e.has(*NON_SMOOTH):
        return sp.diff(e, v)
    # jets are real coordinates; without that sympy leaves re/im derivatives behind
    real = {s: sp.Dummy(s.name, real=True) for s in e.free_symbols | {v}}
    back = {r: s for s, r in real.items()}
    return sp.diff(e.xreplace(real), real[v]).xreplace(back)


def base_symbols(e) -> set[str]:
    return {split_jet(s)[0] for s in normalize(e).free_symbols}


def max_order(e, base: str) -> int | float:
    """Largest jet order of ``base`` occurring syntactically in ``e``."""
    orders = [k for b, k in map(split_jet, normalize(e).free_symbols) if b == base]
    return max(orders) if orders else -math.inf


def _check_acyclic(bindings: Mapping[sp.Symbol, sp.Expr]) -> None:
    graph = {k: {s for s in v.free_symbols if s in bindings} for k, v in bindings.items()}
    state: dict[sp.Symbol, int] = {}

    def visit(node):
        state[node] = 1
        for nxt in graph[node]:
            if state.get(nxt) == 1:
                raise CyclicBindings(f"cyclic bindings through {nxt}")
            if nxt not in state:
                visit(nxt)
        state[node] = 2

    for node in graph:
        if node not in state:
            visit(node)


def substitute(e, bindings: Mapping) -> sp.Expr:
    """Simultaneous substitution of symbols by expressions.

    Raises :class:`CyclicBindings` when the bindings reference each other in
    a cycle (a self-reference such as ``x -> x + 1`` counts as a cycle).
    """
    b = {as_symbol(k): normalize(v) for k, v in bindings.items()}
    _check_acyclic(b)
    return normalize(e).xreplace(b)


# --------------------------------------------------------------------------
# guarded numeric evaluation


def _finite(x: float) -> float:
    if not math.isfinite(x):
        raise DomainError("non-finite intermediate value")
    return x


def _pow(b: float, p: float, guard: float, integral: bool) -> float:
    if p < 0 and abs(b) < guard:
        raise DomainError(f"division by {b:.3g}, below guard {guard:g}")
    if not integral and b < 0:
        raise DomainError(f"fractional power of negative number {b:.3g}")
    try:
        return _finite(b ** p)
    except (OverflowError, ZeroDivisionError) as exc:
        raise DomainError(str(exc)) from None


def _tan(x: float, guard: float) -> float:
    c = math.cos(x)
    if abs(c) < guard:
        raise DomainError("tan evaluated at a pole")
    return math.sin(x) / c


def _log(x: float, guard: float) -> float:
    if x < guard:
        raise DomainError(f"log of {x:.3g}")
    return math.log(x)


def _atan2(y: float, x: float, guard: float) -> float:
    if math.hypot(x, y) < guard:
        raise DomainError("atan2 at the origin")
    return math.atan2(y, x)


def _exp(x: float, guard: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        raise DomainError("exp overflow") from None


def _sqrt(x: float, guard: float) -> float:
    if x < 0:
        raise DomainError(f"sqrt of negative number {x:.3g}")
    return math.sqrt(x)


_UNARY = {
    sp.sin: lambda x, g: math.sin(x),
    sp.cos: lambda x, g: math.cos(x),
    sp.tan: _tan,
    sp.atan: lambda x, g: math.atan(x),
    sp.exp: _exp,
    sp.log: _log,
    sp.Abs: lambda x, g: abs(x),
    sp.sign: lambda x, g: float(np.sign(x)),
    sp.Heaviside: lambda x, g: float(np.heaviside(x, 0.5)),
    sp.asin: lambda x, g: math.asin(x) if -1 <= x <= 1 else _raise("asin outside [-1,1]"),
    sp.acos: lambda x, g: math.acos(x) if -1 <= x <= 1 else _raise("acos outside [-1,1]"),
    sp.sinh: lambda x, g: math.sinh(x),
    sp.cosh: lambda x, g: math.cosh(x),
}


def _raise(msg):
    raise DomainError(msg)


Compiled = Callable[[Mapping[sp.Symbol, float], float], float]


@lru_cache(maxsize=4096)
def compile_expr(e: sp.Expr) -> Compiled:
    """Turn ``e`` into a closure ``f(point, guard) -> float``."""
    if e.is_Number:
        if e in (sp.zoo, sp.oo, -sp.oo, sp.nan):
            return lambda env, g: _raise(f"non-finite constant {e}")
        val = float(e)
        return lambda env, g: val
    if e.is_NumberSymbol:
        val = float(e)
        return lambda env, g: val
    if e.is_Symbol:
        def look(env, g, e=e):
            try:
                return float(env[e])
            except KeyError:
                raise UnboundVariable(e.name) from None
        return look
    if e.is_Add:
        parts = [compile_expr(a) for a in e.args]
        return lambda env, g: _finite(math.fsum(p(env, g) for p in parts))
    if e.is_Mul:
        parts = [compile_expr(a) for a in e.args]

        def mul(env, g):
            acc = 1.0
            for p in parts:
                acc *= p(env, g)
            return _finite(acc)
        return mul
    if e.is_Pow:
        base, ex = e.args
        fb = compile_expr(base)
        if ex.is_Number:
            p = float(ex)
            integral = bool(ex.is_Integer)
            return lambda env, g: _pow(fb(env, g), p, g, integral)
        fe = compile_expr(ex)
        return lambda env, g: _pow(fb(env, g), fe(env, g), g, False)
    if isinstance(e, sp.atan2):
        fy, fx = (compile_expr(a) for a in e.args)
        return lambda env, g: _atan2(fy(env, g), fx(env, g), g)
    fn = _UNARY.get(e.func)
    if fn is not None:
        fa = compile_expr(e.args[0])
        return lambda env, g: _finite(fn(fa(env, g), g))
    raise NotImplementedError(f"cannot evaluate {e.func.__name__}")


def evaluate(e, point: Mapping, guard: float = EVAL_GUARD) -> float:
    """Float value of ``e`` at ``point`` (a map from symbols or Variables)."""
    env = {as_symbol(k): v for k, v in point.items()}
    return compile_expr(normalize(e))(env, guard)


def _draw(symbols, boxes, rng):
    point = {}
    for s in symbols:
        lo, hi = boxes.get(s, (-1.0, 1.0)) if boxes else (-1.0, 1.0)
        point[s] = float(rng.uniform(lo, hi))
    return point


def sample_points(exprs: Iterable, n: int, seed: int = 0, boxes=None,
                  guard: float = SAMPLING_GUARD, max_draws: int | None = None):
    """Draw ``n`` points at which every expression in ``exprs`` evaluates.

    Returns ``(points, values)`` where ``values[i][j]`` is expression ``j`` at
    point ``i``.  Raises :class:`NoValidSample` if no draw at all succeeds.
    """
    exprs = [normalize(x) for x in exprs]
    symbols = sorted(set().union(*(x.free_symbols for x in exprs)) if exprs else set(),
                     key=lambda s: s.name)
    fns = [compile_expr(x) for x in exprs]
    rng = np.random.default_rng(seed)
    points, values = [], []
    max_draws = max_draws or 50 * n
    for _ in range(max_draws):
        pt = _draw(symbols, boxes, rng)
        try:
            vals = [f(pt, guard) for f in fns]
        except DomainError:
            continue
        points.append(pt)
        values.append(vals)
        if len(points) == n:
            break
    if not points:
        raise NoValidSample("every sampled point hit a domain error")
    return points, values


def equivalent(e1, e2, trials: int = DEFAULT_TRIALS, tol: float = DEFAULT_TOL,
               seed: int = 0, boxes=None) -> bool:
    """Probabilistic identity test.

    Structural equality short-circuits; otherwise both sides are compared at
    ``trials`` random points (uniform in ``[-1, 1]`` per symbol unless
    ``boxes`` says otherwise), resampling whenever a denominator falls below
    1e-6.  A non-identity that happens to vanish on every sample is reported
    as equivalent; with 20 continuous samples that is unlikely but possible.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    a, b = normalize(e1), normalize(e2)
    if a == b or a - b == 0:
        return True
    _, values = sample_points([a, b], trials, seed=seed, boxes=boxes)
    for va, vb in values:
        if abs(va - vb) > tol * (1 + max(abs(va), abs(vb))):
            return False
    return True


def is_zero(e, **kw) -> bool:
    e = normalize(e)
    if e == 0:
        return True
    try:
        return equivalent(e, 0, **kw)
    except NoValidSample:
        return False


def depends_on(e, v, **kw) -> bool:
    """True iff the partial derivative of ``e`` w.r.t. ``v`` is not identically 0."""
    v = as_symbol(v)
    e = normalize(e)
    if v not in e.free_symbols:
        return False
    return not is_zero(sp.diff(e, v), **kw)
