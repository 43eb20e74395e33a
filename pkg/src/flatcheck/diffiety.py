"""Systems, parametrizations, total derivatives and pullbacks on truncated jets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import sympy as sp

from .errors import (ChartIncomplete, DomainError, SamplingExhausted,
                     TruncationTooSmall, UnknownVariable)
from .exprcore import (NON_SMOOTH, SAMPLING_GUARD, compile_expr, depends_on, jet,
                       max_order, normalize, partial_derivative, split_jet)

DEFAULT_K = 8
DEFAULT_GUARD = 1e-3
MAX_RESAMPLES = 1000


class _Context:
    """Something that knows how to differentiate its own coordinates."""

    exo: Mapping[str, sp.Expr]

    def _derivative_of_symbol(self, sym: sp.Symbol) -> sp.Expr:
        raise NotImplementedError

    def total_derivative(self, e, constants: Iterable = ()) -> sp.Expr:
        e = normalize(e)
        consts = {c if isinstance(c, sp.Symbol) else sp.Symbol(c) for c in constants}
        cache = self._cache
        key = ("d", e, frozenset(consts))
        if key in cache:
            return cache[key]
        seeds = {}
        for s in e.free_symbols:
            if s not in consts:
                ds = self._derivative_of_symbol(s)
                if ds != 0:
                    seeds[s] = ds
        try:
            out = _derivation(e, seeds, {})
        except _NoChainRule:
            out = sp.Add(*[partial_derivative(e, s) * seeds[s]
                           for s in sorted(seeds, key=lambda s: s.name)])
        cache[key] = out
        return out

    def nth_derivative(self, e, k: int, constants: Iterable = ()) -> sp.Expr:
        for _ in range(k):
            e = self.total_derivative(e, constants)
        return normalize(e)

    def _exo_jet(self, base: str, order: int) -> sp.Expr:
        key = ("exo", base, order)
        if key not in self._cache:
            if order == 0:
                val = jet(base)
            elif order == 1:
                val = normalize(self.exo[base])
            else:
                val = self.total_derivative(self._exo_jet(base, order - 1))
            self._cache[key] = val
        return self._cache[key]


@dataclass(frozen=True, eq=False)
class TrivialContext(_Context):
    """The trivial diffiety: arbitrary functions whose jets just shift."""

    arbitrary: tuple[str, ...]
    exo: Mapping[str, sp.Expr] = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def _derivative_of_symbol(self, sym):
        base, k = split_jet(sym)
        if base in self.arbitrary:
            return jet(base, k + 1)
        if base in self.exo:
            return self._exo_jet(base, k + 1)
        raise UnknownVariable(f"{sym} is not a coordinate of the trivial context")


@dataclass(frozen=True, eq=False)
class SystemDef(_Context):
    """An explicit order-1 system ``x_i' = h_i(x, x_1', x_2', u)``.

    ``free`` holds the one or two free variables, ``equations`` maps every
    state to its right-hand side, ``exo`` maps exogenous variables to their
    declared derivative, and ``constraints`` are extra relations ``H = 0``
    that may involve derivatives of any variable.
    """

    name: str
    free: tuple[str, ...]
    states: tuple[str, ...]
    equations: Mapping[str, sp.Expr]
    exo: Mapping[str, sp.Expr] = field(default_factory=dict)
    constraints: tuple[sp.Expr, ...] = ()
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 1 <= len(self.free) <= 2:
            raise ValueError("differential dimension must be 1 or 2")
        names = list(self.free) + list(self.states) + list(self.exo)
        if len(set(names)) != len(names):
            raise ValueError("variable declared twice")
        if set(self.equations) != set(self.states):
            raise ValueError("every state needs exactly one equation")
        allowed = ({jet(v) for v in self.variables} | {jet(v, 1) for v in self.free}
                   | {jet(u) for u in self.exo})
        for st, h in self.equations.items():
            extra = normalize(h).free_symbols - allowed
            if extra:
                raise ValueError(f"equation of {st} is not in explicit order-1 form: "
                                 f"{sorted(s.name for s in extra)}")

    @property
    def m(self) -> int:
        return len(self.free)

    @property
    def n(self) -> int:
        return len(self.free) + len(self.states)

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(self.free) + tuple(self.states)

    def residuals(self) -> dict[str, sp.Expr]:
        """``P_i = x_i' - h_i`` for every state."""
        return {s: jet(s, 1) - normalize(self.equations[s]) for s in self.states}

    def constraint_orders(self, H) -> dict[str, int | float]:
        return {v: max_order(H, v) for v in self.variables}

    def state_jet(self, base: str, order: int) -> sp.Expr:
        """``x^{(order)}`` expressed through states, free jets and exogenous values."""
        key = ("state", base, order)
        if key not in self._cache:
            if order == 0:
                val = jet(base)
            elif order == 1:
                val = normalize(self.equations[base])
            else:
                val = self.total_derivative(self.state_jet(base, order - 1))
            self._cache[key] = val
        return self._cache[key]

    def reduce(self, e) -> sp.Expr:
        """Eliminate state derivatives using the equations."""
        e = normalize(e)
        subs = {}
        for s in e.free_symbols:
            base, k = split_jet(s)
            if base in self.states and k > 0:
                subs[s] = self.state_jet(base, k)
        return e.xreplace(subs) if subs else e

    def _derivative_of_symbol(self, sym):
        base, k = split_jet(sym)
        if base in self.free:
            return jet(base, k + 1)
        if base in self.states:
            return self.state_jet(base, k + 1)
        if base in self.exo:
            return self._exo_jet(base, k + 1)
        raise UnknownVariable(f"{sym} is not a variable of system {self.name}")

    def coordinates(self, order: int) -> list[sp.Symbol]:
        """Jet coordinates of the system up to free-jet order ``order``."""
        coords = [jet(s) for s in self.states]
        for f in self.free:
            coords += [jet(f, k) for k in range(order + 1)]
        coords += [jet(u) for u in self.exo]
        return coords


class _NoChainRule(Exception):
    pass


def _derivation(e, seeds: Mapping, memo: dict) -> sp.Expr:
    """One pass of the chain rule for the derivation with ``D(s) = seeds[s]``."""
    if e in memo:
        return memo[e]
    if not (e.free_symbols & seeds.keys()):
        out = sp.Integer(0)
    elif e.is_Symbol:
        out = seeds[e]
    elif e.is_Add:
        out = sp.Add(*[_derivation(a, seeds, memo) for a in e.args])
    elif e.is_Mul:
        args = e.args
        out = sp.Add(*[sp.Mul(*args[:i], _derivation(a, seeds, memo), *args[i + 1:])
                       for i, a in enumerate(args)])
    elif e.is_Pow:
        b, x = e.args
        db = _derivation(b, seeds, memo)
        if x.free_symbols & seeds.keys():
            out = e * (_derivation(x, seeds, memo) * sp.log(b) + x * db / b)
        else:
            out = x * b ** (x - 1) * db
    elif isinstance(e, sp.Function) and not isinstance(e, NON_SMOOTH):
        terms = []
        for i, a in enumerate(e.args):
            da = _derivation(a, seeds, memo)
            if da != 0:
                terms.append(e.fdiff(i + 1) * da)
        out = sp.Add(*terms)
    else:
        raise _NoChainRule(type(e).__name__)
    memo[e] = out
    return out


def total_derivative(e, ctx: _Context, constants: Iterable = ()) -> sp.Expr:
    return ctx.total_derivative(e, constants)


def ord_(e, base: str, **kw) -> int | float:
    """Highest ``k`` such that ``e`` really depends on ``base^{(k)}``; ``-inf`` if none."""
    e = normalize(e)
    orders = sorted({k for b, k in map(split_jet, e.free_symbols) if b == base}, reverse=True)
    for k in orders:
        if depends_on(e, jet(base, k), **kw):
            return k
    return -math.inf


@dataclass(frozen=True, eq=False)
class Chart:
    """One chart of a parametrization: the maps plus its sampling domain."""

    name: str
    maps: Mapping[str, sp.Expr]
    exclusions: tuple[sp.Expr, ...] = ()
    boxes: Mapping[sp.Symbol, tuple[float, float]] = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True, eq=False)
class Parametrization:
    name: str
    system: str
    arbitrary: tuple[str, ...]
    charts: tuple[Chart, ...]
    exo: Mapping[str, sp.Expr] = field(default_factory=dict)

    @property
    def mu(self) -> int:
        return len(self.arbitrary)

    def context(self, system: SystemDef | None = None) -> TrivialContext:
        key = id(system)
        cache = self.__dict__.setdefault("_contexts", {})
        if key not in cache:
            exo = dict(system.exo) if system is not None else {}
            exo.update(self.exo)
            cache[key] = (system, TrivialContext(tuple(self.arbitrary), exo))
        return cache[key][1]

    def chart(self, name: str | None) -> Chart:
        if name is None:
            return self.charts[0]
        for c in self.charts:
            if c.name == name:
                return c
        raise KeyError(f"parametrization {self.name} has no chart {name}")


def _prolonged_map(p: Parametrization, chart: Chart, ctx: TrivialContext,
                   base: str, order: int) -> sp.Expr:
    key = (id(ctx), base, order)
    if key not in chart._cache:
        if order == 0:
            val = normalize(chart.maps[base])
        else:
            val = ctx.total_derivative(_prolonged_map(p, chart, ctx, base, order - 1))
        chart._cache[key] = val
    return chart._cache[key]


def pullback(p: Parametrization, chart: Chart | str | None, e, system: SystemDef) -> sp.Expr:
    """``phi*(e)``: express ``e`` through the arbitrary functions of ``chart``.

    Symbols that are neither system variables nor exogenous (ghosts, auxiliary
    parameters) are left untouched.
    """
    if not isinstance(chart, Chart):
        chart = p.chart(chart)
    ctx = p.context(system)
    e = normalize(e)
    subs = {}
    for s in e.free_symbols:
        base, k = split_jet(s)
        if base in chart.maps:
            subs[s] = _prolonged_map(p, chart, ctx, base, k)
        elif base in system.variables:
            raise ChartIncomplete(f"chart {chart.name} does not map {base}")
        elif base in ctx.exo and k > 0:
            subs[s] = ctx._exo_jet(base, k)
    return e.xreplace(subs) if subs else e


@dataclass
class JetPoint:
    """Numeric values of the jets of the arbitrary functions up to order K."""

    values: dict
    K: int
    arbitrary: tuple[str, ...] = ()

    def evaluate(self, e, guard: float = 1e-12) -> float:
        e = normalize(e)
        needed = max((k for b, k in map(split_jet, e.free_symbols) if b in self.arbitrary),
                     default=0)
        if needed > self.K:
            raise TruncationTooSmall(needed, self.K)
        return compile_expr(e)(self.values, guard)


def sample_jet(p: Parametrization, chart: Chart | str | None, K: int, rng,
               system: SystemDef | None = None, require: Iterable = (),
               guard: float = DEFAULT_GUARD) -> JetPoint:
    """Draw a jet inside ``chart``'s box that passes every exclusion guard.

    ``require`` lists extra expressions that must evaluate without a domain
    error at the returned point.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if not isinstance(chart, Chart):
        chart = p.chart(chart)
    ctx = p.context(system)
    checks = [normalize(x) for x in chart.exclusions]
    musts = [normalize(v) for v in chart.maps.values()] + [normalize(x) for x in require]
    exo_exprs = {(u, k): ctx._exo_jet(u, k) for u in ctx.exo for k in range(1, K + 1)}
    for _ in range(MAX_RESAMPLES):
        vals = {}
        for z in p.arbitrary:
            for k in range(K + 1):
                s = jet(z, k)
                lo, hi = chart.boxes.get(s, (-1.0, 1.0))
                vals[s] = float(rng.uniform(lo, hi))
        for u in ctx.exo:
            s = jet(u)
            lo, hi = chart.boxes.get(s, (-1.0, 1.0))
            vals[s] = float(rng.uniform(lo, hi))
        pt = JetPoint(vals, K, tuple(p.arbitrary))
        try:
            for (u, k), ex in exo_exprs.items():
                vals[jet(u, k)] = pt.evaluate(ex)
            if any(abs(pt.evaluate(x, SAMPLING_GUARD)) <= guard for x in checks):
                continue
            for x in musts:
                pt.evaluate(x, SAMPLING_GUARD)
        except DomainError:
            continue
        return pt
    raise SamplingExhausted(f"no admissible jet in chart {chart.name} after "
                            f"{MAX_RESAMPLES} draws")


@dataclass
class MorphismReport:
    verdict: str
    max_residual: float
    per_chart: dict
    trials: int
    tol: float
    seed: int
    K: int
    rank: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def morphism_residuals(s: SystemDef, p: Parametrization, chart: Chart) -> dict[str, sp.Expr]:
    out = {f"P[{k}]": pullback(p, chart, v, s) for k, v in s.residuals().items()}
    for i, H in enumerate(s.constraints):
        out[f"H[{i}]"] = pullback(p, chart, H, s)
    return out


def check_morphism(s: SystemDef, p: Parametrization, trials: int = 100, tol: float = 1e-8,
                   K: int = DEFAULT_K, seed: int = 0, charts: Iterable[str] | None = None
                   ) -> MorphismReport:
    """Residuals of every equation and constraint under the pullback.

    Density of the image is not checked; instead the report records the
    smallest rank of the differential of ``(phi*(x_i))`` seen over the samples.
    """
    rng = np.random.default_rng(seed)
    per_chart, ranks = {}, {}
    worst = 0.0
    chosen = [p.chart(c) for c in charts] if charts else list(p.charts)
    for chart in chosen:
        missing = [v for v in s.variables if v not in chart.maps]
        if missing:
            raise ChartIncomplete(f"chart {chart.name} does not map {missing}")
        res = morphism_residuals(s, p, chart)
        pulled = [pullback(p, chart, jet(v), s) for v in s.variables]
        zs = sorted(set().union(*(e.free_symbols for e in pulled)), key=lambda x: x.name)
        jac = [[sp.diff(e, z) for z in zs] for e in pulled]
        stats = {k: 0.0 for k in res}
        min_rank = s.n
        for _ in range(trials):
            pt = sample_jet(p, chart, K, rng, s, require=res.values())
            for k, e in res.items():
                stats[k] = max(stats[k], abs(pt.evaluate(e)))
            if zs:
                J = np.array([[pt.evaluate(d) for d in row] for row in jac], dtype=float)
                sv = np.linalg.svd(J, compute_uv=False)
                min_rank = min(min_rank, int(np.sum(sv > 1e-8 * max(sv[0], 1.0))))
            else:
                min_rank = 0
        per_chart[chart.name] = stats
        ranks[chart.name] = min_rank
        if stats:
            worst = max(worst, max(stats.values()))
    verdict = "pass" if worst <= tol else "fail"
    return MorphismReport(verdict, worst, per_chart, trials, tol, seed, K, ranks)
