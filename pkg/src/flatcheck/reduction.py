"""First integrals by quadrature and the (r, n) descent that yields flat outputs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import sympy as sp

from .diffiety import Parametrization, SystemDef, TrivialContext, ord_, pullback
from .errors import (FlatcheckError, PivotVanishes, ReexpressionFailed,
                     UnsupportedClass)
from .exprcore import (depends_on, equivalent, is_zero, jet, normalize, sample_points,
                       split_jet)
from .rouchon import V2, LinearForm, RuledForm, linearity_test, ruled_rewrite

MAX_STEPS = 32
LEVEL_PREFIXES = "ywqabcdefghijklmnopstu"


@dataclass(frozen=True)
class VectorField:
    """``sum_i a_i d/dx_i`` over an explicit coordinate list."""

    coords: tuple[sp.Symbol, ...]
    coeffs: Mapping[sp.Symbol, sp.Expr]

    def __call__(self, e) -> sp.Expr:
        e = normalize(e)
        return sum((normalize(self.coeffs.get(c, 0)) * sp.diff(e, c) for c in self.coords),
                   sp.Integer(0))

    def coefficient(self, c) -> sp.Expr:
        return normalize(self.coeffs.get(c, 0))


def pivot_of(vf: VectorField) -> sp.Symbol:
    """First coordinate with a nonzero constant coefficient, else the first nonzero one."""
    nonzero = [c for c in vf.coords if not is_zero(vf.coefficient(c))]
    if not nonzero:
        raise PivotVanishes("every coefficient of the vector field vanishes")
    for c in nonzero:
        if not vf.coefficient(c).free_symbols:
            return c
    return nonzero[0]


def first_integrals(vf: VectorField, check: bool = True, seed: int = 0) -> list[sp.Expr]:
    """``n - 1`` independent invariants of ``vf`` in the triangular-quadrature class.

    After dividing by the pivot coefficient, every other coefficient may only
    involve the pivot, parameters, and coordinates whose invariants are
    already known; each invariant is then one quadrature along the pivot.
    """
    p = pivot_of(vf)
    a_p = vf.coefficient(p)
    coords = [c for c in vf.coords if c != p]
    b = {c: sp.simplify(vf.coefficient(c) / a_p) for c in coords}
    consts = {c: sp.Dummy(f"k_{c.name}") for c in coords}
    along: dict[sp.Symbol, sp.Expr] = {}   # coordinate as a function of pivot and constants
    invariant: dict[sp.Symbol, sp.Expr] = {}
    pending = []
    for c in coords:
        if b[c] == 0 or is_zero(b[c]):
            along[c] = consts[c]
            invariant[c] = c
        else:
            pending.append(c)
    coordset = set(vf.coords)
    while pending:
        progress = False
        for c in list(pending):
            rhs = b[c].xreplace(along)
            if (rhs.free_symbols & coordset) - {p}:
                continue
            G = sp.integrate(rhs, p)
            if G.has(sp.Integral):
                raise UnsupportedClass(f"no closed-form quadrature of {rhs}", b[c])
            along[c] = consts[c] + G
            back = {consts[k]: invariant[k] for k in invariant}
            invariant[c] = sp.expand(c - G.xreplace(back))
            pending.remove(c)
            progress = True
        if not progress:
            bad = pending[0]
            raise UnsupportedClass(
                f"coefficient of {bad.name} is outside the triangular-quadrature class",
                b[bad])
    ys = [invariant[c] for c in coords]
    if check:
        ann, rank = integral_checks(vf, ys, seed=seed)
        if not ann or rank < len(ys):
            raise UnsupportedClass(f"invariants failed verification (annihilated={ann}, "
                                   f"rank={rank})")
    return ys


def integral_checks(vf: VectorField, ys: Sequence, samples: int = 10, seed: int = 0):
    """(every ``vf(y)`` vanishes, smallest Jacobian rank over ``samples`` points)."""
    annihilated = all(equivalent(vf(y), 0, seed=seed) for y in ys)
    if not ys:
        return annihilated, 0
    jac = [sp.diff(y, c) for y in ys for c in vf.coords]
    _, values = sample_points(jac, samples, seed=seed)
    ncol = len(vf.coords)
    rank = len(ys)
    for vals in values:
        J = np.array(vals, dtype=float).reshape(len(ys), ncol)
        sv = np.linalg.svd(J, compute_uv=False)
        rank = min(rank, int(np.sum(sv > 1e-8 * max(sv[0], 1.0))))
    return annihilated, rank


@dataclass
class ReductionStep:
    branch: str  # "M1Linear" | "M2Linear" | "M2Ruled" | "M2toM1"
    field: VectorField | None
    definitions: dict  # new variable -> expression in the previous level's jets
    system: SystemDef  # the system reached by this step
    before: tuple
    after: tuple = ()
    conditions: list = field(default_factory=list)
    inverse: dict = field(default_factory=dict)
    completion: sp.Expr | None = None
    notes: list = field(default_factory=list)


@dataclass
class ReductionTrace:
    steps: list = field(default_factory=list)
    status: str = "FlatOutputsFound"  # | "ReducedToM1" | "Unsupported"
    reason: str = ""
    notes: list = field(default_factory=list)

    def measures(self) -> list:
        return [s.before for s in self.steps] + ([self.steps[-1].after] if self.steps else [])


# --------------------------------------------------------------------------
# re-expression of the new coordinates as an explicit order-1 system


def _fresh_names(level: int, count: int, taken: set) -> list[str]:
    prefix = LEVEL_PREFIXES[(level - 1) % len(LEVEL_PREFIXES)]
    names, k = [], 1
    while len(names) < count:
        name = f"{prefix}{k}" if level <= len(LEVEL_PREFIXES) else f"{prefix}{k}_{level}"
        if name not in taken:
            names.append(name)
        k += 1
    return names


def _denominators(exprs) -> list[sp.Expr]:
    out = []
    for e in exprs:
        for node in sp.preorder_traversal(normalize(e)):
            if node.is_Pow and node.exp.is_negative and node.base.free_symbols:
                if node.base not in out:
                    out.append(node.base)
    return out


def _old_symbols(s: SystemDef, exprs) -> list[sp.Symbol]:
    syms = set()
    for e in exprs:
        syms |= {x for x in normalize(e).free_symbols if split_jet(x)[0] in s.variables}
    return sorted(syms, key=lambda x: (split_jet(x)[1], x.name))


def build_system(s: SystemDef, defs: Mapping[str, sp.Expr], name: str, m: int = 2,
                 free_hint: Sequence[str] | None = None):
    """Write ``defs`` as a new explicit order-1 system.

    Returns ``(system, inverse, conditions)`` where ``inverse`` expresses the
    old coordinates through the new jets when that could be solved for.
    Raises :class:`ReexpressionFailed` if no choice of free variables works.
    """
    new = list(defs)
    E = {k: sp.simplify(s.total_derivative(defs[k])) for k in new}
    exo = dict(s.exo)
    if len(new) <= m:
        sys_ = SystemDef(name, tuple(new), (), {}, exo)
        inverse, conds = _inverse(s, defs, E, new)
        return sys_, inverse, conds
    order = list(free_hint or []) + [k for k in new if k not in (free_hint or [])]
    if m == 2:
        candidates = [(a, bb) for i, a in enumerate(order) for bb in order[i + 1:]]
    else:
        candidates = [(a,) for a in order]
    for free in candidates:
        built = _try_free(s, defs, E, free, name, exo)
        if built is not None:
            return built
    raise ReexpressionFailed(f"cannot write {new} as an explicit order-1 system")


def _solve_old(s, defs, E, free):
    eqs = [jet(k) - defs[k] for k in defs] + [jet(k, 1) - E[k] for k in free]
    unknowns = _old_symbols(s, list(defs.values()) + [E[k] for k in free])
    try:
        sols = sp.solve(eqs, unknowns, dict=True)
    except (NotImplementedError, ValueError):
        return []
    return sols


def _inverse(s, defs, E, free):
    sols = _solve_old(s, defs, E, free)
    if not sols:
        return {}, []
    sol = sols[0]
    inverse = {split_jet(k)[0]: sp.simplify(v) for k, v in sol.items()
               if split_jet(k)[1] == 0 and not (v.free_symbols & set(sol))}
    return inverse, _denominators(inverse.values())


def _try_free(s, defs, E, free, name, exo):
    allowed = {jet(k) for k in defs} | {jet(k, 1) for k in free} | {jet(u) for u in exo}
    for sol in _solve_old(s, defs, E, free):
        eqs, ok = {}, True
        for k in defs:
            if k in free:
                continue
            h = sp.simplify(E[k].xreplace(sol))
            if not h.free_symbols <= allowed:
                ok = False
                break
            eqs[k] = h
        if not ok:
            continue
        try:
            sys_ = SystemDef(name, tuple(free), tuple(k for k in defs if k not in free), eqs,
                             exo)
        except ValueError:
            continue
        inverse = {split_jet(k)[0]: sp.simplify(v) for k, v in sol.items()
                   if split_jet(k)[1] == 0}
        conds = _denominators(list(inverse.values()) + list(eqs.values()))
        return sys_, inverse, conds
    return None


# --------------------------------------------------------------------------
# one reduction step


def reduce_once(s: SystemDef, form: LinearForm | RuledForm, level: int = 1,
                seed: int = 0):
    """Replace the coordinates by first integrals of the branch's vector field."""
    xs = [jet(v) for v in s.variables]
    notes = []
    if isinstance(form, RuledForm):
        branch = "M2Ruled"
        f = {jet(v): form.f[v] for v in s.variables}
        uses_v2 = any(V2 in normalize(c).free_symbols for c in f.values())
        coords = tuple(jet(v) for v in form.free) + tuple(
            x for x in xs if split_jet(x)[0] not in form.free)
        if uses_v2:
            coords = coords + (V2,)
        vf = VectorField(coords, {**f, V2: sp.Integer(0)} if uses_v2 else f)
        ys = first_integrals(vf, seed=seed)
        ys = [y for y in ys if y != V2]
        if form.branch == "v2=F":
            ys.append(V2)
        ys = [sp.expand(form.expand(y)) for y in ys]
        pivot_var = form.free[0]
        if all(not normalize(c).free_symbols for c in f.values()):
            notes.append("ruled field has constant coefficients; system should be linear")
    else:
        if s.m == 1:
            branch = "M1Linear"
            x1 = s.free[0]
            coeffs = {jet(x1): sp.Integer(1)}
            coeffs.update({jet(st): form.f[st, x1] for st in s.states})
        else:
            branch = "M2Linear"
            x1 = s.free[0]
            coeffs = {jet(x1): sp.Integer(1)}
            coeffs.update({jet(st): form.f[st, x1] for st in s.states})
        vf = VectorField(tuple(xs), coeffs)
        ys = first_integrals(vf, seed=seed)
        pivot_var = x1
    taken = set(s.variables) | set(s.exo)
    names = _fresh_names(level, len(ys), taken)
    defs = dict(zip(names, ys))
    E = {k: s.total_derivative(v) for k, v in defs.items()}
    x1d = jet(pivot_var, 1)
    if branch != "M2Ruled" and any(depends_on(e, x1d) for e in E.values()):
        raise ReexpressionFailed("derivatives of the invariants still involve "
                                 f"{x1d}")
    depends_pivot = any(depends_on(e, jet(pivot_var)) for e in E.values())
    completion = None
    target_m = s.m
    if s.m == 2 and not depends_pivot:
        if branch == "M2Ruled":
            notes.append("invariant derivatives do not depend on the pivot")
        completion = jet(pivot_var)
        target_m = 1
    hint = None
    if branch != "M1Linear":
        other = [v for v in s.free if v != pivot_var]
        hint = [k for k, y in defs.items() if normalize(y) == jet(other[0])]
    new_sys, inverse, conds = build_system(s, defs, f"{s.name}>{level}", target_m, hint)
    pivot_coeff = vf.coefficient(vf.coords[0]) if vf.coords else sp.Integer(1)
    step = ReductionStep(branch, vf, defs, new_sys, (None, s.n), (None, new_sys.n),
                         conds, inverse, completion, notes)
    if pivot_coeff.free_symbols:
        step.conditions.append(pivot_coeff)
    return new_sys, step


# --------------------------------------------------------------------------
# driver


@dataclass
class FlatOutputCandidate:
    """Candidate flat outputs ``b_1..b_m`` expressed in system variables.

    ``inverse`` optionally maps system variables to expressions in the jets
    of ``b1, b2, ...``; ``conditions`` must be nonzero on the chart.
    """

    system: str
    outputs: list
    inverse: dict = field(default_factory=dict)
    conditions: list = field(default_factory=list)
    boxes: dict = field(default_factory=dict)
    name: str = ""


class _Composer:
    """Pull expressions of a reduction level back to the original system."""

    def __init__(self, systems: Sequence[SystemDef], steps: Sequence[ReductionStep]):
        self.systems = systems
        self.steps = steps
        self._cache = {}

    def to_original(self, e, level: int) -> sp.Expr:
        e = normalize(e)
        while level > 0:
            e = self._down(e, level)
            level -= 1
        return e

    def _down(self, e, level):
        step = self.steps[level - 1]
        prev = self.systems[level - 1]
        subs = {}
        for s_ in e.free_symbols:
            base, k = split_jet(s_)
            if base in step.definitions:
                key = (level, base, k)
                if key not in self._cache:
                    self._cache[key] = prev.nth_derivative(step.definitions[base], k)
                subs[s_] = self._cache[key]
        return e.xreplace(subs) if subs else e


def _measure(composer, level, system, p, chart, z1):
    if p is None:
        return (None, system.n)
    orig = composer.systems[0]
    r = max(ord_(pullback(p, chart, composer.to_original(jet(v), level), orig), z1)
            for v in system.variables)
    return (r if r != -math.inf else "-inf", system.n)


def _less(a, b) -> bool:
    if a[0] is None or b[0] is None:
        return a[1] < b[1]
    ra = -math.inf if a[0] == "-inf" else a[0]
    rb = -math.inf if b[0] == "-inf" else b[0]
    return (ra, a[1]) < (rb, b[1])


def compute_flat_outputs(s: SystemDef, p: Parametrization | None = None, z1: str = "z1",
                         chart=None, seed: int = 0, max_steps: int = MAX_STEPS):
    """Run the descent; return ``(candidate or None, trace)``."""
    trace = ReductionTrace()
    systems = [s]
    composer = _Composer(systems, trace.steps)
    chart_obj = p.chart(chart) if p is not None else None
    completions: list[tuple[int, sp.Expr]] = []
    cur = s
    try:
        measure = _measure(composer, 0, cur, p, chart_obj, z1)
        for level in range(1, max_steps + 1):
            if cur.n <= cur.m:
                break
            if cur.m == 2:
                dep = [any(depends_on(cur.equations[st], jet(v, 1)) for st in cur.states)
                       for v in cur.free]
                if not any(dep):
                    return _fail(trace, "equations involve no free derivative")
                keep = cur.free[dep.index(True)]
                drop = [v for v in cur.free if v != keep][0]
                if not all(dep) and not any(depends_on(cur.equations[st], jet(drop))
                                            for st in cur.states):
                    sub = SystemDef(f"{cur.name}>{level}", (keep,), cur.states,
                                    dict(cur.equations), dict(cur.exo))
                    step = ReductionStep("M2toM1", None, {v: jet(v) for v in sub.variables},
                                         sub, measure, completion=jet(drop))
                    new = sub
                else:
                    if not all(dep) and cur.free[0] != keep:
                        cur = SystemDef(cur.name, (keep, drop), cur.states,
                                        dict(cur.equations), dict(cur.exo), cur.constraints)
                        systems[-1] = cur
                    lt = linearity_test(cur)
                    if lt.linear:
                        new, step = reduce_once(cur, lt.form, level, seed)
                    else:
                        rf = ruled_rewrite(cur, seed=seed)
                        new, step = reduce_once(cur, rf, level, seed)
            else:
                lt = linearity_test(cur)
                if not lt.linear:
                    return _fail(trace, "m=1 system is not linear in the free derivative")
                new, step = reduce_once(cur, lt.form, level, seed)
            systems.append(new)
            trace.steps.append(step)
            step.before = measure
            step.after = _measure(composer, level, new, p, chart_obj, z1)
            if not _less(step.after, step.before):
                if p is None and step.after[1] == step.before[1]:
                    step.notes.append("descent not verifiable without a parametrization")
                else:
                    return _fail(trace, f"measure did not decrease: {step.before} -> "
                                        f"{step.after}")
            if step.completion is not None:
                completions.append((level - 1, step.completion))
            measure = step.after
            cur = new
        else:
            return _fail(trace, f"NonTerminating: more than {max_steps} steps")
    except (FlatcheckError, NotImplementedError) as exc:
        return _fail(trace, f"{type(exc).__name__}: {exc}")
    top = len(trace.steps)
    outputs = [composer.to_original(jet(v), top) for v in cur.variables]
    outputs += [composer.to_original(e, lvl) for lvl, e in reversed(completions)]
    outputs = [sp.simplify(o) for o in outputs]
    conditions = []
    for i, step in enumerate(trace.steps):
        for c in step.conditions:
            c = sp.simplify(composer.to_original(c, i + 1) if _in_level(c, step)
                            else composer.to_original(c, i))
            if c.could_extract_minus_sign():
                c = -c  # only nonvanishing matters
            if not c.is_number and not any(sp.simplify(c - d) == 0 or sp.simplify(c + d) == 0
                                           for d in conditions):
                conditions.append(c)
    inverse = _compose_inverse(trace, systems, cur) if not completions else {}
    if any(st.branch == "M2toM1" for st in trace.steps) or (s.m == 2 and cur.m == 1):
        trace.notes.append("reduced to m=1 and completed")
    cand = FlatOutputCandidate(s.name, outputs, inverse, conditions, name="reduced")
    return cand, trace


def _in_level(c, step):
    return bool({split_jet(x)[0] for x in normalize(c).free_symbols} & set(step.definitions))


def _compose_inverse(trace, systems, top) -> dict:
    """Original variables in terms of the jets of ``b1, b2`` (the top-level variables)."""
    if not trace.steps:
        return {}
    rename = {v: f"b{i + 1}" for i, v in enumerate(top.variables)}
    ctx = TrivialContext(tuple(rename.values()), dict(systems[0].exo))
    current = {v: jet(b) for v, b in rename.items()}
    for step, lower in zip(reversed(trace.steps), reversed(systems[:-1])):
        if not step.inverse or set(step.inverse) != set(lower.variables):
            return {}
        nxt = {}
        for v, expr in step.inverse.items():
            subs = {}
            for sym in normalize(expr).free_symbols:
                base, k = split_jet(sym)
                if base in current:
                    subs[sym] = ctx.nth_derivative(current[base], k)
            nxt[v] = sp.simplify(normalize(expr).xreplace(subs))
        current = nxt
    return current


def _fail(trace, reason):
    trace.status = "Unsupported"
    trace.reason = reason
    return None, trace
