"""Ghost-operator iteration, ruled normal forms and the tangent checks.

The ghost operator ``D = sum C_i d/dx_i^{(e_i)}`` treats every ghost ``C_i``
as a constant.  Iterating it on an equation polynomial in the targeted
derivatives produces forms homogeneous in the ghosts; their real projective
zero set tells linear, ruled and non-ruled systems apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import sympy as sp

from .diffiety import (DEFAULT_K, Chart, Parametrization, SystemDef, ord_, pullback,
                       sample_jet)
from .errors import (AmbiguousRay, NonPolynomialTarget, NotRuled,
                     ScopeExceeded)
from .exprcore import (depends_on, equivalent, is_zero, jet, normalize,
                       sample_points)

MAX_GHOSTS = 4
V2 = sp.Symbol("v2")


def ghost(i: int) -> sp.Symbol:
    return sp.Symbol(f"C{i}")


@dataclass(frozen=True)
class GhostOperator:
    targets: tuple[sp.Symbol, ...]
    ghosts: tuple[sp.Symbol, ...]

    @classmethod
    def for_targets(cls, targets: Sequence, indices: Sequence[int] | None = None):
        targets = tuple(jet(t[0], t[1]) if isinstance(t, tuple) else t for t in targets)
        indices = indices or range(1, len(targets) + 1)
        return cls(targets, tuple(ghost(i) for i in indices))

    def __call__(self, e) -> sp.Expr:
        e = normalize(e)
        return sp.expand(sum((c * sp.diff(e, t) for c, t in zip(self.ghosts, self.targets)),
                             sp.Integer(0)))


def build_and_iterate_ghost(P, targets: Sequence, kmax: int | None = None,
                            ghost_indices: Sequence[int] | None = None) -> list[sp.Expr]:
    """``[P, DP, D^2 P, ...]`` up to and including the first zero element.

    ``targets`` are jet symbols (or ``(name, order)`` pairs); ghost ``C_i`` is
    attached to the ``i``-th target unless ``ghost_indices`` says otherwise.
    """
    D = GhostOperator.for_targets(targets, ghost_indices)
    P = normalize(P)
    if not P.is_polynomial(*D.targets):
        raise NonPolynomialTarget(f"{P} is not polynomial in {list(D.targets)}")
    degree = sp.Poly(P, *D.targets).total_degree() if D.targets else 0
    kmax = degree if kmax is None else kmax
    if degree > kmax:
        raise ValueError(f"degree {degree} exceeds kmax={kmax}")
    out = [P]
    cur = P
    for _ in range(degree + 1):
        cur = D(cur)
        out.append(cur)
        if cur == 0:
            break
    return out


def clear_denominators(P, targets: Sequence[sp.Symbol]) -> sp.Expr:
    """Numerator of ``P`` when it is rational in ``targets``; same zero set off the poles."""
    P = normalize(P)
    if P.is_polynomial(*targets):
        return P
    num, _ = sp.fraction(sp.together(P))
    num = sp.expand(num)
    if not num.is_polynomial(*targets):
        raise NonPolynomialTarget(f"{P} is not rational in {list(targets)}")
    return num


@dataclass
class HomogeneousSystem:
    forms: list[sp.Expr]
    ghosts: tuple[sp.Symbol, ...]
    degrees: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.forms = [normalize(f) for f in self.forms if normalize(f) != 0]
        self.degrees = [ghost_degree(f, self.ghosts) for f in self.forms]

    @classmethod
    def from_iterates(cls, iterates: Sequence[Sequence[sp.Expr]], ghosts, reduce=None):
        forms = []
        for seq in iterates:
            for f in seq[1:]:
                forms.append(sp.expand(reduce(f)) if reduce else f)
        return cls(forms, tuple(ghosts))


def ghost_degree(form, ghosts) -> int:
    """Degree of a ghost-homogeneous form; ValueError if not homogeneous."""
    poly = sp.Poly(form, *ghosts)
    degs = {sum(m) for m in poly.monoms()}
    if len(degs) != 1:
        raise ValueError(f"{form} is not homogeneous in the ghosts")
    return degs.pop()


@dataclass
class Classification:
    kind: str  # "EmptyOverReals" | "Dim0" | "DimAtLeast1"
    rays: list[tuple] = field(default_factory=list)
    witness: object = None
    method: str = "symbolic"


def _value_at(e, base_point) -> complex:
    e = normalize(e)
    val = e.xreplace({k: sp.Float(v, 30) for k, v in base_point.items()})
    return complex(sp.N(val, 30))


def _sos_witness(hs: HomogeneousSystem, base_point):
    for f, d in zip(hs.forms, hs.degrees):
        if d != 2:
            continue
        gs = [g for g in hs.ghosts if g in f.free_symbols]
        H = sp.hessian(f, gs)
        M = np.array([[_value_at(H[i, j], base_point).real for j in range(len(gs))]
                      for i in range(len(gs))])
        ev = np.linalg.eigvalsh(M)
        if np.all(ev > 1e-12) or np.all(ev < -1e-12):
            return f
    return None


def _solve_charts(forms, ghosts, base_point, tol=1e-9):
    """Walk the affine charts ``C_i = 1, C_j = 0 (j < i)`` of projective space."""
    rays, positive = [], None
    g = len(ghosts)
    for i in range(g):
        fixed = {ghosts[j]: 0 for j in range(i)}
        fixed[ghosts[i]] = 1
        unknowns = list(ghosts[i + 1:])
        eqs = [sp.expand(f.xreplace(fixed)) for f in forms]
        eqs = [e for e in eqs if e != 0]
        if any(e.free_symbols.isdisjoint(unknowns) and abs(_value_at(e, base_point)) > tol
               for e in eqs):
            continue
        eqs = [e for e in eqs if not e.free_symbols.isdisjoint(unknowns)]
        if not eqs:
            if unknowns:
                positive = {str(u): "free" for u in unknowns}
                return rays, positive
            rays.append(tuple(fixed[c] for c in ghosts))
            continue
        sols = sp.solve(eqs, unknowns, dict=True)
        for sol in sols:
            free = [u for u in unknowns if u not in sol]
            if free or any(not v.free_symbols.isdisjoint(unknowns) for v in sol.values()):
                positive = {str(k): str(v) for k, v in sol.items()}
                positive.update({str(u): "free" for u in free})
                return rays, positive
            try:
                vals = [_value_at(v, base_point) for v in sol.values()]
            except (TypeError, ValueError):
                continue
            if any(abs(v.imag) > tol * (1 + abs(v.real)) for v in vals):
                continue
            ray = tuple(sp.simplify(sol[c]) if c in sol else sp.Integer(fixed[c])
                        for c in ghosts)
            rays.append(ray)
    return rays, positive


def projective_solution_set(hs: HomogeneousSystem, base_point: Mapping) -> Classification:
    """Classify the real projective zero set of the ghost forms.

    Coefficients stay symbolic; ``base_point`` decides reality of the roots
    and whether coefficient-only equations vanish.  Forms of ghost degree
    above 2 are solved exactly after substituting a rationalised base point.
    """
    ghosts = hs.ghosts
    if len(ghosts) > MAX_GHOSTS:
        raise ScopeExceeded(f"{len(ghosts)} ghosts; at most {MAX_GHOSTS} supported")
    base_point = {k if isinstance(k, sp.Symbol) else sp.Symbol(str(k)): v
                  for k, v in base_point.items()}
    forms = hs.forms
    method = "symbolic"
    if any(d > 2 for d in hs.degrees):
        method = "numeric"
        rat = {k: sp.nsimplify(v, rational=True) for k, v in base_point.items()}
        forms = [sp.expand(f.xreplace(rat)) for f in forms]
    rays, positive = _solve_charts(forms, ghosts, base_point)
    if positive is not None:
        return Classification("DimAtLeast1", [], positive, method)
    if rays:
        return Classification("Dim0", rays, None, method)
    return Classification("EmptyOverReals", [], _sos_witness(hs, base_point), method)


# --------------------------------------------------------------------------
# linearity and ruled forms


@dataclass
class LinearForm:
    """``h_i = sum_j f[i, j] x_j' + g[i]``."""

    f: dict
    g: dict


@dataclass
class LinearityResult:
    linear: bool
    form: LinearForm | None = None
    witness: tuple | None = None  # (state, (free_a, free_b), second derivative)


def linearity_test(s: SystemDef) -> LinearityResult:
    frees = [jet(v, 1) for v in s.free]
    for st in s.states:
        h = normalize(s.equations[st])
        for a in range(len(frees)):
            for b in range(a, len(frees)):
                d2 = sp.diff(h, frees[a], frees[b])
                if not is_zero(d2):
                    return LinearityResult(False, witness=(st, (s.free[a], s.free[b]), d2))
    f, g = {}, {}
    zero = {d: 0 for d in frees}
    for st in s.states:
        h = normalize(s.equations[st])
        for v, d in zip(s.free, frees):
            f[st, v] = sp.simplify(sp.diff(h, d).xreplace(zero))
        g[st] = sp.simplify(h.xreplace(zero))
    return LinearityResult(True, LinearForm(f, g))


@dataclass
class RuledForm:
    """``x_i' = f_i(x, v2, u) v1 + g_i(x, v2, u)`` with ``v1 = x_1'``.

    ``f`` and ``g`` are written in the symbol :data:`V2`; ``v2`` holds its
    definition in terms of ``x, x_1', x_2'``.  ``free`` is the free pair in
    the order actually used (it may be swapped with respect to the system).
    """

    v1: sp.Expr
    v2: sp.Expr
    f: dict
    g: dict
    free: tuple[str, str]
    branch: str
    ray: tuple
    classification: Classification | None = None

    def expand(self, e) -> sp.Expr:
        return normalize(e).xreplace({V2: self.v2})


def ruled_forms_system(s: SystemDef, order: Sequence[str] | None = None):
    """The iterated ghost forms of every ``P_i``, with state derivatives eliminated."""
    order = tuple(order or s.variables)
    targets = [jet(v, 1) for v in order]
    ghosts = tuple(ghost(i + 1) for i in range(len(order)))
    iterates = []
    for P in s.residuals().values():
        iterates.append(build_and_iterate_ghost(clear_denominators(P, targets), targets))
    sub = {jet(st, 1): normalize(s.equations[st]) for st in s.states}
    return HomogeneousSystem.from_iterates(iterates, ghosts, lambda f: f.xreplace(sub))


def default_base_point(exprs, seed: int = 0) -> dict:
    points, _ = sample_points(exprs, 1, seed=seed)
    return points[0]


def ruled_rewrite(s: SystemDef, ray_index: int = 0, seed: int = 0,
                  base_point: Mapping | None = None) -> RuledForm:
    """Rewrite a non-linear two-input system in ruled normal form."""
    if s.m != 2:
        raise NotRuled("ruled rewriting needs differential dimension 2")
    lt = linearity_test(s)
    if lt.linear:
        raise NotRuled("system is linear in the free derivatives")
    hs = ruled_forms_system(s)
    if base_point is None:
        coeffs = [c for f in hs.forms for c in sp.Poly(f, *hs.ghosts).coeffs()]
        base_point = default_base_point(coeffs or [sp.Integer(1)], seed)
    cls = projective_solution_set(hs, base_point)
    if cls.kind != "Dim0":
        err = NotRuled(f"ghost forms have classification {cls.kind}")
        err.classification = cls
        raise err
    if not 0 <= ray_index < len(cls.rays):
        raise AmbiguousRay(f"ray index {ray_index} out of range ({len(cls.rays)} rays)")
    ray = list(cls.rays[ray_index])
    free = tuple(s.free)
    if is_zero(ray[0]):
        if is_zero(ray[1]):
            raise NotRuled("ray has no component along the free derivatives")
        ray[0], ray[1] = ray[1], ray[0]
        free = free[::-1]
    x1d, x2d = jet(free[0], 1), jet(free[1], 1)
    F = sp.simplify(ray[1] / ray[0])
    if depends_on(F, x2d):
        branch = "v2=F"
        v2 = F
        sols = sp.solve(sp.Eq(V2, F), x2d, dict=True)
        if not sols:
            raise NotRuled(f"cannot solve v2 = {F} for {x2d}")
        back = sols[0][x2d]
        f = {free[0]: sp.Integer(1), free[1]: V2}
        g = {free[0]: sp.Integer(0), free[1]: None}
    else:
        if depends_on(F, x1d):
            raise NotRuled(f"ruling direction {F} depends on {x1d}")
        branch = "f2=F"
        v2 = sp.expand(x2d - F * x1d)
        back = V2 + F * x1d
        f = {free[0]: sp.Integer(1), free[1]: F}
        g = {free[0]: sp.Integer(0), free[1]: V2}

    def in_v2(expr, what):
        out = sp.simplify(normalize(expr).xreplace({x2d: back}))
        if depends_on(out, x1d):
            raise NotRuled(f"{what} = {out} cannot be written without {x1d}")
        if x1d in out.free_symbols:
            out = sp.simplify(out.xreplace({x1d: 1}))
        return out

    if branch == "v2=F":
        g[free[1]] = in_v2(x2d - V2 * x1d, f"g_{free[1]}")
    for i, st in enumerate(s.variables):
        if st in free:
            continue
        fi = in_v2(ray[i] / ray[0], f"f_{st}")
        f[st] = fi
        g[st] = in_v2(normalize(s.equations[st]) - fi.xreplace({V2: v2}) * x1d, f"g_{st}")
    rf = RuledForm(x1d, v2, f, g, free, branch, tuple(ray), cls)
    for st in s.variables:
        lhs = normalize(s.equations[st]) if st in s.states else jet(st, 1)
        rhs = rf.expand(f[st]) * x1d + rf.expand(g[st])
        if not equivalent(lhs, rhs, seed=seed):
            raise NotRuled(f"round trip failed for {st}")
    return rf


# --------------------------------------------------------------------------
# parametrization-side checks


@dataclass
class RouchonReport:
    verdict: str  # "pass" | "fail" | "NotApplicable"
    reason: str = ""
    r: dict = field(default_factory=dict)
    orders: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    trials: int = 0
    tol: float = 0.0
    seed: int = 0
    K: int = DEFAULT_K

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def _equation_orders(s: SystemDef, polys) -> dict:
    orders = {}
    for v in s.variables:
        ks = [ord_(P, v) for P in polys]
        orders[v] = max(ks) if ks else -math.inf
    return orders


def tangent_tuple(s: SystemDef, p: Parametrization, chart: Chart, z1: str, r: int,
                  orders: Mapping[str, float]) -> dict:
    """``d phi*(x_i) / d z1^{(r)}`` for every variable with positive order."""
    return {v: sp.diff(pullback(p, chart, jet(v), s), jet(z1, r))
            for v in s.variables if orders[v] > 0}


def rouchon_checks(s: SystemDef, p: Parametrization, H=None, ruled: RuledForm | None = None,
                   z1: str = "z1", trials: int = 50, tol: float = 1e-8,
                   K: int = DEFAULT_K, seed: int = 0, charts=None) -> RouchonReport:
    """Numerically verify the tangent-annihilation and ruling identities.

    With ``H`` the checks use that single relation; otherwise every state
    equation ``P_i`` is used.  The tangent tuple is ``d x_i / d z1^{(r)}``,
    which equals ``d x_i^{(e_i)} / d z1^{(r+e_i)}`` (checked as well).
    """
    polys = [normalize(H)] if H is not None else list(s.residuals().values())
    orders = _equation_orders(s, polys)
    report = RouchonReport("pass", trials=trials, tol=tol, seed=seed, K=K,
                           orders={k: _num(v) for k, v in orders.items()})
    rng = np.random.default_rng(seed)
    chosen = [p.chart(c) for c in charts] if charts else list(p.charts)
    for chart in chosen:
        xs = {v: pullback(p, chart, jet(v), s) for v in s.variables}
        ords = {v: ord_(e, z1) for v, e in xs.items()}
        r = max(ords.values())
        report.r[chart.name] = _num(r)
        if r == -math.inf:
            return _na(report, f"{z1} does not occur in chart {chart.name}")
        bad = [v for v in s.variables if orders[v] == 0 and ords[v] >= r]
        if bad:
            return _na(report, f"order hypothesis fails in chart {chart.name}: "
                               f"e=0 but ord_{z1} = r for {bad}")
        checks = {}
        T = tangent_tuple(s, p, chart, z1, r, orders)
        pos = [v for v in s.variables if orders[v] > 0]
        for v in pos:
            e = int(orders[v])
            top = sp.diff(pullback(p, chart, jet(v, e), s), jet(z1, r + e))
            checks[f"a:top[{v}]"] = top - T[v]
        targets = [jet(v, int(orders[v])) for v in pos]
        idx = [s.variables.index(v) + 1 for v in pos]
        tangent = {ghost(i): T[v] for i, v in zip(idx, pos)}
        for j, P in enumerate(polys):
            P = clear_denominators(P, targets)
            for k, form in enumerate(build_and_iterate_ghost(P, targets, ghost_indices=idx)):
                if form == 0:
                    continue
                checks[f"a:D^{k}P[{j}]"] = pullback(p, chart, form, s).xreplace(tangent)
        top1 = jet(z1, r + 1)
        for v in s.variables:
            checks[f"b:{v}"] = sp.diff(xs[v], top1, 2)
            checks[f"b:{v}'"] = sp.diff(pullback(p, chart, jet(v, 1), s), top1, 2)
        if ruled is not None:
            checks["c:v2"] = sp.diff(pullback(p, chart, ruled.v2, s), top1)
            for v, fi in ruled.f.items():
                checks[f"c:f[{v}]"] = sp.diff(pullback(p, chart, ruled.expand(fi), s),
                                              jet(z1, r))
        exprs = {k: normalize(e) for k, e in checks.items()}
        live = {k: e for k, e in exprs.items() if e != 0}
        worst = {k: 0.0 for k in exprs}
        for _ in range(trials if live else 0):
            pt = sample_jet(p, chart, K, rng, s, require=live.values())
            for k, e in live.items():
                worst[k] = max(worst[k], abs(pt.evaluate(e)))
        report.checks[chart.name] = worst
        if any(w > tol for w in worst.values()):
            report.verdict = "fail"
            report.reason = f"identity violated in chart {chart.name}"
    return report


def _num(v):
    return v if v != -math.inf else "-inf"


def _na(report, reason):
    report.verdict = "NotApplicable"
    report.reason = reason
    return report
