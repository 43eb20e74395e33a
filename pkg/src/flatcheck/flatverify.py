"""Numeric certification of flat-output candidates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import sympy as sp

from .diffiety import Chart, Parametrization, SystemDef, pullback
from .errors import ChartViolated, DomainError, TruncationTooSmall
from .exprcore import (NON_SMOOTH, SAMPLING_GUARD, compile_expr, depends_on, jet,
                       normalize, partial_derivative, split_jet)
from .reduction import FlatOutputCandidate

DEFAULT_VERIFY_K = 6
RANK_LO, RANK_HI = 1e-8, 1e-5
MAX_DRAWS = 1000
CHART_GUARD = 1e-3


@dataclass
class FlatReport:
    verdict: str  # "pass" | "fail" | "Inconclusive"
    span: dict = field(default_factory=dict)
    independence: dict = field(default_factory=dict)
    round_trip: dict = field(default_factory=dict)
    dynamics: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    trials: int = 0
    tol: float = 0.0
    seed: int = 0
    K: int = DEFAULT_VERIFY_K

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def _b_names(c: FlatOutputCandidate) -> list[str]:
    return [f"b{j + 1}" for j in range(len(c.outputs))]


def _to_system(s: SystemDef, c: FlatOutputCandidate, e, outputs) -> sp.Expr:
    """Replace b-jets by total derivatives of the outputs."""
    e = normalize(e)
    subs = {}
    names = _b_names(c)
    for sym in e.free_symbols:
        base, k = split_jet(sym)
        if base in names:
            subs[sym] = s.nth_derivative(outputs[names.index(base)], k)
    return e.xreplace(subs) if subs else e


def _classify(sv_ratio: float) -> str:
    if sv_ratio > RANK_HI:
        return "yes"
    if sv_ratio < RANK_LO:
        return "no"
    return "unsure"


def _equilibrate(A: np.ndarray, sweeps: int = 30) -> np.ndarray:
    """Ruiz scaling of rows and columns; preserves rank and which unit vectors lie in the row space."""
    S = A.copy()
    for _ in range(sweeps):
        r = np.sqrt(np.abs(S).max(axis=1))
        c = np.sqrt(np.abs(S).max(axis=0))
        r[r == 0] = 1.0
        c[c == 0] = 1.0
        S = S / r[:, None] / c[None, :]
    return S


_NON_ANALYTIC = NON_SMOOTH
_STEP = 1e-30


def _jacobian_evaluator(rows, cols):
    """Numeric Jacobian of ``rows`` w.r.t. ``cols``.

    Analytic rows use the complex-step derivative, which carries no
    cancellation error; otherwise the symbolic Jacobian is compiled.
    """
    if any(r.has(*_NON_ANALYTIC) for r in rows):
        J = sp.Matrix([[partial_derivative(r, c) for c in cols] for r in rows])
        f = sp.lambdify(cols, J, modules="numpy", cse=True)

        def jac(x):
            with np.errstate(all="ignore"):
                return np.array(f(*x), dtype=float)
        return jac
    f = sp.lambdify(cols, rows, modules="numpy", cse=True)
    n = len(cols)

    def jac(x):
        # one column per perturbed coordinate, evaluated in a single batch
        z = np.tile(np.asarray(x, dtype=complex)[:, None], (1, n))
        z[np.arange(n), np.arange(n)] += 1j * _STEP
        with np.errstate(all="ignore"):
            vals = [np.broadcast_to(np.asarray(v, dtype=complex), (n,)) for v in f(*z)]
        return np.imag(np.array(vals)) / _STEP
    return jac


def _draw(s, coords, boxes, rng):
    pt = {}
    for x in coords:
        lo, hi = boxes.get(x, (-1.0, 1.0))
        pt[x] = float(rng.uniform(lo, hi))
    return pt


def check_flat_outputs(s: SystemDef, c: FlatOutputCandidate, K: int = DEFAULT_VERIFY_K,
                       trials: int = 10, tol: float = 1e-6, seed: int = 0,
                       params: Mapping | None = None) -> FlatReport:
    """Certify ``c`` at random jets of ``s``.

    Three tests run at every sample: the differentials of the output jets up
    to order ``K`` span every ``dx_i``; those differentials are independent as functions (decided on the
    best-conditioned sample, since generic rank is maximal rank);
    and, when inverse maps are given, they reproduce the state and satisfy the
    equations.  Rank decisions falling in the band [1e-8, 1e-5] of relative
    singular values are reported as Inconclusive.
    """
    psubs = {sp.Symbol(str(k)): v for k, v in (params or {}).items()}
    outputs = [normalize(b).xreplace(psubs) for b in c.outputs]
    if len(outputs) != s.m:
        raise ValueError(f"{len(outputs)} outputs for a system of differential dimension {s.m}")
    rows = [s.nth_derivative(b, k) for b in outputs for k in range(K + 1)]
    names = _b_names(c)
    inverse = {v: normalize(e).xreplace(psubs) for v, e in c.inverse.items()}
    inv_order = max((split_jet(x)[1] for e in inverse.values() for x in e.free_symbols
                     if split_jet(x)[0] in names), default=0)
    if inverse and inv_order + 1 > K:
        raise TruncationTooSmall(inv_order + 1, K)
    conds = [_to_system(s, c, normalize(x).xreplace(psubs), outputs) for x in c.conditions]

    depth = max((split_jet(x)[1] for r in rows for x in r.free_symbols
                 if split_jet(x)[0] in s.free), default=0)
    coords = s.coordinates(depth)
    col_syms = coords
    jac_f = _jacobian_evaluator(rows, col_syms)
    row_f = [compile_expr(r) for r in rows]
    cond_f = [compile_expr(x) for x in conds]
    unit = {f"d{v}": col_syms.index(jet(v)) for v in s.variables}

    inv_p = None
    dyn_exprs = {}
    if inverse:
        chart = Chart("inverse", inverse)
        inv_p = Parametrization("inverse", s.name, tuple(names), (chart,))
        dyn_exprs = {k: pullback(inv_p, chart, P, s) for k, P in s.residuals().items()}
        dyn_f = {k: compile_expr(e) for k, e in dyn_exprs.items()}
        inv_f = {v: compile_expr(e) for v, e in inverse.items()}

    rng = np.random.default_rng(seed)
    rep = FlatReport("pass", trials=trials, tol=tol, seed=seed, K=K)
    span_stats = {k: [] for k in unit}
    indep = []
    rt = {v: 0.0 for v in inverse}
    dyn = {k: 0.0 for k in dyn_exprs}
    done, draws = 0, 0
    while done < trials:
        draws += 1
        if draws > MAX_DRAWS:
            raise ChartViolated(f"could not sample {trials} points on the candidate chart")
        pt = _draw(s, coords, c.boxes, rng)
        try:
            if any(abs(f(pt, SAMPLING_GUARD)) <= CHART_GUARD for f in cond_f):
                continue
            # guarded row evaluation rejects points off the domain
            row_vals = [f(pt, SAMPLING_GUARD) for f in row_f]
            J = jac_f([pt[x] for x in col_syms])
            if not np.all(np.isfinite(J)):
                continue
            bvals = {}
            if inverse:
                for j, b in enumerate(outputs):
                    for k in range(inv_order + 2):
                        bvals[jet(names[j], k)] = row_vals[j * (K + 1) + k]
                inv_vals = {v: f(bvals, SAMPLING_GUARD) for v, f in inv_f.items()}
                dyn_vals = {k: f(bvals, SAMPLING_GUARD) for k, f in dyn_f.items()}
        except DomainError:
            continue
        done += 1
        Jn = _equilibrate(J)
        sv = np.linalg.svd(Jn, compute_uv=False)
        smax = sv[0] if sv.size and sv[0] > 0 else 1.0
        indep.append(float(sv[-1] / smax) if sv.size else 0.0)
        for key, idx in unit.items():
            e = np.zeros(len(col_syms))
            e[idx] = 1.0
            a = np.linalg.lstsq(Jn.T, e, rcond=None)[0]
            resid = float(np.linalg.norm(Jn.T @ a - e))
            span_stats[key].append(resid)
        for v in rt:
            rt[v] = max(rt[v], abs(inv_vals[v] - pt[jet(v)]))
        for k in dyn:
            dyn[k] = max(dyn[k], abs(dyn_vals[k]))

    verdicts = []
    for key, vals in span_stats.items():
        worst = max(vals)
        # a residual near 1 means dx_i is orthogonal to the span; 0 means inside
        cls = "yes" if worst < RANK_LO else ("no" if worst > RANK_HI else "unsure")
        rep.span[key] = {"max_residual": worst,
                         "failing_samples": sum(v > RANK_HI for v in vals),
                         "in_span": cls}
        verdicts.append(cls)
        if cls == "no":
            rep.failures.append(f"{key} not in the span of the output differentials")
    # generic rank of analytic rows equals their best pointwise rank
    ind = _classify(max(indep))
    rep.independence = {"max_relative_singular_value": max(indep),
                        "min_relative_singular_value": min(indep), "full_rank": ind}
    verdicts.append(ind)
    if ind == "no":
        rep.failures.append("output jets are not independent")
    rep.round_trip = rt
    rep.dynamics = dyn
    for k, v in list(rt.items()) + list(dyn.items()):
        if v > tol:
            rep.failures.append(f"residual {k} = {v:.3g} exceeds {tol:g}")
            verdicts.append("no")
    if "no" in verdicts:
        rep.verdict = "fail"
    elif "unsure" in verdicts:
        rep.verdict = "Inconclusive"
    return rep


@dataclass
class StationarityReport:
    verdict: str  # "pass" | "fail" | "NotApplicable"
    witness: dict = field(default_factory=dict)
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def check_stationarity(s: SystemDef, c: FlatOutputCandidate, t: str = "t") -> StationarityReport:
    """Are the outputs free of the exogenous time ``t``?"""
    T = jet(t)
    exprs = list(s.equations.values()) + list(s.constraints)
    if any(depends_on(e, T) for e in exprs):
        return StationarityReport("NotApplicable", reason=f"system equations depend on {t}")
    witness = {}
    for j, b in enumerate(c.outputs):
        if depends_on(b, T):
            witness[f"b{j + 1}"] = sp.diff(normalize(b), T)
    if witness:
        return StationarityReport("fail", witness, f"outputs depend on {t}")
    return StationarityReport("pass")
