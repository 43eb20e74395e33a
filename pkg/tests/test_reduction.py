import numpy as np
import pytest
import sympy as sp

from flatcheck.diffiety import SystemDef
from flatcheck.errors import PivotVanishes, UnsupportedClass
from flatcheck.exprcore import equivalent, jet, split_jet
from flatcheck.reduction import (VectorField, compute_flat_outputs, first_integrals,
                                 integral_checks, reduce_once)
from flatcheck.rouchon import V2, linearity_test, ruled_rewrite

x1, x2, x3 = (jet(f"x{i}") for i in (1, 2, 3))


def same_set(got, want):
    return len(got) == len(want) and all(any(sp.expand(g - w) == 0 for g in got) for w in want)


# -- first integrals ----------------------------------------------------------------

def test_first_integrals_examples():
    vf = VectorField((x1, x2, x3), {x1: 1, x3: x2})
    assert same_set(first_integrals(vf), [x2, x3 - x2 * x1])
    assert same_set(first_integrals(VectorField((x1, x2, x3), {x1: 1})), [x2, x3])
    vf = VectorField((x1, x2, x3, V2), {x1: 1, x3: V2})
    assert same_set(first_integrals(vf), [x2, V2, x3 - V2 * x1])


def test_first_integrals_outside_class():
    with pytest.raises(UnsupportedClass):
        first_integrals(VectorField((x1, x2, x3), {x1: 1, x3: sp.sin(x1 * x3)}))
    with pytest.raises(PivotVanishes):
        first_integrals(VectorField((x1, x2), {}))


def test_triangular_chain_is_integrated_in_order():
    # x3 depends on the invariant carried by x2, which itself needs a quadrature
    vf = VectorField((x1, x2, x3), {x1: 1, x2: 2 * x1, x3: x2})
    ys = first_integrals(vf)
    ann, rank = integral_checks(vf, ys)
    assert ann and rank == 2


def test_annihilation_and_rank_on_random_triangular_fields():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a, b = (int(v) for v in rng.integers(-3, 4, size=2))
        vf = VectorField((x1, x2, x3), {x1: 1, x2: a * x1**2 + b, x3: x2 + sp.cos(x1)})
        ys = first_integrals(vf)
        for y in ys:
            assert equivalent(vf(y), 0)
        assert integral_checks(vf, ys) == (True, 2)


# -- one reduction step ---------------------------------------------------------------

def assert_step_sound(s, step):
    """Each new equation, pulled back through the definitions, matches the old total derivative."""
    defs = step.definitions
    new = step.system
    for v, rhs in new.equations.items():
        subs = {}
        for sym in rhs.free_symbols:
            base, k = split_jet(sym)
            if base in defs:
                subs[sym] = s.nth_derivative(defs[base], k)
        assert equivalent(rhs.xreplace(subs), s.total_derivative(defs[v])), (v, rhs)


def test_reduce_chained(corpus):
    s = corpus["chained"].system()
    new, step = reduce_once(s, linearity_test(s).form)
    assert step.branch == "M2Linear"
    ys = list(step.definitions.values())
    assert same_set(ys, [x2, x3 - x2 * x1])
    y2 = next(v for v in ys if v != x2)
    assert equivalent(s.total_derivative(y2), -x1 * s.total_derivative(x2))
    assert_step_sound(s, step)


def test_reduce_car(car):
    s = car.system("car")
    new, step = reduce_once(s, linearity_test(s).form)
    th, x, y = jet("theta"), jet("x"), jet("y")
    assert same_set(list(step.definitions.values()), [th, y - x * sp.tan(th)])
    assert_step_sound(s, step)


def test_reduce_bilinear(corpus):
    s = corpus["bilinear"].system()
    new, step = reduce_once(s, ruled_rewrite(s))
    assert step.branch == "M2Ruled"
    assert same_set(list(step.definitions.values()), [x2, x3 - jet("x2", 1) * x1])
    y = next(v for v in step.definitions.values() if v != x2)
    assert equivalent(s.total_derivative(y), -jet("x2", 2) * x1)
    assert_step_sound(s, step)


# -- the descent driver -------------------------------------------------------------------

EXPECTED = {
    "chained": [x2, x3 - x2 * x1],
    "car": [jet("theta"), jet("y") - jet("x") * sp.tan(jet("theta"))],
    "bilinear": [x2, x3 - jet("x2", 1) * x1],
    "m1": [x2 - x1],
}


@pytest.mark.parametrize("stem", sorted(EXPECTED))
def test_flat_outputs_match_examples(corpus, stem):
    s = corpus[stem].system(stem if stem == "car" else None)
    cand, trace = compute_flat_outputs(s)
    assert trace.status == "FlatOutputsFound", trace.reason
    assert len(cand.outputs) == s.m
    for got, want in zip(cand.outputs, EXPECTED[stem]):
        assert sp.simplify(got - want) == 0


def test_chart_conditions_recorded(corpus, car):
    cand, _ = compute_flat_outputs(car.system("car"))
    assert cand.conditions == [jet("theta", 1)]
    cand, _ = compute_flat_outputs(corpus["chained"].system())
    assert cand.conditions == [jet("x2", 1)]


def lex_less(a, b):
    return (a[0], a[1]) < (b[0], b[1])


def test_descent_is_strict_with_parametrization(corpus):
    for model in corpus.values():
        for p in model.parametrizations.values():
            s = model.systems[p.system]
            cand, trace = compute_flat_outputs(s, p)
            assert cand is not None, (p.name, trace.reason)
            ms = trace.measures()
            for a, b in zip(ms, ms[1:]):
                assert lex_less(b, a), (p.name, ms)


def test_chained4_descent(corpus):
    m = corpus["chained4"]
    cand, trace = compute_flat_outputs(m.system(), m.parametrization())
    assert trace.measures() == [(2, 4), (2, 3), (1, 3), (0, 2)]
    assert [st.branch for st in trace.steps] == ["M2Linear", "M2Ruled", "M2Linear"]


def test_without_parametrization_descent_tracks_n(corpus):
    cand, trace = compute_flat_outputs(corpus["m1"].system())
    assert [m[1] for m in trace.measures()] == [3, 2, 1]
    assert all(m[0] is None for m in trace.measures())


def test_every_step_is_sound(corpus):
    for model in corpus.values():
        for s in model.systems.values():
            cand, trace = compute_flat_outputs(s)
            prev = s
            for step in trace.steps:
                if step.branch != "M2toM1":
                    assert_step_sound(prev, step)
                prev = step.system


def test_unsupported_cases(corpus):
    s = SystemDef("sinus", ("x1", "x2"), ("x3",),
                  {"x3": sp.sin(x1 * x3) * jet("x1", 1)})
    cand, trace = compute_flat_outputs(s)
    assert cand is None and trace.status == "Unsupported"
    assert "UnsupportedClass" in trace.reason
    cand, trace = compute_flat_outputs(corpus["nonruled"].system())
    assert cand is None and "NotRuled" in trace.reason
