import numpy as np
import pytest
import sympy as sp

from flatcheck.errors import TruncationTooSmall
from flatcheck.exprcore import jet
from flatcheck.flatverify import check_flat_outputs, check_stationarity
from flatcheck.reduction import FlatOutputCandidate, compute_flat_outputs

C = sp.Symbol("C")
x, y, th = jet("x"), jet("y"), jet("theta")
b1p, b2p = jet("b1", 1), jet("b2", 1)


def car_family():
    """The one-parameter family x + C sin(theta), y - C cos(theta) with its inverse."""
    heading = sp.atan(b2p / b1p)
    return FlatOutputCandidate(
        "car", [x + C * sp.sin(th), y - C * sp.cos(th)],
        inverse={"theta": heading, "x": jet("b1") - C * sp.sin(heading),
                 "y": jet("b2") + C * sp.cos(heading)},
        conditions=[b1p], name="family")


def test_car_family_over_ten_values(car):
    s = car.system("car")
    cand = car_family()
    for value in np.linspace(-5, 5, 10):
        rep = check_flat_outputs(s, cand, trials=8, params={"C": float(value)})
        assert rep.verdict == "pass", (value, rep.failures)
        assert max(rep.round_trip.values()) <= 1e-6
        assert max(rep.dynamics.values()) <= 1e-6


@pytest.mark.parametrize("name", ["B0", "B1", "Bm1", "B37"])
def test_car_example_candidates(car, name):
    rep = check_flat_outputs(car.system("car"), car.candidate(name, "car"), trials=10)
    assert rep.passed, rep.failures


def test_chained_good_candidate(corpus):
    m = corpus["chained"]
    rep = check_flat_outputs(m.system(), m.candidate("good"), trials=10)
    assert rep.passed, rep.failures
    assert all(v["in_span"] == "yes" for v in rep.span.values())


def test_chained_bad_candidate_fails_everywhere(corpus):
    m = corpus["chained"]
    rep = check_flat_outputs(m.system(), m.candidate("bad"), trials=10)
    assert rep.verdict == "fail"
    assert rep.span["dx3"]["in_span"] == "no"
    assert rep.span["dx3"]["failing_samples"] == rep.trials


def test_producer_and_verifier_agree(corpus):
    seen = 0
    for model in corpus.values():
        for s in model.systems.values():
            cand, trace = compute_flat_outputs(s)
            if cand is None:
                continue
            seen += 1
            rep = check_flat_outputs(s, cand, trials=5)
            assert rep.passed, (s.name, rep.failures)
    assert seen >= 6


def test_truncation_too_small(corpus):
    m = corpus["bilinear"]
    with pytest.raises(TruncationTooSmall):
        check_flat_outputs(m.system(), m.candidate("reduced"), K=1, trials=2)


def test_determinism(corpus):
    m = corpus["chained"]
    a = check_flat_outputs(m.system(), m.candidate("good"), trials=4, seed=3)
    b = check_flat_outputs(m.system(), m.candidate("good"), trials=4, seed=3)
    assert a == b


# -- stationarity -----------------------------------------------------------------

def test_stationarity_of_time_substituted_reduction(car):
    s = car.system("car")
    cand, trace = compute_flat_outputs(s, car.parametrization("timed"))
    rep = check_stationarity(s, cand)
    assert rep.verdict == "pass"


def test_stationarity_witness(corpus):
    m = corpus["timevarying"]
    s = m.system("car_t")
    rep = check_stationarity(s, m.candidate("moving", "car_t"))
    assert rep.verdict == "fail"
    assert sp.simplify(rep.witness["b1"] - sp.sin(th)) == 0


def test_stationarity_not_applicable(corpus):
    m = corpus["timevarying"]
    s = m.system("drag")
    rep = check_stationarity(s, m.candidate("inputs", "drag"))
    assert rep.verdict == "NotApplicable"
