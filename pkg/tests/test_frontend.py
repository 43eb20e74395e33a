import io
import json

import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from flatcheck.errors import DuplicateDeclaration, ParseError, UnknownIdentifier
from flatcheck.exprcore import jet
from flatcheck.frontend import parse_model, print_model, structure
from flatcheck.frontend.cli import main
from flatcheck.frontend.fixtures import FIXTURES, corpus_dir, corpus_path, run_corpus

CAR_HEAD = """system car
  free x, theta
  state y
"""


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


# -- parser --------------------------------------------------------------------------

def test_unclosed_parenthesis_position():
    bad = "  eq y' = u cos(theta"
    text = CAR_HEAD + "  exo u { der = 0 }\n" + bad + "\nend\n"
    with pytest.raises(ParseError) as exc:
        parse_model(text)
    assert (exc.value.line, exc.value.col) == (5, bad.index("(") + 1)


def test_unknown_identifier():
    text = "system s\n  free x1, x2\n  state x3\n  eq w' = x1'\nend\n"
    with pytest.raises(UnknownIdentifier) as exc:
        parse_model(text)
    assert exc.value.name == "w"


def test_duplicate_declarations():
    with pytest.raises(DuplicateDeclaration):
        parse_model("system s\n  free x1, x1\nend\n")
    with pytest.raises(DuplicateDeclaration):
        parse_model("system s\n  free x1, x2\nend\nsystem s\n  free a, b\nend\n")
    with pytest.raises(DuplicateDeclaration):
        parse_model("system s\n  free x1, x2\n  state x3\n  eq x3' = x1'\n"
                    "  eq x3' = x2'\nend\n")


def test_lexical_details():
    text = ("# a comment line\n"
            "system s  # trailing comment\n"
            "  free θ, x2\n"
            "  state x3\n"
            "  eq x3' = 0.1 θ' + x2^(3) - x2'''\n"
            "end\n")
    s = parse_model(text).system("s")
    assert s.free == ("θ", "x2")
    h = s.equations["x3"]
    assert h.coeff(jet("θ", 1)) == sp.Rational(1, 10)
    assert sp.expand(h - sp.Rational(1, 10) * jet("θ", 1)) == 0


def test_parametrization_and_candidate_blocks(car):
    p = car.parametrization("mu3")
    assert [c.name for c in p.charts] == ["minus", "plus"]
    assert p.arbitrary == ("z1", "z2", "z3")
    c = car.candidate("B37", "car")
    assert c.outputs[0] == jet("x") + sp.Rational(37, 10) * sp.sin(jet("theta"))
    assert set(c.inverse) == {"theta", "x", "y"}
    assert c.conditions == [jet("b1", 1)]


def test_car_system_shape(car):
    s = car.system("car")
    assert s.m == 2 and s.free == ("x", "theta") and s.states == ("y",)
    assert s.exo == {"d": 0}


@pytest.mark.parametrize("path", sorted(corpus_dir().glob("*.fc")), ids=lambda p: p.stem)
def test_print_parse_round_trip(path):
    m = parse_model(path.read_text(encoding="utf-8"))
    again = parse_model(print_model(m))
    assert structure(again) == structure(m)


# -- CLI -----------------------------------------------------------------------------------

def test_check_param_example(tmp_path):
    js = tmp_path / "r.json"
    code, out, _ = run("check-param", str(corpus_path("car.fc")), "--system", "car",
                       "--param", "mu3", "--seed", "0", "--json", str(js))
    assert code == 0
    rep = json.loads(js.read_text())
    assert rep["schema"] == 1 and rep["verdict"] == "pass" and rep["K"] == 8
    assert rep["details"]["max_residual"] <= 1e-8


def test_reduce_example():
    code, out, _ = run("reduce", str(corpus_path("chained.fc")), "--system", "chained",
                       "--json", "-")
    assert code == 0
    rep = json.loads(out[out.index("{"):])
    steps = rep["details"]["trace"]["steps"]
    assert [s["branch"] for s in steps] == ["M2Linear"]
    outs = [sp.sympify(o) for o in rep["details"]["candidate"]["outputs"]]
    x1_, x2_, x3_ = sp.symbols("x1 x2 x3")
    assert sp.expand(outs[1] - (x3_ - x2_ * x1_)) == 0 and outs[0] == x2_


def test_rouchon_nonruled_example():
    code, out, _ = run("rouchon", str(corpus_path("nonruled.fc")), "--system", "nonruled",
                       "--param", "none")
    assert code == 1
    assert "verdict: NotParametrizableOverReals" in out


def test_usage_errors(tmp_path):
    assert run()[0] == 3
    assert run("frobnicate")[0] == 3
    assert run("reduce", str(tmp_path / "missing.fc"))[0] == 3
    assert run("reduce", str(corpus_path("car.fc")), "--system", "nope")[0] == 3
    assert run("check-param", str(corpus_path("car.fc")), "--trials", "0")[0] == 3
    bad = tmp_path / "bad.fc"
    bad.write_text("system s\n  free x(\nend\n")
    code, _, err = run("reduce", str(bad))
    assert code == 3 and "line 2" in err


def test_not_applicable_and_unsupported_exit_2():
    tv = str(corpus_path("timevarying.fc"))
    assert run("stationarity", tv, "--system", "drag", "--candidate", "inputs")[0] == 2
    assert run("reduce", tv, "--system", "drag")[0] == 2


def strip_timing(text):
    rep = json.loads(text)
    rep.pop("timing", None)
    return json.dumps(rep, sort_keys=True)


def test_json_is_deterministic(tmp_path):
    paths = []
    for i in range(2):
        p = tmp_path / f"r{i}.json"
        run("verify-flat", str(corpus_path("chained.fc")), "--candidate", "good",
            "--trials", "5", "--json", str(p))
        paths.append(p.read_text())
    assert strip_timing(paths[0]) == strip_timing(paths[1])
    assert "timing" in json.loads(paths[0])


def test_seed_environment_override(tmp_path, monkeypatch):
    p = tmp_path / "r.json"
    monkeypatch.setenv("FLATCHECK_SEED", "7")
    run("check-param", str(corpus_path("chained.fc")), "--trials", "3", "--seed", "1",
        "--json", str(p))
    assert json.loads(p.read_text())["seed"] == 7
    monkeypatch.setenv("FLATCHECK_SEED", "x")
    assert run("check-param", str(corpus_path("chained.fc")))[0] == 3


FRAGMENTS = ["system s", "free x1, x2", "state x3", "eq x3' = x1' x2'", "end",
             "parametrization p for s", "arbitrary z1, z2", "chart c", "x1 = z1'",
             "x2 = (z2", "exo t { der = 1 }", "constraint x3 = 0", "candidate c for s",
             "output x2", "inverse x1 = b1'", "where b1' != 0", "box z1 in [0, 1]",
             "^(", "'''", "=", "!= 0", "{", "θ", "1e309", "/0"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(FRAGMENTS) | st.text(max_size=12), max_size=12),
       st.sampled_from(["reduce", "rouchon", "check-param", "verify-flat", "stationarity"]))
def test_malformed_input_never_escapes(tmp_path_factory, lines, command):
    path = tmp_path_factory.mktemp("fuzz") / "m.fc"
    path.write_text("\n".join(lines), encoding="utf-8")
    code, _, _ = run(command, str(path), "--trials", "2")
    assert code in (0, 1, 2, 3)


def test_corpus_gate():
    out = io.StringIO()
    assert run_corpus(out) == 0, out.getvalue()
    assert f"{len(FIXTURES)}/{len(FIXTURES)} fixtures match" in out.getvalue()
