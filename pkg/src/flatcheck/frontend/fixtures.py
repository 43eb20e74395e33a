"""The bundled corpus and its expected verdict table."""

from __future__ import annotations

import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .report import dumps


@dataclass(frozen=True)
class Fixture:
    file: str
    argv: tuple[str, ...]
    expected: str  # verdict
    trials: int = 20


FIXTURES = (
    Fixture("car.fc", ("check-param", "--system", "car", "--param", "mu3"), "pass", 100),
    Fixture("car.fc", ("check-param", "--system", "car", "--param", "timed"), "pass"),
    Fixture("car.fc", ("rouchon", "--system", "car", "--param", "mu3"), "NotApplicable", 5),
    Fixture("car.fc", ("reduce", "--system", "car"), "pass"),
    Fixture("car.fc", ("reduce", "--system", "car", "--param", "timed"), "pass"),
    Fixture("car.fc", ("verify-flat", "--system", "car", "--candidate", "B0"), "pass", 10),
    Fixture("car.fc", ("verify-flat", "--system", "car", "--candidate", "B1"), "pass", 10),
    Fixture("car.fc", ("verify-flat", "--system", "car", "--candidate", "Bm1"), "pass", 10),
    Fixture("car.fc", ("verify-flat", "--system", "car", "--candidate", "B37"), "pass", 10),
    Fixture("car.fc", ("verify-flat", "--system", "car", "--candidate", "reduced"), "pass", 10),
    Fixture("car.fc", ("stationarity", "--system", "car", "--param", "timed"), "pass"),
    Fixture("timevarying.fc", ("stationarity", "--system", "car_t", "--candidate", "moving"),
            "fail"),
    Fixture("timevarying.fc", ("stationarity", "--system", "drag", "--candidate", "inputs"),
            "NotApplicable"),
    Fixture("chained.fc", ("check-param", "--system", "chained"), "pass"),
    Fixture("chained.fc", ("rouchon", "--system", "chained", "--param", "flat"), "pass"),
    Fixture("chained.fc", ("reduce", "--system", "chained", "--param", "flat"), "pass"),
    Fixture("chained.fc", ("verify-flat", "--system", "chained", "--candidate", "good"), "pass"),
    Fixture("chained.fc", ("verify-flat", "--system", "chained", "--candidate", "bad"), "fail"),
    Fixture("bilinear.fc", ("check-param", "--system", "bilinear"), "pass"),
    Fixture("bilinear.fc", ("rouchon", "--system", "bilinear", "--param", "flat"), "pass"),
    Fixture("bilinear.fc", ("reduce", "--system", "bilinear", "--param", "flat"), "pass"),
    Fixture("bilinear.fc", ("verify-flat", "--system", "bilinear", "--candidate", "reduced"),
            "pass"),
    Fixture("nonruled.fc", ("rouchon", "--system", "nonruled", "--param", "none"),
            "NotParametrizableOverReals"),
    Fixture("chained4.fc", ("check-param", "--system", "chained4"), "pass"),
    Fixture("chained4.fc", ("reduce", "--system", "chained4", "--param", "flat"), "pass"),
    Fixture("m1.fc", ("check-param", "--system", "m1"), "pass"),
    Fixture("m1.fc", ("reduce", "--system", "m1"), "pass"),
    Fixture("m1.fc", ("verify-flat", "--system", "m1", "--candidate", "reduced"), "pass"),
)


def corpus_dir() -> Path:
    return Path(str(resources.files("flatcheck.frontend").joinpath("corpus")))


def corpus_path(name: str) -> Path:
    return corpus_dir() / name


def run_fixture(fx: Fixture, seed: int = 0) -> str:
    """Run one fixture in-process and return its verdict (or the exit-code class)."""
    from .cli import main

    out, err = io.StringIO(), io.StringIO()
    argv = [fx.argv[0], str(corpus_path(fx.file)), *fx.argv[1:],
            "--trials", str(fx.trials), "--seed", str(seed)]
    code = main(argv, out, err)
    for line in out.getvalue().splitlines():
        if line.startswith("verdict: "):
            return line[len("verdict: "):]
    return f"exit {code}: {err.getvalue().strip()}"


def run_corpus(out, json_path: str | None = None) -> int:
    rows, ok = [], True
    width = max(len(f"{fx.file} {' '.join(fx.argv)}") for fx in FIXTURES)
    for fx in FIXTURES:
        got = run_fixture(fx)
        match = got == fx.expected
        ok &= match
        label = f"{fx.file} {' '.join(fx.argv)}"
        out.write(f"{'ok  ' if match else 'FAIL'} {label:<{width}}  expected {fx.expected:<26} "
                  f"got {got}\n")
        rows.append({"fixture": label, "expected": fx.expected, "got": got, "match": match})
    out.write(f"{sum(r['match'] for r in rows)}/{len(rows)} fixtures match\n")
    if json_path:
        rep = {"schema": 1, "command": "corpus run", "verdict": "pass" if ok else "fail",
               "fixtures": rows}
        text = dumps(rep) + "\n"
        if json_path == "-":
            out.write(text)
        else:
            Path(json_path).write_text(text, encoding="utf-8")
    return 0 if ok else 1
