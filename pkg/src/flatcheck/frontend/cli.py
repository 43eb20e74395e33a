"""Command line driver: ``flatcheck <command> <file> [options]``.

Exit codes: 0 pass, 1 fail, 2 not applicable or unsupported, 3 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import sympy as sp

from .. import __version__
from ..diffiety import DEFAULT_K, check_morphism
from ..errors import FlatcheckError, ParseError
from ..flatverify import DEFAULT_VERIFY_K, check_flat_outputs, check_stationarity
from ..reduction import compute_flat_outputs
from ..rouchon import (default_base_point, linearity_test, projective_solution_set,
                       rouchon_checks, ruled_forms_system, ruled_rewrite)
from .parser import parse_model
from .report import digest, dumps, make_report, plain

EXIT = {"pass": 0, "fail": 1, "NotParametrizableOverReals": 1,
        "NotApplicable": 2, "Unsupported": 2, "Inconclusive": 2}
USAGE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, file: bool = True):
    if file:
        p.add_argument("file", help="model file (.fc)")
    p.add_argument("--system", help="system block name")
    p.add_argument("--param", help="parametrization block name, or 'none'")
    p.add_argument("--chart", action="append", help="restrict to this chart (repeatable)")
    p.add_argument("--candidate", help="candidate block name")
    p.add_argument("--z1", default="z1", help="distinguished arbitrary function")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jet-order", type=int, default=None, dest="K",
                   help=f"jet truncation (default {DEFAULT_K}; {DEFAULT_VERIFY_K} for verify-flat)")
    p.add_argument("--json", dest="json_path", help="write the JSON report here ('-' for stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="flatcheck", description="Flatness checks for two-input systems.")
    ap.add_argument("--version", action="version", version=f"flatcheck {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    _common(sub.add_parser("check-param", help="pullback residuals of a parametrization"))
    r = sub.add_parser("rouchon", help="ruled-manifold criterion")
    _common(r)
    r.add_argument("--ray", type=int, default=0, help="ray index for the ruled rewrite")
    _common(sub.add_parser("reduce", help="compute flat outputs by descent"))
    _common(sub.add_parser("verify-flat", help="certify a flat-output candidate"))
    st = sub.add_parser("stationarity", help="are the flat outputs free of the time?")
    _common(st)
    st.add_argument("--time", default="t", help="exogenous time variable")
    c = sub.add_parser("corpus", help="bundled fixtures")
    c.add_argument("action", choices=["run"])
    c.add_argument("--json", dest="json_path")
    return ap


# --------------------------------------------------------------------------
# commands; each returns (verdict, details, summary lines)


def _seed(args) -> int:
    env = os.environ.get("FLATCHECK_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"FLATCHECK_SEED must be an integer, got {env!r}")
    return args.seed


def cmd_check_param(model, args):
    s = model.system(args.system)
    p = model.parametrization(args.param, s.name)
    rep = check_morphism(s, p, trials=args.trials, tol=args.tol, K=args.K, seed=args.seed,
                         charts=args.chart)
    lines = [f"{p.name} -> {s.name}: max residual {rep.max_residual:.3g} "
             f"over {rep.trials} jets per chart"]
    lines += [f"  chart {c}: rank of differential >= {k}" for c, k in rep.rank.items()]
    return rep.verdict, plain(rep), lines


def cmd_rouchon(model, args):
    s = model.system(args.system)
    p = None if args.param in (None, "none") else model.parametrization(args.param, s.name)
    details, lines = {}, []
    if s.m != 2:
        return "NotApplicable", {"reason": "criterion needs differential dimension 2"}, \
            ["criterion needs differential dimension 2"]
    lt = linearity_test(s)
    details["linear"] = lt.linear
    ruled = None
    if lt.linear:
        lines.append("linear in the free derivatives: every line is ruled")
    else:
        hs = ruled_forms_system(s)
        details["ghost_forms"] = [str(f) for f in hs.forms]
        coeffs = [c for f in hs.forms for c in sp.Poly(f, *hs.ghosts).coeffs()]
        base = default_base_point(coeffs or [1], args.seed)
        cls = projective_solution_set(hs, base)
        details["classification"] = plain(cls)
        lines.append(f"ghost forms: {', '.join(details['ghost_forms'])}")
        lines.append(f"real projective solution set: {cls.kind}")
        if cls.kind == "EmptyOverReals":
            if cls.witness is not None:
                lines.append(f"definite form: {cls.witness}")
            return "NotParametrizableOverReals", details, lines
        if cls.kind == "Dim0":
            ruled = ruled_rewrite(s, ray_index=args.ray, seed=args.seed, base_point=base)
            details["ruled"] = plain(ruled)
            lines.append(f"ruled form: v1 = {ruled.v1}, v2 = {ruled.v2}")
    if p is None:
        return "pass", details, lines
    H = s.constraints[0] if s.constraints else None
    rep = rouchon_checks(s, p, H=H, ruled=ruled, z1=args.z1, trials=args.trials, tol=args.tol,
                         K=args.K, seed=args.seed, charts=args.chart)
    details["checks"] = plain(rep)
    lines.append(f"identities along {args.z1} with {p.name}: {rep.verdict}"
                 + (f" ({rep.reason})" if rep.reason else ""))
    return rep.verdict, details, lines


def _reduce(model, args, s):
    p = None if args.param in (None, "none") else model.parametrization(args.param, s.name)
    chart = args.chart[0] if args.chart else None
    return compute_flat_outputs(s, p, z1=args.z1, chart=chart, seed=args.seed)


def _measure(m) -> str:
    r, n = m
    return f"n={n}" if r is None else f"(r={r}, n={n})"


def cmd_reduce(model, args):
    s = model.system(args.system)
    cand, trace = _reduce(model, args, s)
    details = {"trace": plain(trace), "measures": plain(trace.measures())}
    lines = [f"step {i + 1}: {st.branch} {_measure(st.before)} -> {_measure(st.after)}"
             + (f" [{'; '.join(st.notes)}]" if st.notes else "")
             for i, st in enumerate(trace.steps)]
    if cand is None:
        lines.append(f"unsupported: {trace.reason}")
        return "Unsupported", details, lines
    details["candidate"] = plain(cand)
    lines.append("flat outputs: (" + ", ".join(str(b) for b in cand.outputs) + ")")
    if cand.conditions:
        lines.append("chart: " + ", ".join(f"{c} != 0" for c in cand.conditions))
    return "pass", details, lines


def cmd_verify_flat(model, args):
    s = model.system(args.system)
    c = model.candidate(args.candidate, s.name)
    rep = check_flat_outputs(s, c, K=args.K, trials=args.trials, tol=args.tol, seed=args.seed)
    lines = [f"candidate {c.name}: (" + ", ".join(str(b) for b in c.outputs) + ")"]
    lines += [f"  {k} in span: {v['in_span']} (max residual {v['max_residual']:.3g})"
              for k, v in rep.span.items()]
    lines.append(f"  independent: {rep.independence['full_rank']}")
    lines += [f"  {f}" for f in rep.failures]
    return rep.verdict, plain(rep), lines


def cmd_stationarity(model, args):
    s = model.system(args.system)
    details = {}
    if args.candidate:
        c = model.candidate(args.candidate, s.name)
    else:
        c, trace = _reduce(model, args, s)
        details["trace"] = plain(trace)
        if c is None:
            return "Unsupported", details, [f"reduction failed: {trace.reason}"]
    rep = check_stationarity(s, c, t=args.time)
    details["stationarity"] = plain(rep)
    details["outputs"] = plain(c.outputs)
    lines = ["outputs: (" + ", ".join(str(b) for b in c.outputs) + ")",
             f"free of {args.time}: {rep.verdict}" + (f" ({rep.reason})" if rep.reason else "")]
    lines += [f"  d{k}/d{args.time} = {w}" for k, w in rep.witness.items()]
    return rep.verdict, details, lines


COMMANDS = {"check-param": cmd_check_param, "rouchon": cmd_rouchon, "reduce": cmd_reduce,
            "verify-flat": cmd_verify_flat, "stationarity": cmd_stationarity}


def run_file_command(args) -> tuple[str, dict]:
    """Run one file-based command; returns the verdict and the report."""
    path = Path(args.file)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise UsageError(f"{path} is not UTF-8")
    model = parse_model(text)
    t0 = time.perf_counter()
    verdict, details, lines = COMMANDS[args.command](model, args)
    elapsed = time.perf_counter() - t0
    argv_key = [args.command, args.system, args.param, args.candidate, args.chart, args.z1,
                getattr(args, "time", None), getattr(args, "ray", None)]
    rep = make_report(args.command, verdict, inputs_digest=digest(raw, repr(argv_key)),
                      seed=args.seed, K=args.K, trials=args.trials, tol=args.tol,
                      details=details, timing=elapsed)
    rep["summary"] = lines
    return verdict, rep


def _emit(rep: dict, json_path: str | None, out):
    if json_path == "-":
        out.write(dumps(rep) + "\n")
    elif json_path:
        Path(json_path).write_text(dumps(rep) + "\n", encoding="utf-8")


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command")
        if args.command == "corpus":
            from .fixtures import run_corpus
            return run_corpus(out, args.json_path)
        args.seed = _seed(args)
        if args.command != "corpus" and args.K is None:
            args.K = DEFAULT_VERIFY_K if args.command == "verify-flat" else DEFAULT_K
        if args.trials < 1 or args.K < 0 or not args.tol > 0:
            raise UsageError("--trials must be >= 1, --jet-order >= 0 and --tol > 0")
        verdict, rep = run_file_command(args)
    except UsageError as exc:
        err.write(f"flatcheck: usage error: {exc}\n")
        return USAGE
    except ParseError as exc:
        err.write(f"flatcheck: {args.file}: {exc}\n")
        return USAGE
    except KeyError as exc:
        err.write(f"flatcheck: {exc.args[0] if exc.args else exc}\n")
        return USAGE
    except FlatcheckError as exc:
        err.write(f"flatcheck: {type(exc).__name__}: {exc}\n")
        return EXIT["Unsupported"]
    except Exception as exc:  # never let malformed input escape as a traceback
        err.write(f"flatcheck: internal error: {type(exc).__name__}: {exc}\n")
        return EXIT["Unsupported"]
    for line in rep["summary"]:
        out.write(line + "\n")
    out.write(f"verdict: {verdict}\n")
    _emit(rep, args.json_path, out)
    return EXIT.get(verdict, 2)


if __name__ == "__main__":
    sys.exit(main())
