"""Parser and printer for ``.fc`` model files.

A file is a sequence of ``system``, ``parametrization`` and ``candidate``
blocks, each closed by ``end``.  Statements are one per line and ``#``
starts a comment.  In expressions ``x'`` and ``x''`` are jets, ``x^(k)``
written directly after an identifier is the jet of order ``k``, and powers
are written ``**`` or ``^``.  Decimal literals are read as exact rationals.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from fractions import Fraction

import sympy as sp
from sympy.printing.str import StrPrinter

from ..diffiety import Chart, Parametrization, SystemDef
from ..errors import DuplicateDeclaration, ParseError, UnknownIdentifier
from ..exprcore import FUNCTIONS, jet
from ..reduction import FlatOutputCandidate

CONSTANTS = {"pi": sp.pi}


@dataclass
class Token:
    kind: str  # ident | number | op | eol
    text: str
    line: int
    col: int


@dataclass
class ModelFile:
    systems: dict = field(default_factory=dict)
    parametrizations: dict = field(default_factory=dict)
    candidates: dict = field(default_factory=dict)
    positions: dict = field(default_factory=dict)  # (kind, name) -> (line, col)

    def system(self, name: str | None = None) -> SystemDef:
        return _lookup(self.systems, name, "system")

    def parametrization(self, name: str | None = None, system: str | None = None):
        pool = {k: p for k, p in self.parametrizations.items()
                if system is None or p.system == system}
        return _lookup(pool, name, "parametrization")

    def candidate(self, name: str | None = None, system: str | None = None):
        pool = {k: c for k, c in self.candidates.items()
                if system is None or c.system == system}
        return _lookup(pool, name, "candidate")


def _lookup(pool, name, what):
    if name is None:
        if len(pool) != 1:
            raise KeyError(f"{len(pool)} {what} blocks; name one explicitly")
        return next(iter(pool.values()))
    if name not in pool:
        raise KeyError(f"no {what} named {name}")
    return pool[name]


# --------------------------------------------------------------------------
# lexer

_OPS = ("**", "!=", "+", "-", "*", "/", "^", "(", ")", "[", "]", "{", "}", ",", "=", "'")
_NUMBER = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")


def _ident_start(ch: str) -> bool:
    return ch == "_" or unicodedata.category(ch).startswith("L")


def _ident_part(ch: str) -> bool:
    return _ident_start(ch) or unicodedata.category(ch) in ("Nd", "Mn", "Mc", "Pc")


def tokenize(text: str) -> list[list[Token]]:
    """Split ``text`` into logical lines of tokens (empty lines dropped)."""
    lines = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        toks, i = [], 0
        while i < len(raw):
            ch = raw[i]
            if ch == "#":
                break
            if ch.isspace():
                i += 1
                continue
            col = i + 1
            if _ident_start(ch):
                j = i + 1
                while j < len(raw) and _ident_part(raw[j]):
                    j += 1
                toks.append(Token("ident", raw[i:j], ln, col))
                i = j
                continue
            m = _NUMBER.match(raw, i)
            if m:
                toks.append(Token("number", m.group(0), ln, col))
                i = m.end()
                continue
            for op in _OPS:
                if raw.startswith(op, i):
                    toks.append(Token("op", op, ln, col))
                    i += len(op)
                    break
            else:
                raise ParseError(f"unexpected character {ch!r}", ln, col)
        if toks:
            toks.append(Token("eol", "", ln, len(raw) + 1))
            lines.append(toks)
    return lines


# --------------------------------------------------------------------------
# expressions


class _Line:
    """Cursor over the tokens of one statement."""

    def __init__(self, toks: list[Token]):
        self.toks = toks
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("op", "ident") and t.text == text

    def take(self) -> Token:
        t = self.tok
        if t.kind != "eol":
            self.i += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.peek(text):
            raise self.error(f"expected {text!r}")
        return self.take()

    def ident(self) -> Token:
        if self.tok.kind != "ident":
            raise self.error("expected an identifier")
        return self.take()

    def end(self):
        if self.tok.kind != "eol":
            raise self.error(f"unexpected {self.tok.text!r}")

    def error(self, msg: str, tok: Token | None = None) -> ParseError:
        t = tok or self.tok
        found = "end of line" if t.kind == "eol" else repr(t.text)
        return ParseError(f"{msg}, found {found}", t.line, t.col)

    def adjacent(self) -> bool:
        prev = self.toks[self.i - 1]
        return (self.tok.line == prev.line
                and self.tok.col == prev.col + len(prev.text))


def _jet_suffix(ln: _Line) -> int:
    """Order written right after an identifier: primes or ``^(k)``."""
    order = 0
    while ln.peek("'") and ln.adjacent():
        ln.take()
        order += 1
    if order == 0 and ln.peek("^") and ln.adjacent():
        save = ln.i
        ln.take()
        if ln.peek("(") and ln.tok.kind == "op":
            ln.take()
            t = ln.tok
            if t.kind == "number" and t.text.isdigit():
                ln.take()
                if ln.peek(")"):
                    ln.take()
                    return int(t.text)
        ln.i = save
    return order


class _ExprParser:
    def __init__(self, scope):
        self.scope = scope  # callable(name, order, token) -> Symbol

    def parse(self, ln: _Line) -> sp.Expr:
        return self.sum(ln)

    def sum(self, ln):
        e = self.product(ln)
        while ln.peek("+") or ln.peek("-"):
            op = ln.take().text
            rhs = self.product(ln)
            e = e + rhs if op == "+" else e - rhs
        return e

    def product(self, ln):
        e = self.unary(ln)
        while True:
            if ln.peek("*") or ln.peek("/"):
                op = ln.take().text
            elif ln.tok.kind in ("ident", "number") or (ln.peek("(") and ln.tok.kind == "op"):
                op = "*"  # juxtaposition
            else:
                return e
            rhs = self.unary(ln)
            e = e * rhs if op == "*" else e / rhs

    def unary(self, ln):
        if ln.peek("-"):
            ln.take()
            return -self.unary(ln)
        if ln.peek("+"):
            ln.take()
            return self.unary(ln)
        return self.power(ln)

    def power(self, ln):
        base = self.atom(ln)
        if ln.peek("**") or ln.peek("^"):
            ln.take()
            return base ** self.unary(ln)
        return base

    def atom(self, ln):
        t = ln.tok
        if t.kind == "number":
            ln.take()
            return sp.Rational(Fraction(t.text))
        if ln.peek("(") and t.kind == "op":
            ln.take()
            e = self.sum(ln)
            if not ln.peek(")"):
                if ln.tok.kind == "eol":
                    raise ParseError("unclosed parenthesis", t.line, t.col)
                raise ln.error("expected ')'")
            ln.take()
            return e
        if t.kind == "ident":
            ln.take()
            if t.text in FUNCTIONS and ln.peek("("):
                return self.call(ln, t)
            if t.text in CONSTANTS:
                return CONSTANTS[t.text]
            return self.scope(t.text, _jet_suffix(ln), t)
        raise ln.error("expected an expression")

    def call(self, ln, name):
        opening = ln.take()
        args = [self.sum(ln)]
        while ln.peek(","):
            ln.take()
            args.append(self.sum(ln))
        if not ln.peek(")"):
            if ln.tok.kind == "eol":
                raise ParseError("unclosed parenthesis", opening.line, opening.col)
            raise ln.error("expected ')'")
        ln.take()
        try:
            return FUNCTIONS[name.text](*args)
        except TypeError:
            raise ParseError(f"wrong number of arguments to {name.text}", name.line, name.col)


def _scope(names):
    def resolve(name, order, tok):
        if name not in names:
            raise UnknownIdentifier(name, tok.line, tok.col)
        return jet(name, order)
    return resolve


def parse_expression(text: str, names) -> sp.Expr:
    """Parse a single expression over the identifiers ``names``."""
    lines = tokenize(text)
    if len(lines) != 1:
        raise ParseError("expected a single expression", 1, 1)
    ln = _Line(lines[0])
    e = _ExprParser(_scope(set(names))).parse(ln)
    ln.end()
    return e


# --------------------------------------------------------------------------
# blocks

_BLOCKS = ("system", "parametrization", "candidate")


def _blocks(lines):
    """Group lines into (header, body, chart sub-blocks kept inline) blocks."""
    blocks, i = [], 0
    while i < len(lines):
        head = lines[i]
        kw = head[0]
        if kw.kind != "ident" or kw.text not in _BLOCKS:
            raise ParseError(f"expected one of {', '.join(_BLOCKS)}, found {kw.text!r}",
                             kw.line, kw.col)
        depth, j = 1, i + 1
        while j < len(lines) and depth:
            first = lines[j][0]
            if first.kind == "ident" and first.text == "chart":
                depth += 1
            elif first.kind == "ident" and first.text == "end" and len(lines[j]) == 2:
                depth -= 1
            j += 1
        if depth:
            raise ParseError(f"{kw.text} block is never closed by 'end'", kw.line, kw.col)
        blocks.append((head, lines[i + 1:j - 1]))
        i = j
    return blocks


def _ident_list(ln: _Line) -> list[Token]:
    out = [ln.ident()]
    while ln.peek(","):
        ln.take()
        out.append(ln.ident())
    ln.end()
    return out


def _declare(seen: dict, tok: Token):
    if tok.text in seen:
        raise DuplicateDeclaration(tok.text, tok.line, tok.col)
    if tok.text in FUNCTIONS or tok.text in CONSTANTS:
        raise ParseError(f"{tok.text} is reserved", tok.line, tok.col)
    seen[tok.text] = tok


def _header(head, with_target: bool):
    ln = _Line(head)
    ln.take()
    name = ln.ident()
    target = None
    if with_target:
        ln.expect("for")
        target = ln.ident()
    ln.end()
    return name, target


def _system(head, body) -> tuple[str, SystemDef, Token]:
    name, _ = _header(head, False)
    free, states, exo = {}, {}, {}
    rest = []
    for toks in body:
        ln = _Line(toks)
        kw = ln.ident()
        if kw.text in ("free", "state"):
            for t in _ident_list(ln):
                _declare({**free, **states, **exo}, t)
                (free if kw.text == "free" else states)[t.text] = t
        elif kw.text == "exo":
            t = ln.ident()
            _declare({**free, **states, **exo}, t)
            exo[t.text] = t
            rest.append((kw, ln))
        elif kw.text in ("eq", "constraint"):
            rest.append((kw, ln))
        else:
            raise ParseError(f"unknown system statement {kw.text!r}", kw.line, kw.col)
    names = set(free) | set(states) | set(exo)
    ep = _ExprParser(_scope(names))
    equations, ders, constraints, eq_tok = {}, {}, [], {}
    for kw, ln in rest:
        if kw.text == "exo":
            var = ln.toks[1].text
            ln.expect("{")
            ln.expect("der")
            ln.expect("=")
            ders[var] = ep.parse(ln)
            ln.expect("}")
            ln.end()
        elif kw.text == "eq":
            t = ln.ident()
            if t.text not in names:
                raise UnknownIdentifier(t.text, t.line, t.col)
            if t.text not in states:
                raise ParseError(f"{t.text} is not a state", t.line, t.col)
            if _jet_suffix(ln) != 1:
                raise ln.error(f"expected {t.text}' on the left-hand side", t)
            if t.text in eq_tok:
                raise DuplicateDeclaration(f"eq {t.text}'", t.line, t.col)
            eq_tok[t.text] = t
            ln.expect("=")
            equations[t.text] = ep.parse(ln)
            ln.end()
        else:
            lhs = ep.parse(ln)
            ln.expect("=")
            z = ln.tok
            if ep.parse(ln) != 0:
                raise ParseError("constraints must read '<expr> = 0'", z.line, z.col)
            ln.end()
            constraints.append(lhs)
    if not free:
        raise ParseError(f"system {name.text} declares no free variable", name.line, name.col)
    missing = [s for s in states if s not in equations]
    if missing:
        t = states[missing[0]]
        raise ParseError(f"state {t.text} has no equation", t.line, t.col)
    try:
        s = SystemDef(name.text, tuple(free), tuple(states), equations, ders, tuple(constraints))
    except ValueError as exc:
        raise ParseError(str(exc), name.line, name.col) from None
    return name.text, s, name


def _signed_number(ln: _Line) -> float:
    sign = 1
    if ln.peek("-"):
        ln.take()
        sign = -1
    t = ln.tok
    if t.kind == "number":
        ln.take()
        return sign * float(Fraction(t.text))
    if t.kind == "ident" and t.text in CONSTANTS:
        ln.take()
        return sign * float(CONSTANTS[t.text])
    raise ln.error("expected a number")


def _box(ln: _Line, ep: _ExprParser):
    var = ln.ident()
    sym = ep.scope(var.text, _jet_suffix(ln), var)
    ln.expect("in")
    ln.expect("[")
    lo = _signed_number(ln)
    ln.expect(",")
    hi = _signed_number(ln)
    ln.expect("]")
    ln.end()
    if not lo < hi:
        raise ParseError(f"empty box for {sym}", var.line, var.col)
    return sym, (lo, hi)


def _parametrization(head, body, systems) -> tuple[str, Parametrization, Token]:
    name, target = _header(head, True)
    if target.text not in systems:
        raise UnknownIdentifier(target.text, target.line, target.col)
    s = systems[target.text]
    arbitrary, exo, charts, chart_names = {}, {}, [], set()
    pending = []
    i = 0
    while i < len(body):
        ln = _Line(body[i])
        kw = ln.ident()
        if kw.text == "arbitrary":
            for t in _ident_list(ln):
                _declare({**arbitrary, **exo, **{v: None for v in s.variables}}, t)
                arbitrary[t.text] = t
        elif kw.text == "exo":
            t = ln.ident()
            _declare({**arbitrary, **exo, **{v: None for v in s.variables}}, t)
            exo[t.text] = t
            pending.append(("exo", t, ln))
        elif kw.text == "chart":
            cname = ln.ident()
            ln.end()
            if cname.text in chart_names:
                raise DuplicateDeclaration(f"chart {cname.text}", cname.line, cname.col)
            chart_names.add(cname.text)
            j = i + 1
            while j < len(body) and not (body[j][0].text == "end" and len(body[j]) == 2):
                j += 1
            pending.append(("chart", cname, body[i + 1:j]))
            i = j
        else:
            raise ParseError(f"unknown parametrization statement {kw.text!r}", kw.line, kw.col)
        i += 1
    names = set(arbitrary) | set(exo) | set(s.exo)
    ep = _ExprParser(_scope(names))
    ders = {}
    for kind, t, payload in pending:
        if kind == "exo":
            ln = payload
            ln.expect("{")
            ln.expect("der")
            ln.expect("=")
            ders[t.text] = ep.parse(ln)
            ln.expect("}")
            ln.end()
            continue
        maps, excl, boxes = {}, [], {}
        for toks in payload:
            ln = _Line(toks)
            first = ln.tok
            if first.kind == "ident" and first.text == "exclude":
                ln.take()
                excl.append(ep.parse(ln))
                ln.end()
            elif first.kind == "ident" and first.text == "box" and not ln.toks[1].text == "=":
                ln.take()
                sym, rng = _box(ln, ep)
                boxes[sym] = rng
            else:
                v = ln.ident()
                if v.text not in s.variables:
                    raise UnknownIdentifier(v.text, v.line, v.col)
                if v.text in maps:
                    raise DuplicateDeclaration(v.text, v.line, v.col)
                ln.expect("=")
                maps[v.text] = ep.parse(ln)
                ln.end()
        missing = [v for v in s.variables if v not in maps]
        if missing:
            raise ParseError(f"chart {t.text} does not map {', '.join(missing)}", t.line, t.col)
        charts.append(Chart(t.text, maps, tuple(excl), boxes))
    if not arbitrary:
        raise ParseError(f"parametrization {name.text} declares no arbitrary function",
                         name.line, name.col)
    if not charts:
        raise ParseError(f"parametrization {name.text} has no chart", name.line, name.col)
    p = Parametrization(name.text, s.name, tuple(arbitrary), tuple(charts), ders)
    return name.text, p, name


def _candidate(head, body, systems) -> tuple[str, FlatOutputCandidate, Token]:
    name, target = _header(head, True)
    if target.text not in systems:
        raise UnknownIdentifier(target.text, target.line, target.col)
    s = systems[target.text]
    m = sum(1 for toks in body if toks[0].text == "output")
    bnames = [f"b{j + 1}" for j in range(m)]
    sys_names = set(s.variables) | set(s.exo)
    for b in bnames:
        if b in sys_names:
            raise ParseError(f"system variable {b} clashes with output name", name.line, name.col)
    sys_ep = _ExprParser(_scope(sys_names))
    b_ep = _ExprParser(_scope(set(bnames)))
    both = _ExprParser(_scope(sys_names | set(bnames)))
    outputs, inverse, conditions, boxes = [], {}, [], {}
    for toks in body:
        ln = _Line(toks)
        kw = ln.ident()
        if kw.text == "output":
            outputs.append(sys_ep.parse(ln))
            ln.end()
        elif kw.text == "inverse":
            v = ln.ident()
            if v.text not in s.variables:
                raise UnknownIdentifier(v.text, v.line, v.col)
            if v.text in inverse:
                raise DuplicateDeclaration(v.text, v.line, v.col)
            ln.expect("=")
            inverse[v.text] = b_ep.parse(ln)
            ln.end()
        elif kw.text == "where":
            conditions.append(both.parse(ln))
            ln.expect("!=")
            z = ln.tok
            if both.parse(ln) != 0:
                raise ParseError("conditions must read '<expr> != 0'", z.line, z.col)
            ln.end()
        elif kw.text == "box":
            sym, rng = _box(ln, sys_ep)
            boxes[sym] = rng
        else:
            raise ParseError(f"unknown candidate statement {kw.text!r}", kw.line, kw.col)
    if m != s.m:
        raise ParseError(f"candidate {name.text} has {m} outputs but system {s.name} "
                         f"has differential dimension {s.m}", name.line, name.col)
    if inverse and set(inverse) != set(s.variables):
        missing = sorted(set(s.variables) - set(inverse))
        raise ParseError(f"inverse maps miss {', '.join(missing)}", name.line, name.col)
    return name.text, FlatOutputCandidate(s.name, outputs, inverse, conditions, boxes,
                                          name.text), name


def parse_model(text: str) -> ModelFile:
    """Parse the contents of a ``.fc`` file."""
    model = ModelFile()
    for head, body in _blocks(tokenize(text)):
        kind = head[0].text
        if kind == "system":
            name, obj, tok = _system(head, body)
            pool = model.systems
        elif kind == "parametrization":
            name, obj, tok = _parametrization(head, body, model.systems)
            pool = model.parametrizations
        else:
            name, obj, tok = _candidate(head, body, model.systems)
            pool = model.candidates
        if name in pool:
            raise DuplicateDeclaration(name, tok.line, tok.col)
        pool[name] = obj
        model.positions[kind, name] = (tok.line, tok.col)
    return model


# --------------------------------------------------------------------------
# printing


class _FcPrinter(StrPrinter):
    def _print_Exp1(self, expr):
        return "exp(1)"

    def _print_Symbol(self, expr):
        return expr.name


_printer = _FcPrinter({"order": "lex"})


def print_expr(e) -> str:
    return _printer.doprint(sp.sympify(e))


def _num(x: float) -> str:
    return repr(float(x))


def print_model(model: ModelFile) -> str:
    """Render ``model`` back to ``.fc`` text."""
    out = []
    for s in model.systems.values():
        out.append(f"system {s.name}")
        out.append("  free " + ", ".join(s.free))
        if s.states:
            out.append("  state " + ", ".join(s.states))
        for u, d in s.exo.items():
            out.append(f"  exo {u} {{ der = {print_expr(d)} }}")
        for st in s.states:
            out.append(f"  eq {st}' = {print_expr(s.equations[st])}")
        for H in s.constraints:
            out.append(f"  constraint {print_expr(H)} = 0")
        out.append("end")
        out.append("")
    for p in model.parametrizations.values():
        out.append(f"parametrization {p.name} for {p.system}")
        out.append("  arbitrary " + ", ".join(p.arbitrary))
        for u, d in p.exo.items():
            out.append(f"  exo {u} {{ der = {print_expr(d)} }}")
        for c in p.charts:
            out.append(f"  chart {c.name}")
            for v, e in c.maps.items():
                out.append(f"    {v} = {print_expr(e)}")
            for e in c.exclusions:
                out.append(f"    exclude {print_expr(e)}")
            for v, (lo, hi) in c.boxes.items():
                out.append(f"    box {v} in [{_num(lo)}, {_num(hi)}]")
            out.append("  end")
        out.append("end")
        out.append("")
    for c in model.candidates.values():
        out.append(f"candidate {c.name} for {c.system}")
        for b in c.outputs:
            out.append(f"  output {print_expr(b)}")
        for v, e in c.inverse.items():
            out.append(f"  inverse {v} = {print_expr(e)}")
        for e in c.conditions:
            out.append(f"  where {print_expr(e)} != 0")
        for v, (lo, hi) in c.boxes.items():
            out.append(f"  box {v} in [{_num(lo)}, {_num(hi)}]")
        out.append("end")
        out.append("")
    return "\n".join(out)


def structure(model: ModelFile):
    """Canonical nested tuples used to compare models structurally."""
    def ex(e):
        return sp.srepr(sp.sympify(e))

    def boxes(b):
        return tuple(sorted((str(k), tuple(v)) for k, v in b.items()))

    systems = tuple((s.name, s.free, s.states,
                     tuple((k, ex(v)) for k, v in s.equations.items()),
                     tuple((k, ex(v)) for k, v in s.exo.items()),
                     tuple(ex(h) for h in s.constraints))
                    for s in model.systems.values())
    params = tuple((p.name, p.system, p.arbitrary,
                    tuple((k, ex(v)) for k, v in p.exo.items()),
                    tuple((c.name, tuple((k, ex(v)) for k, v in c.maps.items()),
                           tuple(ex(e) for e in c.exclusions), boxes(c.boxes))
                          for c in p.charts))
                   for p in model.parametrizations.values())
    cands = tuple((c.name, c.system, tuple(ex(b) for b in c.outputs),
                   tuple((k, ex(v)) for k, v in c.inverse.items()),
                   tuple(ex(e) for e in c.conditions), boxes(c.boxes))
                  for c in model.candidates.values())
    return systems, params, cands
