"""JSON report assembly with reproducible number formatting."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math

import sympy as sp

SCHEMA = 1


def digest(*blobs: bytes | str) -> str:
    h = hashlib.sha256()
    for b in blobs:
        h.update(b.encode() if isinstance(b, str) else b)
        h.update(b"\0")
    return h.hexdigest()


def plain(obj):
    """Convert reports, sympy objects and tuples into JSON-ready values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if not f.name.startswith("_")}
    if isinstance(obj, dict):
        return {_key(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = [plain(v) for v in obj]
        return sorted(items, key=str) if isinstance(obj, (set, frozenset)) else items
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, int):
        return obj
    if isinstance(obj, float):
        return obj
    if isinstance(obj, sp.Basic):
        if obj.is_Number and obj.is_real:
            return int(obj) if obj.is_Integer else float(obj)
        return str(obj)
    if hasattr(obj, "item"):  # numpy scalar
        return plain(obj.item())
    return str(obj)


def _key(k) -> str:
    if isinstance(k, tuple):
        return ",".join(str(x) for x in k)
    return str(k)


def _number(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def dumps(obj, indent: int = 2) -> str:
    """Serialize with every float printed to 17 significant digits."""
    return _dump(plain(obj), indent, 0)


def _dump(v, indent, level) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(v, dict):
        if not v:
            return "{}"
        body = ",\n".join(f"{pad}{json.dumps(k, ensure_ascii=False)}: {_dump(x, indent, level + 1)}"
                          for k, x in v.items())
        return "{\n" + body + "\n" + end + "}"
    if isinstance(v, list):
        if not v:
            return "[]"
        body = ",\n".join(pad + _dump(x, indent, level + 1) for x in v)
        return "[\n" + body + "\n" + end + "]"
    if isinstance(v, float):
        return _number(v)
    return json.dumps(v, ensure_ascii=False)


def make_report(command: str, verdict: str, *, inputs_digest: str, seed: int, K: int,
                trials: int, tol: float, details=None, timing: float | None = None) -> dict:
    rep = {
        "schema": SCHEMA,
        "command": command,
        "inputs_digest": inputs_digest,
        "seed": seed,
        "K": K,
        "trials": trials,
        "tol": float(tol),
        "verdict": verdict,
        "details": details if details is not None else {},
    }
    if timing is not None:
        rep["timing"] = {"seconds": float(timing)}
    return rep
