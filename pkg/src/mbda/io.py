"""Canonical JSON and CSV serialisation.

Floats are always written with 17 significant digits so that files round-trip
exactly and reruns are byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite float {x!r} cannot be serialised")
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "inf" not in s:
        s += ".0"
    return s


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for k in sorted(obj, key=str):
            items.append(f'{pad}"{_escape(str(k))}": {_encode(obj[k], indent, level + 1)}')
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        parts = [_encode(v, indent, level + 1) for v in obj]
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(parts) + "]"
        return "[\n" + ",\n".join(pad + p for p in parts) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return f'"{_escape(obj)}"'
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _escape(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)[1:-1]


def canonical_json(obj, indent: int = 2) -> str:
    return _encode(obj, indent, 0) + "\n"


def write_json(path: str | Path, obj) -> None:
    Path(path).write_bytes(canonical_json(obj).encode("utf-8"))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def write_domain_csv(path: str | Path, x: np.ndarray, y: np.ndarray | None) -> None:
    """Header ``x0,...,x{d-1},y``; ``y`` is 1-based and empty when unlabelled."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[1]
    lines = [",".join([f"x{j}" for j in range(d)] + ["y"])]
    for k in range(x.shape[0]):
        row = [_fmt_float(float(v)) for v in x[k]]
        row.append("" if y is None else str(int(y[k]) + 1))
        lines.append(",".join(row))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def read_domain_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverse of :func:`write_domain_csv`; returns 0-based labels or ``None``."""
    text = Path(path).read_text(encoding="utf-8")
    rows = text.strip("\n").split("\n")
    header = rows[0].split(",")
    if not header or header[-1] != "y":
        raise ValueError(f"{path}: header must end with 'y'")
    d = len(header) - 1
    xs, ys = [], []
    for line_no, line in enumerate(rows[1:], start=2):
        cells = line.split(",")
        if len(cells) != d + 1:
            raise ValueError(f"{path}:{line_no}: expected {d + 1} cells")
        xs.append([float(c) for c in cells[:d]])
        ys.append(cells[d])
    x = np.array(xs, dtype=np.float64).reshape(len(xs), d)
    if all(v == "" for v in ys):
        return x, None
    if any(v == "" for v in ys):
        raise ValueError(f"{path}: partially labelled file")
    return x, np.array([int(v) - 1 for v in ys], dtype=np.int64)
