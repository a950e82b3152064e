"""JSON and CSV output with every float written to 17 significant digits."""

from __future__ import annotations

import json
import math

import numpy as np


def fmt_float(v: float, missing: str = "null") -> str:
    v = float(v)
    if math.isnan(v):
        return missing
    if math.isinf(v):
        return missing if missing == "null" else ("inf" if v > 0 else "-inf")
    out = format(v, ".17g")
    if out == "-0":
        return "-0.0"
    return out


def _emit(obj, indent: int, level: int, parts: list) -> None:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        parts.append(json.dumps(None if obj is None else bool(obj)))
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(fmt_float(obj))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            parts.append("{}")
            return
        parts.append("{")
        for k, (key, val) in enumerate(obj.items()):
            parts.append(("," if k else "") + pad + json.dumps(str(key)) + ": ")
            _emit(val, indent, level + 1, parts)
        parts.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        if not seq:
            parts.append("[]")
            return
        parts.append("[")
        for k, val in enumerate(seq):
            parts.append(("," if k else "") + pad)
            _emit(val, indent, level + 1, parts)
        parts.append(end + "]")
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    parts: list = []
    _emit(obj, indent, 0, parts)
    return "".join(parts) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(obj))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt_float(v, "nan") if isinstance(v, (float, np.floating))
                              else str(v)
                              for v in row) + "\n")


def read_csv(path):
    """Return ``(header, float matrix)`` of a numeric CSV written by :func:`write_csv`."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2) if header != [""] else np.empty((0, 0))
    return header, data
