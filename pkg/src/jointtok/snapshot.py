"""Structured-text snapshot documents.

Snapshots are JSON whose floats are written with 17 significant digits so a
save/load cycle reproduces every float64 bit-exactly. Non-finite values are
rejected on write.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

FORMAT_NAME = "jointtok-snapshot"
FORMAT_VERSION = 1


def _float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("cannot serialize non-finite float")
    text = format(x, ".17g")
    if not any(c in text for c in ".en"):
        text += ".0"
    return text


def _emit(obj, out: list[str], depth: int) -> None:
    pad = "  " * depth
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = list(obj.items())
        for i, (k, v) in enumerate(items):
            out.append(f"{pad}  {json.dumps(str(k))}: ")
            _emit(v, out, depth + 1)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), out, depth)
    elif isinstance(obj, (list, tuple)):
        # numeric rows stay on one line
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(", ")
            _emit(v, out, depth + 1)
        out.append("]")
    elif isinstance(obj, (bool, np.bool_)) or obj is None:
        out.append(json.dumps(None if obj is None else bool(obj)))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(doc: dict) -> str:
    out: list[str] = []
    _emit({"format": FORMAT_NAME, "version": FORMAT_VERSION, **doc}, out, 0)
    return "".join(out) + "\n"


def loads(text: str) -> dict:
    doc = json.loads(text)
    if doc.get("format") != FORMAT_NAME:
        raise ValueError("not a jointtok snapshot")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported snapshot version {doc.get('version')}")
    return doc


def save(doc: dict, path) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8", newline="\n")


def load(path) -> dict:
    return loads(Path(path).read_text(encoding="utf-8"))


def array(value) -> np.ndarray:
    return np.array(value, dtype=np.float64)
