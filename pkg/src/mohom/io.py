"""Columnar text format shared by tabulations, fields and result files.

A file is a block of ``#``-prefixed header lines followed by whitespace
separated numeric rows::

    # mohom-table 1
    # meta: {"kind": "conjugate", "even": true}
    # columns: t m mstar
    0 0 0
    ...

Metadata is a single JSON object so that arbitrary grid information can be
round-tripped.  Numbers are written with 17 significant digits, which makes
re-running a pipeline byte-for-byte reproducible.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = "# mohom-table 1"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def format_table(columns: dict, meta: dict | None = None) -> str:
    names = list(columns)
    if not names:
        raise ValueError("at least one column is required")
    for name in names:
        if any(c.isspace() for c in name):
            raise ValueError(f"column name {name!r} contains whitespace")
    data = [np.asarray(columns[n], dtype=float).ravel() for n in names]
    nrows = len(data[0])
    if any(len(col) != nrows for col in data):
        raise ValueError("all columns must have the same length")
    lines = [MAGIC]
    lines.append("# meta: " + json.dumps(_jsonable(meta or {}), sort_keys=True))
    lines.append("# columns: " + " ".join(names))
    if nrows:
        block = np.column_stack(data)
        for row in block:
            lines.append(" ".join(format(v, ".17g") for v in row))
    return "\n".join(lines) + "\n"


def write_table(path, columns: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_table(columns, meta))
    return path


def read_table(path) -> tuple[dict, dict]:
    """Read a file written by :func:`write_table`.

    Returns:
        ``(columns, meta)`` with each column as a float array.
    """
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != MAGIC:
        raise ValueError(f"{path}: not a mohom table (missing header)")
    meta, names, rows = {}, None, []
    for lineno, line in enumerate(text[1:], start=2):
        if line.startswith("# meta:"):
            meta = json.loads(line[len("# meta:"):])
        elif line.startswith("# columns:"):
            names = line[len("# columns:"):].split()
        elif line.startswith("#") or not line.strip():
            continue
        else:
            try:
                rows.append([float(v) for v in line.split()])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if names is None:
        raise ValueError(f"{path}: missing '# columns:' header")
    arr = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return {n: arr[:, i].copy() for i, n in enumerate(names)}, meta


def json_dumps(obj) -> str:
    """Deterministic JSON text (sorted keys, numpy values converted)."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json_dumps(obj) + "\n")
    return path
