"""Deterministic JSON/CSV output.

Floats are written with 17 significant digits and object keys are sorted so
that identical inputs give byte-identical files.
"""

import csv
import io
import json
import math

import numpy as np

FLOAT_FMT = "%.17g"


def _fmt_float(x):
    if math.isnan(x) or math.isinf(x):
        return json.dumps(str(x))
    return FLOAT_FMT % x


def to_plain(obj):
    """Convert numpy arrays/scalars and complex numbers to JSON-ready objects."""
    if hasattr(obj, "to_dict"):
        return to_plain(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    return obj


def dumps(obj, indent=2):
    """Serialize ``obj`` with sorted keys and fixed float formatting."""
    return _dump(to_plain(obj), indent, 0) + "\n"


def _dump(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{pad}{json.dumps(k)}: {_dump(obj[k], indent, level + 1)}"
            for k in sorted(obj)
        ]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_dump(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _dump(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    return json.dumps(obj)


def matrix_from_json(rows, name="matrix"):
    arr = np.asarray(rows, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2D array")
    return arr


def matrix_to_csv(M):
    """Row-major CSV text of a real or complex matrix, 17 significant digits."""
    M = np.atleast_2d(np.asarray(M))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in M:
        if np.iscomplexobj(row):
            writer.writerow([_complex_str(v) for v in row])
        else:
            writer.writerow([FLOAT_FMT % v for v in row])
    return buf.getvalue()


def _complex_str(v):
    return f"{FLOAT_FMT % v.real}{'+' if v.imag >= 0 else '-'}{FLOAT_FMT % abs(v.imag)}j"


def write_rows_csv(path_or_buf, header, rows):
    """Write ``rows`` (sequences) under ``header``; floats use 17 significant digits."""

    def cell(v):
        if isinstance(v, (float, np.floating)):
            return FLOAT_FMT % v
        if v is None:
            return ""
        return str(v)

    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([cell(v) for v in row])
    finally:
        if own:
            fh.close()
