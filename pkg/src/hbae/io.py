"""Artifact persistence: RFC-4180 CSV with round-trip floats, canonical JSON, checksums.

Floats are written with ``repr`` (shortest string that round-trips), so
rereading a CSV gives bit-identical arrays and reruns give byte-identical
files. Every write goes through a temporary file and an atomic rename.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = [
    "atomic_write",
    "write_csv",
    "read_csv",
    "write_json",
    "read_json",
    "write_vector",
    "read_vector",
    "write_matrix",
    "read_matrix",
    "sha256_file",
    "jsonable",
]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _umask():
    mask = os.umask(0)
    os.umask(mask)
    return mask


_FILE_MODE = 0o666 & ~_umask()


def atomic_write(path, data: bytes):
    """Write ``data`` to a temporary sibling and rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, _FILE_MODE)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    """Write ``rows`` under ``header``; CRLF line endings and minimal quoting per RFC 4180."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    atomic_write(path, buf.getvalue().encode("utf-8"))


def read_csv(path):
    """Return ``(header, rows)`` with every cell as a string."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def write_vector(path, values, name="value"):
    write_csv(path, ["index", name], [(i, float(v)) for i, v in enumerate(np.asarray(values, float))])


def read_vector(path):
    """Read a vector CSV.

    Accepts the ``index,value`` layout written by :func:`write_vector`, any
    headed CSV with a ``value`` column, or a bare column of numbers.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: no data")
    try:
        [float(c) for c in rows[0]]
        header, body = None, rows
    except ValueError:
        header, body = rows[0], rows[1:]
    col = -1
    if header is not None and "value" in header:
        col = header.index("value")
    return np.array([float(r[col]) for r in body])


def write_matrix(path, matrix):
    m = np.atleast_2d(np.asarray(matrix, float))
    write_csv(path, [f"c{j + 1}" for j in range(m.shape[1])], m.tolist())


def read_matrix(path):
    """Read a dense matrix CSV (with or without a header row)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    return np.array([[float(c) for c in r] for r in rows])


def jsonable(obj):
    """Recursively convert numpy types; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(path, obj):
    text = json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
    atomic_write(path, text.encode("utf-8"))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
