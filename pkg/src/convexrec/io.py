"""File formats: sample CSVs and the versioned JSON model documents."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from . import cnf, relu
from .dual import DualNet


class FormatError(ValueError):
    """A file that could not be parsed into the expected structure."""


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(doc: dict) -> str:
    # json writes floats with repr, the shortest string that round-trips
    return json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n"


def save_json(path, doc: dict) -> None:
    atomic_write_text(path, dumps(doc))


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or "format" not in doc:
        raise FormatError(f"{path}: not a versioned model document")
    return doc


# samples


def read_samples(path, with_values: bool = True):
    """Parse a ``x1,...,xd,y`` CSV (or ``x1,...,xd`` when ``with_values`` is off)."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    if with_values:
        d = len(header) - 1
        expected = [f"x{i + 1}" for i in range(d)] + ["y"]
    else:
        d = len(header)
        expected = [f"x{i + 1}" for i in range(d)]
    if d < 1 or header != expected:
        raise FormatError(f"{path}: header must be {','.join(expected) if d >= 1 else 'x1,...,xd'}")
    body = rows[1:]
    if not body:
        raise FormatError(f"{path}: no data rows")
    try:
        data = np.array([[float(c) for c in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise FormatError(f"{path}: every row needs {len(header)} fields")
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite value")
    if with_values:
        return data[:, :d], data[:, d]
    return data


def format_csv(X, values=None, value_name: str = "y") -> str:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = [f"x{i + 1}" for i in range(X.shape[1])]
    if values is not None:
        header.append(value_name)
    w.writerow(header)
    for k, row in enumerate(X):
        cells = [repr(float(v)) for v in row]
        if values is not None:
            cells.append(repr(float(values[k])))
        w.writerow(cells)
    return buf.getvalue()


def write_samples(path, X, y) -> None:
    atomic_write_text(path, format_csv(X, y))


def format_table(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row.get(c, "")) for c in columns])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v


# dual nets


def dualnet_to_dict(net: DualNet) -> dict:
    meta = {k: net.meta.get(k) for k in ("epsilon", "delta", "alpha", "eta", "d", "N", "M", "eta_achieved")}
    for k, v in net.meta.items():
        meta.setdefault(k, v)
    return {
        "format": "dualnet/1",
        "L": net.lipschitz,
        "dim": net.dim,
        "directions": net.directions.tolist(),
        "intercepts": net.intercepts.tolist(),
        "meta": meta,
    }


def dualnet_from_dict(doc: dict) -> DualNet:
    if doc.get("format") != "dualnet/1":
        raise FormatError(f"not a dualnet/1 document: format={doc.get('format')!r}")
    try:
        P = np.asarray(doc["directions"], dtype=np.float64).reshape(-1, int(doc["dim"]))
        return DualNet(P, doc["intercepts"], float(doc["L"]), dict(doc.get("meta") or {}))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed dualnet/1 document: {exc!r}") from None


FORMATS = ("dualnet/1", "cnf/1", "relumlp/1")


def model_to_dict(model) -> dict:
    if isinstance(model, DualNet):
        return dualnet_to_dict(model)
    if isinstance(model, cnf.CnfModel):
        return cnf.model_to_dict(model)
    if isinstance(model, relu.ReluNetwork):
        return relu.network_to_dict(model)
    raise TypeError(f"no file format for {type(model).__name__}")


def model_from_dict(doc: dict):
    fmt = doc.get("format")
    if fmt == "dualnet/1":
        return dualnet_from_dict(doc)
    if fmt == "cnf/1":
        return cnf.model_from_dict(doc)
    if fmt == "relumlp/1":
        return relu.network_from_dict(doc)
    raise FormatError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def save_model(path, model, extra: dict | None = None) -> None:
    doc = model_to_dict(model)
    if extra:
        doc.update(extra)
    save_json(path, doc)


def load_model(path):
    return model_from_dict(load_json(path))
