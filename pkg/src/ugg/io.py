"""File formats: dense matrices, canonical JSON, TSV tables, SVG plots.

Dense matrix format (UTF-8 text)::

    # optional comment lines start with '#'
    R C
    v11 v12 ... v1C
    ...
    vR1 ... vRC

Values follow ``[+-]?digits[.digits][(e|E)[+-]digits]`` and are written
with 17 significant digits, which round-trips every finite float64.
"""
from __future__ import annotations

import json
import math
import os
import re
import tempfile
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .core import UggError
from .metrics import RankingReport

_NUMBER = re.compile(r"[+-]?\d+(\.\d+)?([eE][+-]?\d+)?\Z")
_INT = re.compile(r"\d+\Z")


class IoError(UggError, OSError):
    code = "IO_ERROR"


class ParseError(UggError, ValueError):
    code = "PARSE_ERROR"

    def __init__(self, message, path=None, line=None, column=None):
        where = ":".join(str(x) for x in (path, line, column) if x is not None)
        super().__init__(f"{where}: {message}" if where else message)
        self.path, self.line, self.column = path, line, column


class ShapeMismatch(UggError, ValueError):
    code = "SHAPE_MISMATCH"


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _tokens(line: str):
    for m in re.finditer(r"\S+", line):
        yield m.group(0), m.start() + 1


def parse_matrix(text: str, expected_shape=None, path=None) -> np.ndarray:
    header = None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        toks = list(_tokens(line))
        if header is None:
            if len(toks) != 2 or not all(_INT.match(t) for t, _ in toks):
                raise ParseError("header must be two non-negative integers 'R C'",
                                 path, lineno, toks[0][1])
            header = (int(toks[0][0]), int(toks[1][0]))
            continue
        if len(rows) == header[0]:
            raise ParseError(f"more than {header[0]} data rows", path, lineno, toks[0][1])
        if len(toks) != header[1]:
            col = toks[header[1]][1] if len(toks) > header[1] else len(line) + 1
            raise ParseError(f"expected {header[1]} values, found {len(toks)}", path, lineno, col)
        vals = []
        for tok, col in toks:
            if not _NUMBER.match(tok):
                raise ParseError(f"not a decimal number: {tok!r}", path, lineno, col)
            v = float(tok)
            if not math.isfinite(v):
                raise ParseError(f"value out of float64 range: {tok!r}", path, lineno, col)
            vals.append(v)
        rows.append(vals)
    if header is None:
        raise ParseError("missing 'R C' header", path)
    if len(rows) != header[0]:
        raise ParseError(f"expected {header[0]} data rows, found {len(rows)}", path)
    m = np.array(rows, dtype=np.float64).reshape(header)
    if expected_shape is not None and tuple(expected_shape) != m.shape:
        raise ShapeMismatch(f"{path or 'matrix'}: expected shape {tuple(expected_shape)}, "
                            f"got {m.shape}")
    return m


def read_matrix(path, expected_shape=None) -> np.ndarray:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return parse_matrix(text, expected_shape, path=str(path))


def format_matrix(m) -> str:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    lines = [f"{m.shape[0]} {m.shape[1]}"]
    lines.extend(" ".join("%.17g" % v for v in row) for row in m)
    return "\n".join(lines) + "\n"


def write_matrix(path, m) -> None:
    atomic_write_text(path, format_matrix(m))


def canonical_json(obj) -> str:
    """Sorted keys, two-space indent, shortest round-trip float repr."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, canonical_json(obj))


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, str(path), exc.lineno, exc.colno) from exc


Reports = Union[Mapping[str, RankingReport], Sequence[RankingReport]]


def _named(reports: Reports) -> dict:
    if isinstance(reports, Mapping):
        return dict(reports)
    return {f"run{i}": r for i, r in enumerate(reports)}


def report_tsv(reports: Reports) -> str:
    named = _named(reports)
    first = next(iter(named.values()))
    rks, tks = sorted(first.recall_at_k), sorted(first.topk_accuracy)
    header = ["name", "mAP"] + [f"R@{k}" for k in rks] + [f"A@{k}" for k in tks]
    lines = ["\t".join(header)]
    for name, r in named.items():
        vals = [r.mean_average_precision] + [r.recall_at_k[k] for k in rks] + \
               [r.topk_accuracy[k] for k in tks]
        lines.append("\t".join([name] + [repr(float(v)) for v in vals]))
    return "\n".join(lines) + "\n"


def emit_report(reports: Reports, fmt: str, path) -> Path:
    """Write reports as ``json``, ``tsv`` or ``svg`` (bar chart of rank-1)."""
    named = _named(reports)
    if not named:
        raise IoError("no reports to write")
    path = Path(path)
    if fmt == "json":
        write_json(path, {"reports": {k: v.to_dict() for k, v in named.items()}})
    elif fmt == "tsv":
        atomic_write_text(path, report_tsv(named))
    elif fmt == "svg":
        from .plots import bar_svg
        atomic_write_text(path, bar_svg(list(named), [r.topk_accuracy[1] for r in named.values()],
                                        ylabel="rank-1 accuracy"))
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def read_report_json(path) -> dict:
    d = read_json(path)
    return {k: RankingReport.from_dict(v) for k, v in d["reports"].items()}


def read_identities(path, n: Optional[int] = None) -> np.ndarray:
    """True identities stored as a 1 x N matrix of 0-based gallery indices."""
    m = read_matrix(path, None if n is None else (1, n))
    if m.shape[0] != 1:
        raise ShapeMismatch(f"{path}: identities must be a single row")
    ids = m[0]
    if np.any(ids != np.round(ids)) or np.any(ids < 0):
        raise ParseError("identities must be non-negative integers", str(path))
    return ids.astype(np.int64)
