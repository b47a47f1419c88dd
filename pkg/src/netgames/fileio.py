"""Reading and writing graphs, node tables and JSON reports.

Edge files are CSV with header ``src,dst`` listing every undirected edge
once with src < dst.  A ``# n=<count>`` comment line in front keeps
isolated trailing nodes.  Node files have columns ``id, x1_0.., x2_0..,
eps, eta`` and optionally ``y``; floats are written with ``repr`` so a
save/load round trip is exact.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .dgp import NodeData
from .errors import ConfigError, InvalidParameter, NetgamesError
from .graphs import PayoffGraph

__all__ = [
    "DataFileError",
    "save_graph",
    "load_graph",
    "save_nodes",
    "load_nodes",
    "write_json",
    "read_json_config",
    "load_sample",
    "config_hash",
]


class DataFileError(NetgamesError):
    """Malformed or incomplete input file."""


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def save_graph(g: PayoffGraph, path, meta: dict | None = None) -> None:
    edges = g.edge_list()
    with open(path, "w", newline="") as fh:
        fh.write(f"# n={g.n}\n")
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(["src", "dst"])
        w.writerows(edges.tolist())


def load_graph(path, n: int | None = None) -> PayoffGraph:
    """Edge list to graph.  Duplicate and reversed edges collapse; self-loops are an error."""
    header_n = None
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh]
    body = []
    for ln in lines:
        s = ln.strip()
        if s.startswith("#"):
            if s[1:].strip().startswith("n="):
                header_n = int(s[1:].strip()[2:])
            continue
        if s:
            body.append(s)
    reader = csv.reader(body)
    head = next(reader, None)
    if head is None or [h.strip() for h in head[:2]] != ["src", "dst"]:
        raise DataFileError(f"{path}: expected header 'src,dst'")
    for lineno, row in enumerate(reader, start=2):
        try:
            a, b = int(row[0]), int(row[1])
        except (ValueError, IndexError):
            raise DataFileError(f"{path}: bad edge on data line {lineno}: {row}") from None
        if a == b:
            raise DataFileError(f"{path}: self-loop at node {a} (data line {lineno})")
        if a < 0 or b < 0:
            raise DataFileError(f"{path}: negative node id on data line {lineno}")
        rows.append((a, b))
    top = max((max(r) for r in rows), default=-1) + 1
    size = n if n is not None else (header_n if header_n is not None else top)
    if size < top:
        raise DataFileError(f"{path}: node id {top - 1} exceeds n={size}")
    return PayoffGraph.from_edges(size, np.array(rows, dtype=np.int64).reshape(-1, 2), strict=False)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_nodes(data: NodeData, path) -> None:
    d1, d2 = data.d_x1, data.d_x2
    cols = ["id"] + [f"x1_{k}" for k in range(d1)] + [f"x2_{k}" for k in range(d2)]
    extra = [name for name in ("eps", "eta", "y") if getattr(data, name) is not None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols + extra)
        for i in range(data.n):
            row = [i] + [_fmt(v) for v in data.X1[i]] + [_fmt(v) for v in data.X2[i]]
            row += [_fmt(getattr(data, name)[i]) for name in extra]
            w.writerow(row)


def load_nodes(path, require_y: bool = False) -> NodeData:
    """Node table to :class:`NodeData`; rows are reordered by ``id``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head is None:
            raise DataFileError(f"{path}: empty node file")
        head = [h.strip() for h in head]
        rows = list(reader)
    if "id" not in head:
        raise DataFileError(f"{path}: missing column 'id'")
    x1 = sorted((c for c in head if c.startswith("x1_")), key=lambda c: int(c[3:]))
    x2 = sorted((c for c in head if c.startswith("x2_")), key=lambda c: int(c[3:]))
    if not x1:
        raise DataFileError(f"{path}: missing column 'x1_0'")
    if require_y and "y" not in head:
        raise DataFileError(f"{path}: missing column 'y'")
    pos = {c: k for k, c in enumerate(head)}
    try:
        table = np.array([[float(v) if v.strip() else np.nan for v in r] for r in rows if r], dtype=float).reshape(-1, len(head))
    except ValueError as exc:
        raise DataFileError(f"{path}: non-numeric entry ({exc})") from None
    ids = table[:, pos["id"]].astype(np.int64)
    if not np.array_equal(np.sort(ids), np.arange(ids.size)):
        raise DataFileError(f"{path}: ids must be 0..n-1, each once")
    table = table[np.argsort(ids)]

    def col(names):
        return table[:, [pos[c] for c in names]] if names else np.zeros((table.shape[0], 0))

    if "known" in pos:
        # unavailable nodes may leave their covariates blank
        unknown = table[:, pos["known"]] == 0
        table[unknown] = np.nan_to_num(table[unknown])
    opt = {name: (table[:, pos[name]] if name in pos else None) for name in ("eps", "eta", "y")}
    return NodeData(col(x1), col(x2), opt["eps"], opt["eta"], opt["y"])


def load_sample(path, n: int):
    """Sample flags from optional 0/1 columns ``observed`` and ``known`` of a node file.

    Returns None when neither column is present (full observation).
    """
    from .inference import SampleSelection

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    fields_ = reader.fieldnames or []
    if "observed" not in fields_ and "known" not in fields_:
        return None
    ids = np.array([int(float(r["id"])) for r in rows])
    flag = lambda name: np.array([float(r[name] or 0) != 0 for r in rows])[np.argsort(ids)]
    observed = np.flatnonzero(flag("observed")) if "observed" in fields_ else np.arange(n)
    known = flag("known") if "known" in fields_ else None
    return SampleSelection(n, observed, known)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2) + "\n")


def read_json_config(path) -> dict:
    """Parse a JSON config, reporting the line and column of syntax errors."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(exc), str(path)) from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{exc.msg}", f"{path}:{exc.lineno}:{exc.colno}") from None
    if not isinstance(obj, dict):
        raise ConfigError("top level must be an object", str(path))
    return obj


def check_sizes(g: PayoffGraph, data: NodeData) -> None:
    if g.n != data.n:
        raise InvalidParameter(f"graph has {g.n} nodes but the node file has {data.n} rows")
