"""Cloud, transform and report files.

Clouds are ASCII XYZ (``x y z [nx ny nz]`` per line) or PLY (ascii or binary)
with vertex positions and optional normals.  Transforms are 4x4 row-major
whitespace-separated text.  Every writer goes through a temp file + rename.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .geometry import PointCloud, RigidTransform


class CloudFormatError(OSError):
    pass


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def atomic_write(path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data.encode("utf-8") if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _normals_or_none(arr: np.ndarray) -> np.ndarray | None:
    norms = np.linalg.norm(arr, axis=1)
    if arr.size == 0 or np.any(norms == 0):
        return None
    return arr / norms[:, None]


def read_xyz(path) -> PointCloud:
    try:
        data = np.loadtxt(path, ndmin=2, comments="#")
    except (ValueError, OSError) as exc:
        raise CloudFormatError(f"cannot read XYZ file {path}: {exc}") from exc
    if data.shape[1] not in (3, 6):
        raise CloudFormatError(f"{path}: expected 3 or 6 columns, got {data.shape[1]}")
    normals = _normals_or_none(data[:, 3:6]) if data.shape[1] == 6 else None
    return PointCloud(data[:, :3], normals)


def _parse_ply_header(f):
    if f.readline().strip() != b"ply":
        raise CloudFormatError("missing 'ply' magic")
    fmt = None
    elements = []
    while True:
        line = f.readline()
        if not line:
            raise CloudFormatError("unterminated PLY header")
        tok = line.decode("ascii", "replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise CloudFormatError("property before element")
            if tok[1] == "list":
                elements[-1][2].append((tok[4], ("list", tok[2], tok[3])))
            else:
                elements[-1][2].append((tok[2], tok[1]))
        elif tok[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise CloudFormatError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def read_ply(path) -> PointCloud:
    try:
        with open(path, "rb") as f:
            fmt, elements = _parse_ply_header(f)
            body = f.read()
    except OSError as exc:
        raise CloudFormatError(f"cannot read PLY file {path}: {exc}") from exc
    vertex = None
    offset = 0
    lines = body.decode("ascii", "replace").split("\n") if fmt == "ascii" else None
    line_no = 0
    for name, count, props in elements:
        has_list = any(isinstance(p[1], tuple) for p in props)
        if fmt == "ascii":
            if name == "vertex":
                rows = [ln.split() for ln in lines[line_no : line_no + count]]
                try:
                    table = np.array(rows, dtype=float).reshape(count, len(props))
                except ValueError as exc:
                    raise CloudFormatError(f"{path}: malformed vertex rows") from exc
                vertex = {p[0]: table[:, i] for i, p in enumerate(props)}
            line_no += count
            continue
        if has_list:
            if name == "vertex":
                raise CloudFormatError("list properties on vertices are not supported")
            break  # vertices precede faces in every writer we target; stop here
        endian = "<" if fmt == "binary_little_endian" else ">"
        dtype = np.dtype([(p[0], endian + _PLY_TYPES[p[1]]) for p in props])
        size = dtype.itemsize * count
        if offset + size > len(body):
            raise CloudFormatError(f"{path}: truncated binary body")
        if name == "vertex":
            arr = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
            vertex = {p[0]: arr[p[0]].astype(float) for p in props}
        offset += size
    if vertex is None or not all(c in vertex for c in "xyz"):
        raise CloudFormatError(f"{path}: no vertex x/y/z properties")
    pts = np.stack([vertex["x"], vertex["y"], vertex["z"]], axis=1)
    normals = None
    if all(c in vertex for c in ("nx", "ny", "nz")):
        normals = _normals_or_none(np.stack([vertex["nx"], vertex["ny"], vertex["nz"]], axis=1))
    return PointCloud(pts, normals)


def read_cloud(path) -> PointCloud:
    path = Path(path)
    if not path.is_file():
        raise CloudFormatError(f"no such file: {path}")
    if path.suffix.lower() == ".ply":
        return read_ply(path)
    return read_xyz(path)


def _rows(cloud: PointCloud) -> np.ndarray:
    return cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])


def write_cloud(path, cloud: PointCloud, binary: bool = False) -> None:
    path = Path(path)
    rows = _rows(cloud)
    if path.suffix.lower() != ".ply":
        buf = _io.StringIO()
        np.savetxt(buf, rows, fmt="%.17g")
        atomic_write(path, buf.getvalue())
        return
    names = ["x", "y", "z"] + (["nx", "ny", "nz"] if cloud.normals is not None else [])
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {len(cloud)}"]
    header += [f"property double {n}" for n in names] + ["end_header"]
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        atomic_write(path, head + np.ascontiguousarray(rows, dtype="<f8").tobytes())
    else:
        buf = _io.StringIO()
        np.savetxt(buf, rows, fmt="%.17g")
        atomic_write(path, head + buf.getvalue().encode("ascii"))


def write_transform(path, T: RigidTransform) -> None:
    buf = _io.StringIO()
    np.savetxt(buf, T.matrix(), fmt="%.17g")
    atomic_write(path, buf.getvalue())


def read_transform(path) -> RigidTransform:
    try:
        m = np.loadtxt(path, ndmin=2)
    except (ValueError, OSError) as exc:
        raise CloudFormatError(f"cannot read transform file {path}: {exc}") from exc
    if m.shape != (4, 4):
        raise CloudFormatError(f"{path}: expected a 4x4 matrix, got {m.shape}")
    if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12):
        raise CloudFormatError(f"{path}: last row must be 0 0 0 1")
    return RigidTransform.from_matrix(m)


def write_csv(path, rows: list[dict], fieldnames: list[str] | None = None) -> None:
    fieldnames = fieldnames or (list(rows[0].keys()) if rows else [])
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k, "")) for k in fieldnames})
    atomic_write(path, buf.getvalue())


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(path) -> list[dict]:
    """Read a CSV written by :func:`write_csv`, converting numeric fields back to numbers."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{k: _parse(v) for k, v in row.items()} for row in rows]


def _parse(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path) as f:
        return json.load(f)
