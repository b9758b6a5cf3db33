"""File formats: labeled binary PLY, JSON helpers, atomic writes, scene directories."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .geometry import Sim3Transform
from .labeling import DUST, LabeledPointCloud

PLY_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("label", "<i4")])
_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False, allow_nan=True) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dump_json(obj))


def read_json(path):
    with open(path) as f:
        return json.load(f)


def ply_bytes(lc: LabeledPointCloud) -> bytes:
    rec = np.empty(len(lc), dtype=PLY_DTYPE)
    rec["x"], rec["y"], rec["z"] = lc.points.T.astype(np.float32)
    rec["label"] = lc.labels.astype(np.int32)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(lc)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property int label\nend_header\n"
    )
    return header.encode("ascii") + rec.tobytes()


def write_ply(path, lc: LabeledPointCloud) -> None:
    atomic_write_bytes(path, ply_bytes(lc))


def parse_ply(data: bytes) -> LabeledPointCloud:
    """Binary little-endian PLY with float x, y, z; a missing ``label`` property reads as dust."""
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyError("not a PLY file")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise PlyError("truncated header")
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    fmt, n, props, element = None, None, [], None
    for line in lines[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            element = tok[1]
            if element == "vertex":
                n = int(tok[2])
            elif int(tok[2]) != 0:
                raise PlyError(f"unsupported element {element!r}")
        elif tok[0] == "property" and element == "vertex":
            if tok[1] == "list":
                raise PlyError("list properties are not supported on vertices")
            if tok[1] not in _PLY_TYPES:
                raise PlyError(f"unknown property type {tok[1]!r}")
            props.append((tok[2], "<" + _PLY_TYPES[tok[1]]))
    if fmt != "binary_little_endian":
        raise PlyError(f"unsupported PLY format {fmt!r}")
    if n is None:
        raise PlyError("no vertex element")
    names = [p[0] for p in props]
    for c in "xyz":
        if c not in names:
            raise PlyError(f"missing vertex property {c!r}")
    dt = np.dtype(props)
    body = data[nl + 1:]
    if len(body) < n * dt.itemsize:
        raise PlyError(f"expected {n} vertices, file is truncated")
    rec = np.frombuffer(body, dtype=dt, count=n)
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    labels = rec["label"].astype(np.int64) if "label" in names else np.full(n, DUST, dtype=np.int64)
    return LabeledPointCloud(pts, labels)


def read_ply(path) -> LabeledPointCloud:
    return parse_ply(Path(path).read_bytes())


def write_scene(directory, scene) -> None:
    """Scene directory: ``cloud.ply`` (observed labeled points) and ``gt.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_ply(d / "cloud.ply", scene.observed)
    write_json(d / "gt.json", scene.gt_dict())


def read_scene(directory):
    """Returns ``(labeled cloud, ground-truth dict)``; the dict gains a ``pose`` entry."""
    d = Path(directory)
    lc = read_ply(d / "cloud.ply")
    gt = read_json(d / "gt.json")
    gt["pose"] = Sim3Transform.from_dict(gt)
    return lc, gt
