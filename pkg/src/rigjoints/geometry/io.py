"""Mesh and point-cloud file formats: PLY (binary little-endian, ascii read) and OBJ."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .mesh import GeometryError, PointCloud, TriMesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class MeshFormatError(GeometryError):
    pass


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_header(raw: bytes, path):
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise MeshFormatError(f"{path}: not a PLY file")
    nl = raw.find(b"\n", end)
    body_start = nl + 1
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    fmt, elements, comments = None, [], []
    for lineno, line in enumerate(lines, 1):
        parts = line.split()
        if not parts:
            continue
        key = parts[0]
        if key == "format":
            fmt = parts[1]
        elif key == "comment":
            comments.append(line[len("comment "):])
        elif key == "element":
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif key == "property":
            if not elements:
                raise MeshFormatError(f"{path}:{lineno}: property before element")
            if parts[1] == "list":
                elements[-1]["props"].append((parts[4], "list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
            else:
                if parts[1] not in _PLY_TYPES:
                    raise MeshFormatError(f"{path}:{lineno}: unknown property type {parts[1]}")
                elements[-1]["props"].append((parts[2], "scalar", _PLY_TYPES[parts[1]], None))
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise MeshFormatError(f"{path}: unsupported PLY format {fmt}")
    return fmt, elements, comments, body_start


def read_ply(path: str | os.PathLike) -> dict:
    """Return ``{"elements": {name: data}, "comments": [...]}``.

    Scalar-only elements come back as structured arrays; a single-list
    element (faces) as an ``M x n`` integer array, which must be rectangular.
    """
    raw = Path(path).read_bytes()
    fmt, elements, comments, pos = _parse_header(raw, path)
    out = {}
    if fmt == "ascii":
        tokens = raw[pos:].split()
        cursor = 0
        for el in elements:
            rows = []
            for _ in range(el["count"]):
                row = []
                for name, kind, t, it in el["props"]:
                    if kind == "list":
                        n = int(tokens[cursor]); cursor += 1
                        row.append([int(x) for x in tokens[cursor : cursor + n]]); cursor += n
                    else:
                        row.append(float(tokens[cursor])); cursor += 1
                rows.append(row)
            out[el["name"]] = _ascii_rows(el, rows, path)
        return {"elements": out, "comments": comments}

    endian = "<" if fmt == "binary_little_endian" else ">"
    for el in elements:
        props = el["props"]
        if all(kind == "scalar" for _, kind, _, _ in props):
            dt = np.dtype([(name, endian + t) for name, _, t, _ in props])
            nbytes = dt.itemsize * el["count"]
            out[el["name"]] = np.frombuffer(raw, dtype=dt, count=el["count"], offset=pos).copy()
            pos += nbytes
        elif len(props) == 1:
            name, _, ct, it = props[0]
            if el["count"] == 0:
                out[el["name"]] = np.zeros((0, 3), dtype=np.int64)
                continue
            first = int(np.frombuffer(raw, dtype=endian + ct, count=1, offset=pos)[0])
            dt = np.dtype([("n", endian + ct), ("idx", endian + it, (first,))])
            try:
                arr = np.frombuffer(raw, dtype=dt, count=el["count"], offset=pos)
            except ValueError as exc:
                raise MeshFormatError(f"{path}: truncated {el['name']} data") from exc
            if np.any(arr["n"] != first):
                raise MeshFormatError(f"{path}: mixed polygon sizes in {el['name']} (triangles only)")
            out[el["name"]] = arr["idx"].astype(np.int64)
            pos += dt.itemsize * el["count"]
        else:
            raise MeshFormatError(f"{path}: element {el['name']} mixes list and scalar properties")
    return {"elements": out, "comments": comments}


def _ascii_rows(el, rows, path):
    props = el["props"]
    if all(kind == "scalar" for _, kind, _, _ in props):
        dt = np.dtype([(name, t) for name, _, t, _ in props])
        return np.array([tuple(r) for r in rows], dtype=dt)
    lists = [r[0] for r in rows]
    if len({len(x) for x in lists}) > 1:
        raise MeshFormatError(f"{path}: mixed polygon sizes (triangles only)")
    return np.asarray(lists, dtype=np.int64).reshape(len(lists), -1)


def _xyz(vertex) -> np.ndarray:
    return np.column_stack([vertex["x"], vertex["y"], vertex["z"]]).astype(np.float64)


def load_mesh(path: str | os.PathLike) -> TriMesh:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return load_obj(path)
    data = read_ply(path)["elements"]
    if "vertex" not in data or "face" not in data:
        raise MeshFormatError(f"{path}: PLY mesh needs vertex and face elements")
    faces = data["face"]
    if faces.ndim != 2 or (len(faces) and faces.shape[1] != 3):
        raise MeshFormatError(f"{path}: faces must be triangles")
    return TriMesh(_xyz(data["vertex"]), faces.reshape(-1, 3))


def load_obj(path: str | os.PathLike) -> TriMesh:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                if len(idx) != 3:
                    raise MeshFormatError(f"{path}:{lineno}: only triangular faces are supported")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return TriMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def load_cloud(path: str | os.PathLike) -> PointCloud:
    data = read_ply(path)["elements"]
    v = data.get("vertex")
    if v is None:
        raise MeshFormatError(f"{path}: no vertex element")
    names = v.dtype.names
    normals = None
    if all(n in names for n in ("nx", "ny", "nz")):
        normals = np.column_stack([v["nx"], v["ny"], v["nz"]]).astype(np.float64)
    return PointCloud(_xyz(v), normals)


def _header(elements: list[str], comments: list[str]) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines += elements
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def mesh_ply_bytes(mesh: TriMesh, comments: list[str] = ()) -> bytes:
    v = mesh.vertices.astype("<f4")
    f = np.zeros(len(mesh.faces), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    f["n"] = 3
    f["idx"] = mesh.faces
    head = _header([
        f"element vertex {len(v)}", "property float x", "property float y", "property float z",
        f"element face {len(f)}", "property list uchar int vertex_indices",
    ], list(comments))
    return head + v.tobytes() + f.tobytes()


def cloud_ply_bytes(cloud: PointCloud, comments: list[str] = ()) -> bytes:
    cols = [cloud.points] + ([cloud.normals] if cloud.normals is not None else [])
    arr = np.concatenate(cols, axis=1).astype("<f4")
    props = ["property float x", "property float y", "property float z"]
    if cloud.normals is not None:
        props += ["property float nx", "property float ny", "property float nz"]
    head = _header([f"element vertex {len(arr)}"] + props, list(comments))
    return head + arr.tobytes()


def skeleton_ply_bytes(joints: np.ndarray, parents: list[int | None], comments: list[str] = ()) -> bytes:
    """Joints as vertices plus one edge per parent link."""
    v = np.asarray(joints).astype("<f4")
    edges = np.array([(p, i) for i, p in enumerate(parents) if p is not None], dtype="<i4").reshape(-1, 2)
    head = _header([
        f"element vertex {len(v)}", "property float x", "property float y", "property float z",
        f"element edge {len(edges)}", "property int vertex1", "property int vertex2",
    ], list(comments))
    return head + v.tobytes() + edges.tobytes()


def save_mesh(path, mesh: TriMesh, comments: list[str] = ()) -> None:
    atomic_write_bytes(path, mesh_ply_bytes(mesh, comments))


def save_cloud(path, cloud: PointCloud, comments: list[str] = ()) -> None:
    atomic_write_bytes(path, cloud_ply_bytes(cloud, comments))
