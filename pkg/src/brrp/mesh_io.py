"""Triangle mesh file I/O: OBJ and PLY ingestion, binary PLY export."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import TriangleMesh


def load_mesh(path: str | Path) -> TriangleMesh:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _load_obj(path)
    if suffix == ".ply":
        return _load_ply(path)
    raise ValueError(f"unsupported mesh format: {path.name}")


def _load_obj(path: Path) -> TriangleMesh:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            vertices.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            # indices may be v, v/vt, v/vt/vn or v//vn; 1-based, negatives
            # count from the end
            idx = []
            for token in parts[1:]:
                raw = int(token.split("/")[0])
                idx.append(raw - 1 if raw > 0 else len(vertices) + raw)
            for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                faces.append([idx[0], idx[k], idx[k + 1]])
    return TriangleMesh(np.asarray(vertices, dtype=np.float64), np.asarray(faces, dtype=np.int64))


def _load_ply(path: Path) -> TriangleMesh:
    with path.open("rb") as f:
        header_lines = []
        while True:
            line = f.readline().decode("ascii").strip()
            header_lines.append(line)
            if line == "end_header":
                break
        fmt = None
        counts = {}
        props: dict[str, list[tuple[str, str]]] = {}
        current = None
        for line in header_lines:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                current = parts[1]
                counts[current] = int(parts[2])
                props[current] = []
            elif parts[0] == "property" and current is not None:
                if parts[1] == "list":
                    props[current].append(("list", parts[-1]))
                else:
                    props[current].append((parts[1], parts[2]))
        nv = counts.get("vertex", 0)
        nf = counts.get("face", 0)
        if fmt == "ascii":
            tokens = f.read().decode("ascii").split("\n")
            vert_rows = [t.split() for t in tokens[:nv]]
            verts = np.asarray([[float(x) for x in row[:3]] for row in vert_rows])
            faces = []
            for row in (t.split() for t in tokens[nv : nv + nf]):
                n = int(row[0])
                idx = [int(x) for x in row[1 : 1 + n]]
                for k in range(1, n - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        elif fmt == "binary_little_endian":
            vert_fmt = "".join(_STRUCT_CODE[t] for t, _ in props["vertex"])
            stride = struct.calcsize("<" + vert_fmt)
            raw = f.read(nv * stride)
            rows = struct.unpack("<" + vert_fmt * nv, raw)
            per = len(props["vertex"])
            verts = np.asarray(rows, dtype=np.float64).reshape(nv, per)[:, :3]
            faces = []
            for _ in range(nf):
                (n,) = struct.unpack("<B", f.read(1))
                idx = struct.unpack(f"<{n}i", f.read(4 * n))
                for k in range(1, n - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        else:
            raise ValueError(f"unsupported PLY format {fmt!r}")
    return TriangleMesh(verts, np.asarray(faces, dtype=np.int64))


_STRUCT_CODE = {
    "float": "f",
    "float32": "f",
    "double": "d",
    "float64": "d",
    "uchar": "B",
    "uint8": "B",
    "char": "b",
    "int8": "b",
    "short": "h",
    "int16": "h",
    "ushort": "H",
    "uint16": "H",
    "int": "i",
    "int32": "i",
    "uint": "I",
    "uint32": "I",
}


def save_mesh_ply(path: str | Path, mesh: TriangleMesh) -> None:
    """Write a binary little-endian PLY."""
    path = Path(path)
    v = np.ascontiguousarray(mesh.vertices, dtype="<f4")
    f = np.ascontiguousarray(mesh.triangles, dtype="<i4")
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(v)}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        f"element face {len(f)}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    with path.open("wb") as out:
        out.write(header.encode("ascii"))
        out.write(v.tobytes())
        if len(f):
            counts = np.full((len(f), 1), 3, dtype="<u1")
            packed = np.empty(len(f), dtype=[("n", "<u1"), ("idx", "<i4", (3,))])
            packed["n"] = counts[:, 0]
            packed["idx"] = f
            out.write(packed.tobytes())
