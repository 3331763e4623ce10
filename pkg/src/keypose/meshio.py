"""ASCII PLY point-cloud I/O and OBJ mesh reading.

PLY layout written here (and accepted back):

    ply
    format ascii 1.0
    element vertex N
    property float x ... z [, nx, ny, nz]
    end_header
    <one vertex per line>

The reader tolerates extra vertex properties (ignored by position) and a
face element (skipped). OBJ reading handles `v` and `f` records only;
polygon faces are fan-triangulated.
"""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud, TriangleMesh


class MeshParseError(ValueError):
    """File could not be parsed; the message names the offending line."""


def write_ply(path, cloud: PointCloud) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(cloud)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        if cloud.has_normals:
            f.write("property float nx\nproperty float ny\nproperty float nz\n")
        f.write("end_header\n")
        if cloud.has_normals:
            rows = np.hstack([cloud.points, cloud.normals])
        else:
            rows = cloud.points
        f.writelines(" ".join(repr(v) for v in row) + "\n" for row in rows.tolist())


def read_ply(path) -> PointCloud:
    with open(path, "r", encoding="ascii") as f:
        lines = f.read().splitlines()

    if not lines or lines[0].strip() != "ply":
        raise MeshParseError(f"{path}: line 1: not a PLY file")

    n_vertices = 0
    properties: list[str] = []
    elements: list[tuple[str, int]] = []
    current_element = None
    header_end = None
    for ln, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "format":
            if tokens[1:2] != ["ascii"]:
                raise MeshParseError(f"{path}: line {ln}: only ascii format supported")
        elif tokens[0] == "element":
            try:
                count = int(tokens[2])
            except (IndexError, ValueError):
                raise MeshParseError(f"{path}: line {ln}: malformed element declaration")
            current_element = tokens[1]
            elements.append((current_element, count))
            if current_element == "vertex":
                n_vertices = count
        elif tokens[0] == "property" and current_element == "vertex":
            properties.append(tokens[-1])
        elif tokens[0] == "end_header":
            header_end = ln
            break
    if header_end is None:
        raise MeshParseError(f"{path}: missing end_header")

    for name in ("x", "y", "z"):
        if name not in properties:
            raise MeshParseError(f"{path}: vertex element lacks property {name}")
    cols = {name: properties.index(name) for name in properties}
    has_normals = all(n in cols for n in ("nx", "ny", "nz"))

    body = lines[header_end:]
    if len(body) < n_vertices:
        raise MeshParseError(f"{path}: expected {n_vertices} vertex lines, found {len(body)}")
    pts = np.empty((n_vertices, 3))
    nrm = np.empty((n_vertices, 3)) if has_normals else None
    for i in range(n_vertices):
        tokens = body[i].split()
        if len(tokens) < len(properties):
            raise MeshParseError(f"{path}: line {header_end + 1 + i}: "
                                 f"expected {len(properties)} values, got {len(tokens)}")
        try:
            pts[i] = (float(tokens[cols['x']]), float(tokens[cols['y']]), float(tokens[cols['z']]))
            if nrm is not None:
                nrm[i] = (float(tokens[cols['nx']]), float(tokens[cols['ny']]), float(tokens[cols['nz']]))
        except ValueError:
            raise MeshParseError(f"{path}: line {header_end + 1 + i}: non-numeric vertex value")
    return PointCloud(pts, nrm)


def _parse_face_vertex(token: str, n_vertices: int, path, ln: int) -> int:
    # OBJ faces may carry texture/normal refs: "v", "v/vt", "v//vn", "v/vt/vn".
    head = token.split("/")[0]
    try:
        idx = int(head)
    except ValueError:
        raise MeshParseError(f"{path}: line {ln}: bad face index {token!r}")
    if idx > 0:
        idx -= 1
    elif idx < 0:
        idx += n_vertices
    else:
        raise MeshParseError(f"{path}: line {ln}: face index 0 is invalid")
    if not 0 <= idx < n_vertices:
        raise MeshParseError(f"{path}: line {ln}: face index {token!r} out of range")
    return idx


def read_obj(path) -> TriangleMesh:
    vertices: list[tuple[float, float, float]] = []
    triangles: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="ascii") as f:
        for ln, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if tokens[0] == "v":
                if len(tokens) < 4:
                    raise MeshParseError(f"{path}: line {ln}: vertex needs 3 coordinates")
                try:
                    vertices.append((float(tokens[1]), float(tokens[2]), float(tokens[3])))
                except ValueError:
                    raise MeshParseError(f"{path}: line {ln}: non-numeric vertex coordinate")
            elif tokens[0] == "f":
                if len(tokens) < 4:
                    raise MeshParseError(f"{path}: line {ln}: face needs at least 3 vertices")
                idx = [_parse_face_vertex(t, len(vertices), path, ln) for t in tokens[1:]]
                for a, b in zip(idx[1:-1], idx[2:]):
                    triangles.append((idx[0], a, b))
            # everything else (vn, vt, usemtl, o, g, s, ...) is ignored
    if not vertices:
        raise MeshParseError(f"{path}: no vertices found")
    if not triangles:
        raise MeshParseError(f"{path}: no faces found")
    return TriangleMesh(np.asarray(vertices), np.asarray(triangles, dtype=np.int64))


def write_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="ascii") as f:
        for v in mesh.vertices:
            f.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in mesh.triangles:
            f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def read_ply_mesh(path) -> TriangleMesh:
    """Read an ASCII PLY that carries a face element."""
    with open(path, "r", encoding="ascii") as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshParseError(f"{path}: line 1: not a PLY file")

    elements: list[tuple[str, int]] = []
    n_vertex_props = 0
    current = None
    header_end = None
    for ln, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "element":
            try:
                elements.append((tokens[1], int(tokens[2])))
            except (IndexError, ValueError):
                raise MeshParseError(f"{path}: line {ln}: malformed element declaration")
            current = tokens[1]
        elif tokens[0] == "property" and current == "vertex":
            n_vertex_props += 1
        elif tokens[0] == "end_header":
            header_end = ln
            break
    if header_end is None:
        raise MeshParseError(f"{path}: missing end_header")

    vertices: list[tuple[float, float, float]] = []
    triangles: list[tuple[int, int, int]] = []
    row = header_end
    for name, count in elements:
        for _ in range(count):
            if row >= len(lines):
                raise MeshParseError(f"{path}: truncated body (element {name})")
            tokens = lines[row].split()
            row += 1
            if name == "vertex":
                try:
                    vertices.append((float(tokens[0]), float(tokens[1]), float(tokens[2])))
                except (IndexError, ValueError):
                    raise MeshParseError(f"{path}: line {row}: bad vertex record")
            elif name == "face":
                try:
                    k = int(tokens[0])
                    idx = [int(t) for t in tokens[1:1 + k]]
                except (IndexError, ValueError):
                    raise MeshParseError(f"{path}: line {row}: bad face record")
                if len(idx) != k or k < 3:
                    raise MeshParseError(f"{path}: line {row}: bad face record")
                for a, b in zip(idx[1:-1], idx[2:]):
                    triangles.append((idx[0], a, b))
    if not triangles:
        raise MeshParseError(f"{path}: no faces found")
    return TriangleMesh(np.asarray(vertices), np.asarray(triangles, dtype=np.int64))


def read_mesh(path) -> TriangleMesh:
    """Dispatch on extension: .obj or .ply (with faces)."""
    p = str(path)
    if p.lower().endswith(".obj"):
        return read_obj(p)
    if p.lower().endswith(".ply"):
        return read_ply_mesh(p)
    raise MeshParseError(f"{p}: unsupported mesh format (expected .obj or .ply)")
