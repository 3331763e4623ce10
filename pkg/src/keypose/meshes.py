"""Procedural test meshes: cube, cylinder, sphere, L-bracket, helical coil.

All meshes are closed surfaces with consistent outward winding, sized at
desk scale (a few centimeters). The benchmark and the CLI accept
``builtin:<name>`` in place of a mesh path.
"""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh


def _quad(a, b, c, d) -> list[tuple[int, int, int]]:
    # Two triangles with matching winding.
    return [(a, b, c), (a, c, d)]


def cube(edge: float = 0.08) -> TriangleMesh:
    h = edge / 2.0
    v = np.array([
        [-h, -h, -h], [h, -h, -h], [h, h, -h], [-h, h, -h],
        [-h, -h, h], [h, -h, h], [h, h, h], [-h, h, h],
    ])
    tris = (
        _quad(0, 3, 2, 1)      # bottom (-z)
        + _quad(4, 5, 6, 7)    # top (+z)
        + _quad(0, 1, 5, 4)    # -y
        + _quad(2, 3, 7, 6)    # +y
        + _quad(1, 2, 6, 5)    # +x
        + _quad(3, 0, 4, 7)    # -x
    )
    return TriangleMesh(v, np.asarray(tris, dtype=np.int64))


def cylinder(radius: float = 0.03, height: float = 0.10, segments: int = 48) -> TriangleMesh:
    ang = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.full(segments, -height / 2.0)])
    top = np.column_stack([ring, np.full(segments, height / 2.0)])
    centers = np.array([[0.0, 0.0, -height / 2.0], [0.0, 0.0, height / 2.0]])
    v = np.vstack([bottom, top, centers])
    cb, ct = 2 * segments, 2 * segments + 1

    tris: list[tuple[int, int, int]] = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += _quad(i, j, segments + j, segments + i)   # side, outward
        tris.append((cb, j, i))                           # bottom cap (-z)
        tris.append((ct, segments + i, segments + j))     # top cap (+z)
    return TriangleMesh(v, np.asarray(tris, dtype=np.int64))


def sphere(radius: float = 0.05, subdivisions: int = 3) -> TriangleMesh:
    """Icosphere: subdivided icosahedron projected to the sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(p) for p in v]
    cache: dict[tuple[int, int], int] = {}

    def midpoint(a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        if key not in cache:
            m = np.asarray(verts[a]) + np.asarray(verts[b])
            m /= np.linalg.norm(m)
            cache[key] = len(verts)
            verts.append(tuple(m))
        return cache[key]

    for _ in range(subdivisions):
        nxt = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nxt
    return TriangleMesh(radius * np.asarray(verts), np.asarray(f, dtype=np.int64))


def l_bracket(leg: float = 0.10, width: float = 0.04, thickness: float = 0.03) -> TriangleMesh:
    """L-shaped prism: an L cross-section in xy extruded along z."""
    t = thickness
    # L outline, counter-clockwise.
    outline = np.array([
        [0.0, 0.0], [leg, 0.0], [leg, t], [t, t], [t, leg], [0.0, leg],
    ])
    outline -= outline.mean(axis=0)
    n = len(outline)
    lo = np.column_stack([outline, np.full(n, -width / 2.0)])
    hi = np.column_stack([outline, np.full(n, width / 2.0)])
    v = np.vstack([lo, hi])

    tris: list[tuple[int, int, int]] = []
    # Caps: the L splits into two rectangles (0,1,2,3) and (0,3,4,5).
    for quad in ((0, 1, 2, 3), (0, 3, 4, 5)):
        a, b, c, d = quad
        tris += _quad(a, d, c, b)                              # bottom, -z out
        tris += _quad(n + a, n + b, n + c, n + d)              # top, +z out
    for i in range(n):
        j = (i + 1) % n
        tris += _quad(i, j, n + j, n + i)                      # sides
    return TriangleMesh(v, np.asarray(tris, dtype=np.int64))


def helix(
    coil_radius: float = 0.03,
    wire_radius: float = 0.006,
    pitch: float = 0.016,
    turns: float = 3.0,
    segments_u: int = 96,
    segments_v: int = 12,
) -> TriangleMesh:
    """Screw-like coil: a circular tube swept along a helical path, capped."""
    nu, nv = segments_u, segments_v
    u = np.linspace(0.0, 2.0 * np.pi * turns, nu)
    path = np.stack([
        coil_radius * np.cos(u),
        coil_radius * np.sin(u),
        pitch * u / (2.0 * np.pi),
    ], axis=1)
    path -= path.mean(axis=0)

    # Frenet-like frame along the path (helix tangent is never degenerate).
    tangent = np.stack([
        -coil_radius * np.sin(u),
        coil_radius * np.cos(u),
        np.full(nu, pitch / (2.0 * np.pi)),
    ], axis=1)
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    radial = np.stack([np.cos(u), np.sin(u), np.zeros(nu)], axis=1)
    binorm = np.cross(tangent, radial)
    binorm /= np.linalg.norm(binorm, axis=1, keepdims=True)

    ang = 2.0 * np.pi * np.arange(nv) / nv
    rings = (
        path[:, None, :]
        + wire_radius * np.cos(ang)[None, :, None] * radial[:, None, :]
        + wire_radius * np.sin(ang)[None, :, None] * binorm[:, None, :]
    )
    v = rings.reshape(-1, 3)

    tris: list[tuple[int, int, int]] = []
    for i in range(nu - 1):
        for j in range(nv):
            k = (j + 1) % nv
            a, b = i * nv + j, i * nv + k
            c, d = (i + 1) * nv + k, (i + 1) * nv + j
            tris += _quad(a, b, c, d)
    # End caps: fan from the path endpoints.
    v = np.vstack([v, path[0], path[-1]])
    c0, c1 = len(v) - 2, len(v) - 1
    for j in range(nv):
        k = (j + 1) % nv
        tris.append((c0, k, j))
        tris.append((c1, (nu - 1) * nv + j, (nu - 1) * nv + k))
    return TriangleMesh(v, np.asarray(tris, dtype=np.int64))


BUILTIN_MESHES = {
    "cube": cube,
    "cylinder": cylinder,
    "sphere": sphere,
    "l_bracket": l_bracket,
    "helix": helix,
}


def builtin_mesh(name: str) -> TriangleMesh:
    try:
        return BUILTIN_MESHES[name]()
    except KeyError:
        raise KeyError(f"unknown builtin mesh {name!r}; available: {sorted(BUILTIN_MESHES)}")
