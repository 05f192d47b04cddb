"""Marching cubes over voxel-center samples of ``[0,1]^3``.

The 256-entry triangle table is generated at import time by tracing the
iso-contour on the six faces of the cube. On an ambiguous face (two diagonal
inside corners) the inside corners are always separated. That rule depends only
on the four labels of the face, so the two cells sharing a face always agree and
the output has no cracks. Each traced loop is triangulated without diagonals
that lie in a cube face.

Corner ``c`` of a cell sits at offset ``(c & 1, c >> 1 & 1, c >> 2 & 1)``.
A corner is inside when its value is strictly greater than the threshold;
triangles face toward decreasing values.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import TriMesh

log = logging.getLogger(__name__)

CORNER_OFFSETS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)])
EDGES = [(a, b) for a in range(8) for b in range(a + 1, 8) if bin(a ^ b).count("1") == 1]
_EDGE_INDEX = {e: i for i, e in enumerate(EDGES)}


def _edge_id(a: int, b: int) -> int:
    return _EDGE_INDEX[(min(a, b), max(a, b))]


def _cube_faces() -> list[list[int]]:
    """Corner cycles of the 6 faces, counter-clockwise seen from outside."""
    faces = []
    for axis in range(3):
        for side in (0, 1):
            corners = [c for c in range(8) if CORNER_OFFSETS[c, axis] == side]
            normal = np.zeros(3)
            normal[axis] = 1.0 if side else -1.0
            center = CORNER_OFFSETS[corners].mean(axis=0)
            u = np.zeros(3)
            u[(axis + 1) % 3] = 1.0
            v = np.cross(normal, u)
            ang = [np.arctan2((CORNER_OFFSETS[c] - center) @ v, (CORNER_OFFSETS[c] - center) @ u)
                   for c in corners]
            faces.append([corners[i] for i in np.argsort(ang)])
    return faces


CUBE_FACES = _cube_faces()


def _case_loops(case: int) -> list[list[int]]:
    inside = [(case >> c) & 1 == 1 for c in range(8)]
    nxt: dict[int, int] = {}
    for cyc in CUBE_FACES:
        kinds = []
        for i in range(4):
            a, b = cyc[i], cyc[(i + 1) % 4]
            kinds.append("leave" if inside[a] and not inside[b]
                         else "enter" if inside[b] and not inside[a] else None)
        for i in range(4):
            if kinds[i] != "leave":
                continue
            j = (i - 1) % 4
            while kinds[j] != "enter":
                j = (j - 1) % 4
            nxt[_edge_id(cyc[i], cyc[(i + 1) % 4])] = _edge_id(cyc[j], cyc[(j + 1) % 4])
    loops = []
    seen: set[int] = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        e = nxt[start]
        while e != start:
            loop.append(e)
            seen.add(e)
            e = nxt[e]
        loops.append(loop)
    return loops


_FACE_EDGES = [{_edge_id(c[i], c[(i + 1) % 4]) for i in range(4)} for c in CUBE_FACES]


def _share_face(a: int, b: int) -> bool:
    return any(a in f and b in f for f in _FACE_EDGES)


def _triangulate(poly: list[int]):
    """Triangulate a contour loop without any diagonal between two edges of one cube face.

    Such a diagonal could be emitted by the neighbouring cell as well, giving an
    edge shared by four triangles.
    """
    n = len(poly)
    if n == 3:
        return [tuple(poly)]
    for k in range(1, n - 1):
        a, b, c = poly[0], poly[k], poly[-1]
        if (k > 1 and _share_face(a, b)) or (k < n - 2 and _share_face(b, c)):
            continue
        left = _triangulate(poly[: k + 1]) if k > 1 else []
        right = _triangulate(poly[k:]) if k < n - 2 else []
        if left is None or right is None:
            continue
        return left + [(a, b, c)] + right
    return None


def _build_table() -> list[list[tuple[int, int, int]]]:
    table = []
    for case in range(256):
        tris = []
        for loop in _case_loops(case):
            tris += _triangulate(loop)
        table.append(tris)
    # orient so that triangles face away from inside corners
    mids = np.array([(CORNER_OFFSETS[a] + CORNER_OFFSETS[b]) / 2.0 for a, b in EDGES])
    a, b, c = (mids[i] for i in table[1][0])
    if np.cross(b - a, c - a) @ (a - CORNER_OFFSETS[0]) < 0:
        table = [[(t[0], t[2], t[1]) for t in tris] for tris in table]
    return table


TRIANGLE_TABLE = _build_table()
_MAX_TRIS = max(len(t) for t in TRIANGLE_TABLE)
_TABLE_ARRAY = np.full((256, _MAX_TRIS, 3), -1, dtype=np.int64)
for _case, _tris in enumerate(TRIANGLE_TABLE):
    if _tris:
        _TABLE_ARRAY[_case, : len(_tris)] = _tris
_TABLE_COUNT = np.array([len(t) for t in TRIANGLE_TABLE])

# per local edge: lower corner offset and axis
_EDGE_ORIGIN = np.array([CORNER_OFFSETS[a] for a, _ in EDGES])
_EDGE_AXIS = np.array([int(np.log2(a ^ b)) for a, b in EDGES])


@dataclass
class ScalarField:
    values: np.ndarray           # (n, n, n), indexed [x, y, z]
    threshold: float = 0.5

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = self.values.shape[0]
        if self.values.shape != (n, n, n):
            raise ValueError(f"field must be cubic, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @property
    def n(self) -> int:
        return self.values.shape[0]


def marching_cubes(field: ScalarField | np.ndarray, threshold: float | None = None) -> TriMesh:
    """Triangle mesh of the ``threshold`` iso-surface.

    The grid is padded with one layer of outside values so surfaces touching the
    domain boundary still close. Vertex positions are linear interpolations along
    cell edges between voxel centers ``(i + 0.5) / n``.
    """
    if not isinstance(field, ScalarField):
        field = ScalarField(field, 0.5 if threshold is None else threshold)
    thr = field.threshold if threshold is None else threshold
    n = field.n
    if n < 2:
        raise ValueError("marching cubes needs n >= 2")
    vals = field.values
    pad = min(float(vals.min()), thr)
    v = np.pad(vals, 1, constant_values=pad)
    inside = v > thr
    N = n + 2
    cells = n + 1
    case = np.zeros((cells, cells, cells), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        case |= inside[dx:dx + cells, dy:dy + cells, dz:dz + cells].astype(np.int64) << c
    active = np.nonzero((case != 0) & (case != 255))
    if len(active[0]) == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), {"resolution": n, "threshold": thr})
    cell_idx = np.stack(active, axis=1)                  # (A, 3) in C order
    cases = case[active]
    tris = _TABLE_ARRAY[cases]                            # (A, T, 3) local edge ids
    valid = np.arange(_MAX_TRIS)[None, :] < _TABLE_COUNT[cases][:, None]
    cell_of_tri = np.repeat(np.arange(len(cases)), _MAX_TRIS).reshape(len(cases), _MAX_TRIS)[valid]
    local = tris[valid]                                   # (F, 3)
    origin = cell_idx[cell_of_tri][:, None, :] + _EDGE_ORIGIN[local]   # (F, 3, 3)
    axis = _EDGE_AXIS[local]
    gid = axis * N ** 3 + (origin[..., 0] * N + origin[..., 1]) * N + origin[..., 2]
    uniq, faces = np.unique(gid, return_inverse=True)
    faces = faces.reshape(-1, 3)

    ax = uniq // N ** 3
    rem = uniq % N ** 3
    p0 = np.stack([rem // (N * N), (rem // N) % N, rem % N], axis=1)
    p1 = p0.copy()
    p1[np.arange(len(p1)), ax] += 1
    v0 = v[p0[:, 0], p0[:, 1], p0[:, 2]]
    v1 = v[p1[:, 0], p1[:, 1], p1[:, 2]]
    t = (thr - v0) / (v1 - v0)
    x0 = (p0 - 0.5) / n
    x1 = (p1 - 0.5) / n
    verts = x0 + t[:, None] * (x1 - x0)
    return TriMesh(verts, faces, {"resolution": n, "threshold": thr})


def laplacian_smooth(mesh: TriMesh, iterations: int = 10, lam: float = 0.5) -> TriMesh:
    """Umbrella-operator smoothing: ``v += lam * (mean(neighbours) - v)``."""
    if mesh.is_empty or iterations <= 0:
        return mesh
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    nv = len(mesh.vertices)
    deg = np.bincount(edges.ravel(), minlength=nv).astype(np.float64)
    v = mesh.vertices.copy()
    for _ in range(iterations):
        acc = np.zeros_like(v)
        np.add.at(acc, edges[:, 0], v[edges[:, 1]])
        np.add.at(acc, edges[:, 1], v[edges[:, 0]])
        mean = acc / np.maximum(deg, 1.0)[:, None]
        v = v + lam * np.where(deg[:, None] > 0, mean - v, 0.0)
    return TriMesh(v, f.copy(), dict(mesh.metadata))
