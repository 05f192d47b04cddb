"""Triangle meshes, voxel grids and point clouds over the unit cube."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

CANONICAL_EXTENT = 0.9


class GeometryError(ValueError):
    pass


class ObjParseError(GeometryError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def validate(self) -> None:
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise GeometryError("face index out of range")
        f = self.faces
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise GeometryError("degenerate face (repeated vertex index)")

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        t = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def face_normals(self) -> np.ndarray:
        t = self.triangles()
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)

    def signed_volume(self) -> float:
        t = self.triangles()
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    def transformed(self, scale: float = 1.0, offset=(0.0, 0.0, 0.0)) -> "TriMesh":
        return TriMesh(self.vertices * scale + np.asarray(offset), self.faces.copy(), dict(self.metadata))


@dataclass
class VoxelGrid:
    """Boolean occupancy over ``[0,1]^3``; ``occupancy[i, j, k]`` is voxel (x=i, y=j, z=k)."""

    occupancy: np.ndarray

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        n = self.occupancy.shape[0]
        if self.occupancy.shape != (n, n, n):
            raise GeometryError(f"voxel grid must be cubic, got {self.occupancy.shape}")

    @property
    def n(self) -> int:
        return self.occupancy.shape[0]

    def centers(self) -> np.ndarray:
        return voxel_centers(self.n)


@dataclass
class PointCloud:
    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.points)


def voxel_centers(n: int) -> np.ndarray:
    """Centers ``((i+0.5)/n, (j+0.5)/n, (k+0.5)/n)`` shaped ``(n, n, n, 3)``, indexed ``[i, j, k]``."""
    c = (np.arange(n) + 0.5) / n
    return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1)


# ---------------------------------------------------------------- normalization

def normalize_mesh(mesh: TriMesh, extent: float = CANONICAL_EXTENT) -> TriMesh:
    """Scale uniformly and translate so the bounding box is centered in the unit cube
    with its longest side equal to ``extent``."""
    if len(mesh.vertices) == 0 or len(mesh.faces) == 0:
        raise GeometryError("cannot normalize an empty mesh")
    used = mesh.vertices[np.unique(mesh.faces)]
    lo, hi = used.min(axis=0), used.max(axis=0)
    size = float((hi - lo).max())
    if size <= 0:
        raise GeometryError("mesh has zero extent")
    center = 0.5 * (lo + hi)
    v = (mesh.vertices - center) * (extent / size) + 0.5
    return TriMesh(v, mesh.faces.copy(), dict(mesh.metadata))


# ---------------------------------------------------------------- topology

class WatertightReport(NamedTuple):
    is_watertight: bool
    boundary_edge_count: int
    non_manifold_edge_count: int


def edge_face_counts(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    return np.unique(edges, axis=0, return_counts=True)


def watertight_check(mesh: TriMesh) -> WatertightReport:
    if len(mesh.faces) == 0:
        return WatertightReport(False, 0, 0)
    _, counts = edge_face_counts(mesh)
    boundary = int((counts == 1).sum())
    nonmanifold = int((counts > 2).sum())
    return WatertightReport(boundary == 0 and nonmanifold == 0, boundary, nonmanifold)


# ---------------------------------------------------------------- voxelization

def _orient_sign(ay, az, by, bz, qy, qz):
    """Sign of orient2d(a, b, q) with q perturbed to (qy + e, qz + e^2).

    Exact zeros are broken by the perturbation, so a point never lies on an edge.
    """
    det = (by - ay) * (qz - az) - (bz - az) * (qy - ay)
    s = np.sign(det)
    tie = s == 0
    if np.any(tie):
        # coefficient of e: -(bz - az); of e^2: (by - ay)
        t1 = np.sign(-(bz - az))
        t2 = np.sign(by - ay)
        s = np.where(tie, np.where(t1 != 0, t1, t2), s)
    return s


def inside_mask(mesh: TriMesh, points: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Ray-parity inside test along +x with symbolic perturbation for ties.

    ``points`` is (P, 3). Points sharing (y, z) share one ray. A point exactly on
    the surface counts only crossings with ``x_hit > x``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rays, ray_of = np.unique(pts[:, 1:], axis=0, return_inverse=True)
    ray_of = ray_of.ravel()
    tri = mesh.triangles()
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    # triangles whose yz projection is degenerate are never crossed
    area2 = (b[:, 1] - a[:, 1]) * (c[:, 2] - a[:, 2]) - (b[:, 2] - a[:, 2]) * (c[:, 1] - a[:, 1])
    keep = area2 != 0
    a, b, c = a[keep], b[keep], c[keep]
    nrm = np.cross(b - a, c - a)
    qy, qz = rays[:, 0][None, :], rays[:, 1][None, :]
    hit_ray, hit_x = [], []
    for s in range(0, len(a), chunk):
        A, B, C, N = a[s:s + chunk], b[s:s + chunk], c[s:s + chunk], nrm[s:s + chunk]
        col = lambda v, i: v[:, i][:, None]  # noqa: E731
        s0 = _orient_sign(col(A, 1), col(A, 2), col(B, 1), col(B, 2), qy, qz)
        s1 = _orient_sign(col(B, 1), col(B, 2), col(C, 1), col(C, 2), qy, qz)
        s2 = _orient_sign(col(C, 1), col(C, 2), col(A, 1), col(A, 2), qy, qz)
        ti, ri = np.nonzero((s0 == s1) & (s1 == s2))
        # plane x at (qy, qz): n . (p - A) = 0
        xh = A[ti, 0] - (N[ti, 1] * (rays[ri, 0] - A[ti, 1]) + N[ti, 2] * (rays[ri, 1] - A[ti, 2])) / N[ti, 0]
        hit_ray.append(ri)
        hit_x.append(xh)
    inside = np.zeros(len(pts), dtype=bool)
    if not hit_ray:
        return inside
    hit_ray = np.concatenate(hit_ray)
    hit_x = np.concatenate(hit_x)
    order = np.lexsort((hit_x, hit_ray))
    hit_ray, hit_x = hit_ray[order], hit_x[order]
    ray_ids = np.arange(len(rays))
    starts = np.searchsorted(hit_ray, ray_ids, "left")
    ends = np.searchsorted(hit_ray, ray_ids, "right")
    porder = np.argsort(ray_of, kind="stable")
    pstarts = np.searchsorted(ray_of[porder], ray_ids, "left")
    pends = np.searchsorted(ray_of[porder], ray_ids, "right")
    for r in np.nonzero(ends > starts)[0]:
        lo, hi = starts[r], ends[r]
        sel = porder[pstarts[r]:pends[r]]
        above = (hi - lo) - np.searchsorted(hit_x[lo:hi], pts[sel, 0], "right")
        inside[sel] = (above % 2).astype(bool)
    return inside


def voxelize(mesh: TriMesh, n: int) -> VoxelGrid:
    """Occupancy of voxel centers under the ray-parity inside test."""
    report = watertight_check(mesh)
    if not report.is_watertight:
        raise GeometryError(
            f"voxelize needs a watertight mesh ({report.boundary_edge_count} boundary, "
            f"{report.non_manifold_edge_count} non-manifold edges); repair it or use an analytic shape")
    centers = voxel_centers(n).reshape(-1, 3)
    return VoxelGrid(inside_mask(mesh, centers).reshape(n, n, n))


def voxelize_predicate(predicate, n: int) -> VoxelGrid:
    """Occupancy from an analytic inside predicate evaluated at voxel centers."""
    centers = voxel_centers(n)
    return VoxelGrid(np.asarray(predicate(centers.reshape(-1, 3))).reshape(n, n, n))


# ---------------------------------------------------------------- sampling

def sample_surface(mesh: TriMesh, count: int, seed: int) -> PointCloud:
    """Area-weighted uniform samples on the surface, with face normals."""
    if count < 1:
        raise GeometryError("count must be >= 1")
    areas = mesh.face_areas()
    total = areas.sum()
    if len(areas) == 0 or total <= 0:
        raise GeometryError("cannot sample a zero-area mesh")
    rng = np.random.default_rng(seed)
    fidx = rng.choice(len(areas), size=count, p=areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    t = mesh.triangles()[fidx]
    pts = ((1 - r1)[:, None] * t[:, 0] + (r1 * (1 - r2))[:, None] * t[:, 1]
           + (r1 * r2)[:, None] * t[:, 2])
    return PointCloud(pts, mesh.face_normals()[fidx])


# ---------------------------------------------------------------- OBJ

def save_obj(mesh: TriMesh, path: str | Path) -> None:
    lines = [f"v {x:.9f} {y:.9f} {z:.9f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_obj(path: str | Path) -> TriMesh:
    """Read ``v`` and ``f`` records; polygons are fan-triangulated.

    Face tokens may carry ``/vt/vn`` suffixes; negative indices are relative.
    Other record types are ignored.
    """
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    face_lines: list[tuple[int, list[int]]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ObjParseError(lineno, "vertex needs 3 coordinates")
                try:
                    verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError as exc:
                    raise ObjParseError(lineno, f"bad vertex coordinate ({exc})") from None
            elif tag == "f":
                if len(parts) < 4:
                    raise ObjParseError(lineno, "face needs at least 3 vertices")
                idx = []
                for tok in parts[1:]:
                    try:
                        i = int(tok.split("/")[0])
                    except ValueError:
                        raise ObjParseError(lineno, f"bad face index {tok!r}") from None
                    if i == 0:
                        raise ObjParseError(lineno, "face index 0 is invalid (indices are 1-based)")
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                face_lines.append((lineno, idx))
    nv = len(verts)
    for lineno, idx in face_lines:
        for i in idx:
            if not 0 <= i < nv:
                raise ObjParseError(lineno, f"face index {i + 1} out of range (have {nv} vertices)")
        for k in range(1, len(idx) - 1):
            faces.append((idx[0], idx[k], idx[k + 1]))
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3))


# ---------------------------------------------------------------- binary grids

VOXEL_MAGIC = b"S2MVOX1"
FIELD_MAGIC = b"S2MFLD1"


def save_voxels(grid: VoxelGrid, path: str | Path) -> None:
    # file order is x fastest, i.e. C order over [k, j, i]
    bits = np.packbits(grid.occupancy.transpose(2, 1, 0).ravel(), bitorder="little")
    with open(path, "wb") as f:
        f.write(VOXEL_MAGIC + struct.pack("<I", grid.n) + bits.tobytes())


def load_voxels(path: str | Path) -> VoxelGrid:
    raw = Path(path).read_bytes()
    if raw[:7] != VOXEL_MAGIC:
        raise GeometryError(f"{path}: bad voxel magic")
    (n,) = struct.unpack("<I", raw[7:11])
    bits = np.unpackbits(np.frombuffer(raw[11:], dtype=np.uint8), bitorder="little", count=n ** 3)
    return VoxelGrid(bits.astype(bool).reshape(n, n, n).transpose(2, 1, 0))


def save_field(values: np.ndarray, path: str | Path) -> None:
    n = values.shape[0]
    with open(path, "wb") as f:
        f.write(FIELD_MAGIC + struct.pack("<I", n))
        f.write(np.ascontiguousarray(values.transpose(2, 1, 0), dtype="<f4").tobytes())


def load_field(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:7] != FIELD_MAGIC:
        raise GeometryError(f"{path}: bad field magic")
    (n,) = struct.unpack("<I", raw[7:11])
    vals = np.frombuffer(raw[11:11 + 4 * n ** 3], dtype="<f4").astype(np.float64)
    return vals.reshape(n, n, n).transpose(2, 1, 0)


def save_points(cloud: PointCloud, path: str | Path) -> None:
    Path(path).write_text("".join(f"{x:.9f} {y:.9f} {z:.9f}\n" for x, y, z in cloud.points))


def load_points(path: str | Path) -> PointCloud:
    return PointCloud(np.loadtxt(path, dtype=np.float64, ndmin=2))
