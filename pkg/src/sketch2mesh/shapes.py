"""Analytic primitives as closed, outward-oriented meshes paired with exact predicates.

Each primitive exposes ``mesh()``, ``contains(points)`` and ``sdf(points)`` so
tests can compare mesh processing against closed-form geometry.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import TriMesh

PHI = (1.0 + 5.0 ** 0.5) / 2.0

ICOSAHEDRON_VERTICES = np.array([
    [-1, PHI, 0], [1, PHI, 0], [-1, -PHI, 0], [1, -PHI, 0],
    [0, -1, PHI], [0, 1, PHI], [0, -1, -PHI], [0, 1, -PHI],
    [PHI, 0, -1], [PHI, 0, 1], [-PHI, 0, -1], [-PHI, 0, 1],
], dtype=np.float64)

ICOSAHEDRON_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


def icosphere(subdivisions: int) -> TriMesh:
    """Unit-radius icosphere by repeated midpoint subdivision."""
    verts = [v / np.linalg.norm(v) for v in ICOSAHEDRON_VERTICES]
    faces = [tuple(f) for f in ICOSAHEDRON_FACES]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriMesh(np.array(verts), np.array(faces))


def _grid_faces(rows: int, cols: int, wrap_cols: bool = True) -> list[tuple[int, int, int]]:
    faces = []
    for i in range(rows - 1):
        for j in range(cols if wrap_cols else cols - 1):
            a = i * cols + j
            b = i * cols + (j + 1) % cols
            c = (i + 1) * cols + j
            d = (i + 1) * cols + (j + 1) % cols
            faces += [(a, c, b), (b, c, d)]
    return faces


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float] = (0.5, 0.5, 0.5)
    radius: float = 0.45
    subdivisions: int = 3

    def mesh(self) -> TriMesh:
        m = icosphere(self.subdivisions)
        return TriMesh(m.vertices * self.radius + np.asarray(self.center), m.faces)

    def sdf(self, p: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.asarray(p) - np.asarray(self.center), axis=-1) - self.radius

    def contains(self, p: np.ndarray) -> np.ndarray:
        return self.sdf(p) < 0

    def ray_intersect(self, origins: np.ndarray, direction: np.ndarray):
        """First-hit parameter ``t`` (inf on miss) and outward normals for unit ``direction``."""
        oc = origins - np.asarray(self.center)
        b = oc @ direction
        disc = b * b - (np.einsum("ij,ij->i", oc, oc) - self.radius ** 2)
        hit = disc >= 0
        t = np.full(len(origins), np.inf)
        t[hit] = -b[hit] - np.sqrt(disc[hit])
        normals = np.zeros_like(origins)
        normals[hit] = (oc[hit] + t[hit, None] * direction) / self.radius
        return t, normals


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float] = (0.25, 0.25, 0.25)
    hi: tuple[float, float, float] = (0.75, 0.75, 0.75)

    def mesh(self) -> TriMesh:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        corners = np.array([[(hi if (i >> k) & 1 else lo)[k] for k in range(3)] for i in range(8)])
        # corner index = x + 2y + 4z; faces wound counter-clockwise seen from outside
        quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
        faces = []
        for a, b, c, d in quads:
            faces += [(a, b, c), (a, c, d)]
        return TriMesh(corners, np.array(faces))

    def sdf(self, p: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        c, h = 0.5 * (lo + hi), 0.5 * (hi - lo)
        q = np.abs(np.asarray(p) - c) - h
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        return outside + np.minimum(q.max(axis=-1), 0.0)

    def contains(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p)
        return np.all((p > np.asarray(self.lo)) & (p < np.asarray(self.hi)), axis=-1)

    def ray_intersect(self, origins: np.ndarray, direction: np.ndarray):
        """Slab-method first hit; normals are the axis of the entry face."""
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / direction
            t0 = (lo - origins) * inv
            t1 = (hi - origins) * inv
        tmin = np.minimum(t0, t1)
        tmax = np.maximum(t0, t1)
        tmin = np.where(np.isnan(tmin), -np.inf, tmin)
        tmax = np.where(np.isnan(tmax), np.inf, tmax)
        enter = tmin.max(axis=1)
        leave = tmax.min(axis=1)
        hit = (enter <= leave) & (leave >= 0)
        t = np.where(hit, enter, np.inf)
        axis = tmin.argmax(axis=1)
        normals = np.zeros_like(origins)
        rows = np.nonzero(hit)[0]
        normals[rows, axis[rows]] = -np.sign(direction[axis[rows]])
        return t, normals


@dataclass(frozen=True)
class Torus:
    """Torus around the z axis through ``center``."""

    center: tuple[float, float, float] = (0.5, 0.5, 0.5)
    major: float = 0.3
    minor: float = 0.12
    segments: int = 48
    rings: int = 24

    def mesh(self) -> TriMesh:
        u = 2 * np.pi * np.arange(self.segments) / self.segments
        v = 2 * np.pi * np.arange(self.rings) / self.rings
        uu, vv = np.meshgrid(u, v, indexing="ij")
        x = (self.major + self.minor * np.cos(vv)) * np.cos(uu)
        y = (self.major + self.minor * np.cos(vv)) * np.sin(uu)
        z = self.minor * np.sin(vv)
        verts = np.stack([x, y, z], -1).reshape(-1, 3) + np.asarray(self.center)
        faces = []
        R = self.rings
        for i in range(self.segments):
            for j in range(R):
                a = i * R + j
                b = ((i + 1) % self.segments) * R + j
                c = i * R + (j + 1) % R
                d = ((i + 1) % self.segments) * R + (j + 1) % R
                faces += [(a, b, d), (a, d, c)]
        return TriMesh(verts, np.array(faces))

    def sdf(self, p: np.ndarray) -> np.ndarray:
        q = np.asarray(p) - np.asarray(self.center)
        ring = np.hypot(q[..., 0], q[..., 1]) - self.major
        return np.hypot(ring, q[..., 2]) - self.minor

    def contains(self, p: np.ndarray) -> np.ndarray:
        return self.sdf(p) < 0


@dataclass(frozen=True)
class Capsule:
    """Segment of half-length ``half_length`` along z, swept by ``radius``."""

    center: tuple[float, float, float] = (0.5, 0.5, 0.5)
    radius: float = 0.2
    half_length: float = 0.2
    segments: int = 32
    cap_rings: int = 8

    def mesh(self) -> TriMesh:
        c = np.asarray(self.center)
        theta = 2 * np.pi * np.arange(self.segments) / self.segments
        # polar angles for rings, excluding the poles; equator is duplicated at +-half_length
        top = np.linspace(0, np.pi / 2, self.cap_rings + 1)[1:]
        bottom = np.linspace(np.pi / 2, np.pi, self.cap_rings + 1)[:-1]
        rings = []
        for phi in top:
            rings.append((np.sin(phi), np.cos(phi) * self.radius + self.half_length))
        for phi in bottom:
            rings.append((np.sin(phi), np.cos(phi) * self.radius - self.half_length))
        verts = [c + [0, 0, self.radius + self.half_length]]
        for s, z in rings:
            for t in theta:
                verts.append(c + [self.radius * s * np.cos(t), self.radius * s * np.sin(t), z])
        verts.append(c + [0, 0, -self.radius - self.half_length])
        n = self.segments
        faces = [(0, 1 + j, 1 + (j + 1) % n) for j in range(n)]
        body = _grid_faces(len(rings), n)
        faces += [(a + 1, b + 1, cc + 1) for a, b, cc in body]
        last = len(verts) - 1
        base = 1 + (len(rings) - 1) * n
        faces += [(last, base + (j + 1) % n, base + j) for j in range(n)]
        return TriMesh(np.array(verts), np.array(faces))

    def sdf(self, p: np.ndarray) -> np.ndarray:
        q = np.asarray(p) - np.asarray(self.center)
        z = np.clip(q[..., 2], -self.half_length, self.half_length)
        d = q.copy()
        d[..., 2] = q[..., 2] - z
        return np.linalg.norm(d, axis=-1) - self.radius

    def contains(self, p: np.ndarray) -> np.ndarray:
        return self.sdf(p) < 0


SHAPE_KINDS = ("sphere", "box", "torus", "capsule")


def random_shape(kind: str, rng: np.random.Generator):
    """Primitive of ``kind`` with parameters drawn from fixed ranges."""
    if kind == "sphere":
        return Sphere(radius=float(rng.uniform(0.3, 0.45)))
    if kind == "box":
        half = rng.uniform(0.15, 0.4, size=3)
        return Box(tuple(0.5 - half), tuple(0.5 + half))
    if kind == "torus":
        major = float(rng.uniform(0.25, 0.32))
        return Torus(major=major, minor=float(rng.uniform(0.08, 0.12)))
    if kind == "capsule":
        return Capsule(radius=float(rng.uniform(0.12, 0.2)), half_length=float(rng.uniform(0.1, 0.22)))
    raise ValueError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
