"""Orthographic 2.5D rendering from icosahedron viewpoints, plus line-drawing proxies.

Camera frame: ``right``, ``up`` span the image plane and ``eye`` points from the
object center toward the camera. Depth is the distance *away* from the camera
along the view axis, measured from the center and divided by the half extent, so
the slab ``[center - extent, center + extent]`` maps to ``[-1, 1]`` with -1 nearest.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import TriMesh
from .shapes import ICOSAHEDRON_VERTICES

CENTER = np.array([0.5, 0.5, 0.5])
BACKGROUND_DEPTH = 1.0
SLANT_DIRECTION = np.array([0.0, -np.sin(np.pi / 6), np.cos(np.pi / 6)])
_POLAR_FALLBACK_UP = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class Viewpoint:
    eye: tuple[float, float, float]
    up: tuple[float, float, float]
    ortho_half_extent: float = 0.5
    image_size: int = 64

    @property
    def right(self) -> np.ndarray:
        return np.cross(np.asarray(self.up), np.asarray(self.eye))

    def frame(self) -> np.ndarray:
        """Rows ``right, up, eye``: world vectors to camera coordinates."""
        return np.stack([self.right, np.asarray(self.up), np.asarray(self.eye)])

    def with_image(self, image_size: int, ortho_half_extent: Optional[float] = None) -> "Viewpoint":
        h = self.ortho_half_extent if ortho_half_extent is None else ortho_half_extent
        return Viewpoint(self.eye, self.up, h, image_size)


def make_viewpoint(eye, image_size: int = 64, ortho_half_extent: float = 0.5) -> Viewpoint:
    """Camera looking at the center from ``eye``; up is world +z made orthogonal to the eye,
    or world +y when the eye is (anti)parallel to z."""
    e = np.asarray(eye, dtype=np.float64)
    e = e / np.linalg.norm(e)
    ref = np.array([0.0, 0.0, 1.0])
    if abs(e @ ref) > 1.0 - 1e-9:
        ref = _POLAR_FALLBACK_UP
    up = ref - (ref @ e) * e
    up = up / np.linalg.norm(up)
    return Viewpoint(tuple(e), tuple(up), ortho_half_extent, image_size)


def icosahedron_viewpoints(count_mode: str = "twelve", image_size: int = 64,
                           ortho_half_extent: float = 0.5) -> list[Viewpoint]:
    """The 12 icosahedron vertex directions, or those plus the +z and -z poles."""
    dirs = [v / np.linalg.norm(v) for v in ICOSAHEDRON_VERTICES]
    if count_mode == "fourteen":
        dirs += [np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])]
    elif count_mode != "twelve":
        raise ValueError(f"count_mode must be 'twelve' or 'fourteen', got {count_mode!r}")
    return [make_viewpoint(d, image_size, ortho_half_extent) for d in dirs]


def views_for_count(num_views: int, image_size: int, ortho_half_extent: float = 0.5) -> list[Viewpoint]:
    modes = {12: "twelve", 14: "fourteen"}
    if num_views not in modes:
        raise ValueError(f"num_views must be 12 or 14, got {num_views}")
    return icosahedron_viewpoints(modes[num_views], image_size, ortho_half_extent)


def slanted_front_index(viewpoints: list[Viewpoint]) -> int:
    """Index of the view closest to 30 degrees below the +z axis, toward -y."""
    return int(np.argmax([np.asarray(v.eye) @ SLANT_DIRECTION for v in viewpoints]))


@dataclass
class ViewMap25D:
    depth: np.ndarray                  # (S, S)
    normal: np.ndarray                 # (S, S, 3), camera frame
    mask: np.ndarray                   # (S, S)
    viewpoint: Optional[Viewpoint] = field(default=None, compare=False)

    @property
    def size(self) -> int:
        return self.depth.shape[0]

    def to_channels(self) -> np.ndarray:
        """Channel-first ``(5, S, S)``: depth, nx, ny, nz, mask."""
        return np.concatenate([self.depth[None], self.normal.transpose(2, 0, 1), self.mask[None]])

    @classmethod
    def from_channels(cls, arr: np.ndarray, viewpoint: Optional[Viewpoint] = None) -> "ViewMap25D":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr[0].copy(), arr[1:4].transpose(1, 2, 0).copy(), arr[4].copy(), viewpoint)

    def canonical(self) -> "ViewMap25D":
        """Binarize the mask at 0.5 and reset background pixels to depth +1, zero normal.

        Foreground normals are renormalized. Network predictions become valid maps this way.
        """
        fg = self.mask >= 0.5
        n = np.where(fg[..., None], self.normal, 0.0)
        norm = np.linalg.norm(n, axis=-1, keepdims=True)
        n = np.where(fg[..., None], n / np.where(norm > 0, norm, 1.0), 0.0)
        depth = np.where(fg, np.clip(self.depth, -1.0, 1.0), BACKGROUND_DEPTH)
        return ViewMap25D(depth, n, fg.astype(np.float64), self.viewpoint)

    def validate(self, tol: float = 1e-4) -> None:
        fg = self.mask >= 0.5
        if np.any(np.abs(self.depth) > 1.0 + 1e-12):
            raise ValueError("depth outside [-1, 1]")
        if np.any((self.mask < 0) | (self.mask > 1)):
            raise ValueError("mask outside [0, 1]")
        norms = np.linalg.norm(self.normal[fg], axis=-1)
        if norms.size and np.abs(norms - 1.0).max() > tol:
            raise ValueError("foreground normals are not unit length")
        bg = ~fg
        if np.any(self.depth[bg] != BACKGROUND_DEPTH) or np.any(self.normal[bg] != 0.0):
            raise ValueError("background pixels must have depth +1 and zero normal")


def pixel_coordinates(size: int, half_extent: float) -> tuple[np.ndarray, np.ndarray]:
    """Image-plane (x, y) of pixel centers; row 0 is the top of the image."""
    c = -half_extent + (np.arange(size) + 0.5) * (2.0 * half_extent / size)
    return np.meshgrid(c, c[::-1], indexing="xy")


def depth_to_distance(depth: np.ndarray, half_extent: float) -> np.ndarray:
    return np.asarray(depth) * half_extent


def distance_to_depth(dist: np.ndarray, half_extent: float) -> np.ndarray:
    return np.asarray(dist) / half_extent


def unproject(view: ViewMap25D, vp: Viewpoint) -> np.ndarray:
    """World positions ``(S, S, 3)`` of every pixel from its depth value."""
    px, py = pixel_coordinates(vp.image_size, vp.ortho_half_extent)
    back = depth_to_distance(view.depth, vp.ortho_half_extent)
    r, u, e = vp.frame()
    return CENTER + px[..., None] * r + py[..., None] * u - back[..., None] * e


def project(points: np.ndarray, vp: Viewpoint) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixel (row, col) as floats and depth for world points."""
    cam = (np.asarray(points) - CENTER) @ vp.frame().T
    s, h = vp.image_size, vp.ortho_half_extent
    col = (cam[..., 0] + h) * s / (2 * h) - 0.5
    row = (h - cam[..., 1]) * s / (2 * h) - 0.5
    return row, col, distance_to_depth(-cam[..., 2], h)


def _rasterize(mesh: TriMesh, vp: Viewpoint):
    s, h = vp.image_size, vp.ortho_half_extent
    frame = vp.frame()
    cam = (mesh.vertices - CENTER) @ frame.T
    fn = mesh.face_normals() @ frame.T
    px, py = pixel_coordinates(s, h)
    pitch = 2.0 * h / s
    zbuf = np.full((s, s), -np.inf)
    nbuf = np.zeros((s, s, 3))
    for f, normal in zip(mesh.faces, fn):
        a, b, c = cam[f]
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if area == 0.0:
            continue
        xs = np.array([a[0], b[0], c[0]])
        ys = np.array([a[1], b[1], c[1]])
        c0 = max(int(np.floor((xs.min() + h) / pitch - 0.5)), 0)
        c1 = min(int(np.ceil((xs.max() + h) / pitch - 0.5)), s - 1)
        r0 = max(int(np.floor((h - ys.max()) / pitch - 0.5)), 0)
        r1 = min(int(np.ceil((h - ys.min()) / pitch - 0.5)), s - 1)
        if c0 > c1 or r0 > r1:
            continue
        X = px[r0:r1 + 1, c0:c1 + 1]
        Y = py[r0:r1 + 1, c0:c1 + 1]
        w0 = ((b[0] - X) * (c[1] - Y) - (b[1] - Y) * (c[0] - X)) / area
        w1 = ((c[0] - X) * (a[1] - Y) - (c[1] - Y) * (a[0] - X)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        z = w0 * a[2] + w1 * b[2] + w2 * c[2]
        zb = zbuf[r0:r1 + 1, c0:c1 + 1]
        closer = inside & (z > zb)
        zb[closer] = z[closer]
        nbuf[r0:r1 + 1, c0:c1 + 1][closer] = normal
    return zbuf, nbuf


def _raycast(surface, vp: Viewpoint):
    s, h = vp.image_size, vp.ortho_half_extent
    frame = vp.frame()
    px, py = pixel_coordinates(s, h)
    r, u, e = frame
    far = 4.0
    origins = CENTER + px[..., None] * r + py[..., None] * u + far * e
    t, normals = surface.ray_intersect(origins.reshape(-1, 3), -e)
    t = t.reshape(s, s)
    z = far - t
    zbuf = np.where(np.isfinite(t), z, -np.inf)
    nbuf = (normals @ frame.T).reshape(s, s, 3)
    nbuf[~np.isfinite(t)] = 0.0
    return zbuf, nbuf


def render_view25d(surface, vp: Viewpoint) -> ViewMap25D:
    """Orthographic depth / normal / mask render of a mesh or an analytic surface.

    Meshes are rasterized with flat face normals. Objects exposing
    ``ray_intersect(origins, direction)`` are ray cast exactly. Depths beyond the
    slab are clipped to [-1, 1].
    """
    if isinstance(surface, TriMesh):
        zbuf, nbuf = _rasterize(surface, vp)
    else:
        zbuf, nbuf = _raycast(surface, vp)
    hit = np.isfinite(zbuf)
    depth = np.full(zbuf.shape, BACKGROUND_DEPTH)
    depth[hit] = np.clip(distance_to_depth(-zbuf[hit], vp.ortho_half_extent), -1.0, 1.0)
    normal = np.where(hit[..., None], nbuf, 0.0)
    return ViewMap25D(depth, normal, hit.astype(np.float64), vp)


@dataclass(frozen=True)
class SketchThresholds:
    depth: float = 0.05
    normal_degrees: float = 30.0


def render_sketch_proxy(view: ViewMap25D, thresholds: SketchThresholds = SketchThresholds()) -> np.ndarray:
    """Binary line image from silhouette, depth-jump and crease edges.

    Each differing 4-neighbour pair marks its pixel nearer the camera (for
    silhouettes, the foreground pixel).
    """
    fg = view.mask >= 0.5
    d = view.depth
    n = view.normal
    cos_t = np.cos(np.deg2rad(thresholds.normal_degrees))
    lines = np.zeros(fg.shape, dtype=bool)
    for axis in (0, 1):
        sl_a = [slice(None), slice(None)]
        sl_b = [slice(None), slice(None)]
        sl_a[axis] = slice(0, -1)
        sl_b[axis] = slice(1, None)
        A, B = tuple(sl_a), tuple(sl_b)
        fa, fb = fg[A], fg[B]
        sil = fa != fb
        both = fa & fb
        jump = both & (np.abs(d[A] - d[B]) > thresholds.depth)
        crease = both & ((n[A] * n[B]).sum(-1) < cos_t)
        edge = jump | crease
        a_first = d[A] <= d[B]
        lines[A] |= (sil & fa) | (edge & a_first)
        lines[B] |= (sil & fb) | (edge & ~a_first)
    return lines.astype(np.float64)


# ---------------------------------------------------------------- file formats

MAP_MAGIC = b"S2M25D1"
SKETCH_MAGIC = b"S2MSKT1"


def _write_image(path, magic: bytes, pixels: np.ndarray) -> None:
    """``pixels`` is (H, W, C); written row-major with channels interleaved."""
    h, w, c = pixels.shape
    with open(path, "wb") as f:
        f.write(magic + struct.pack("<IIB", w, h, c))
        f.write(np.ascontiguousarray(pixels, dtype="<f4").tobytes())


def _read_image(path, magic: bytes) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[: len(magic)] != magic:
        raise ValueError(f"{path}: expected magic {magic!r}")
    w, h, c = struct.unpack("<IIB", raw[len(magic): len(magic) + 9])
    data = np.frombuffer(raw[len(magic) + 9:], dtype="<f4", count=w * h * c)
    return data.astype(np.float64).reshape(h, w, c)


def save_view_map(view: ViewMap25D, path) -> None:
    pixels = np.concatenate([view.depth[..., None], view.normal, view.mask[..., None]], axis=-1)
    _write_image(path, MAP_MAGIC, pixels)


def load_view_map(path, viewpoint: Optional[Viewpoint] = None) -> ViewMap25D:
    px = _read_image(path, MAP_MAGIC)
    if px.shape[2] != 5:
        raise ValueError(f"{path}: expected 5 channels, found {px.shape[2]}")
    return ViewMap25D(px[..., 0].copy(), px[..., 1:4].copy(), px[..., 4].copy(), viewpoint)


def save_sketch(sketch: np.ndarray, path) -> None:
    _write_image(path, SKETCH_MAGIC, np.asarray(sketch)[..., None])


def load_sketch(path) -> np.ndarray:
    px = _read_image(path, SKETCH_MAGIC)
    if px.shape[2] != 1:
        raise ValueError(f"{path}: expected 1 channel, found {px.shape[2]}")
    return px[..., 0].copy()
