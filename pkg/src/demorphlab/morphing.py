"""Landmark-driven face morphing: Delaunay mesh, piecewise-affine warp, blend."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import CorrespondenceError, DimensionError, GeometryError
from .imaging import as_image

N_ANCHORS = 8


@dataclass(frozen=True)
class Landmarks:
    """Ordered (x, y) fiducials in pixel coordinates of an ``(H, W)`` frame.

    Pixel ``(row, col)`` sits at ``x = col, y = row``; valid points satisfy
    ``0 <= x <= W - 1`` and ``0 <= y <= H - 1``.
    """

    points: np.ndarray
    frame: tuple[int, int]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        h, w = (int(v) for v in self.frame)
        if not np.all(np.isfinite(pts)):
            raise GeometryError("landmarks must be finite")
        tol = 1e-9
        inside = (
            (pts[:, 0] >= -tol)
            & (pts[:, 0] <= w - 1 + tol)
            & (pts[:, 1] >= -tol)
            & (pts[:, 1] <= h - 1 + tol)
        )
        if not np.all(inside):
            bad = pts[~inside][0]
            raise GeometryError(f"landmark {tuple(bad)} outside frame {(h, w)}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "frame", (h, w))

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, Landmarks):
            return NotImplemented
        return self.frame == other.frame and np.array_equal(self.points, other.points)

    __hash__ = None

    def with_anchors(self) -> np.ndarray:
        """Points followed by the 4 frame corners and 4 edge midpoints."""
        return np.vstack([self.points, boundary_anchors(self.frame)])


def boundary_anchors(frame) -> np.ndarray:
    h, w = frame
    xm, ym = (w - 1) / 2.0, (h - 1) / 2.0
    xr, yb = w - 1.0, h - 1.0
    return np.array(
        [[0, 0], [xr, 0], [0, yb], [xr, yb], [xm, 0], [0, ym], [xr, ym], [xm, yb]],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def areas(self) -> np.ndarray:
        return np.abs(_signed_areas(self.vertices, self.triangles))


def _signed_areas(v, tri):
    a, b, c = v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))


def _as_points(points) -> np.ndarray:
    if isinstance(points, Landmarks):
        return points.points
    return np.asarray(points, dtype=np.float64).reshape(-1, 2)


def delaunay(points) -> TriangleMesh:
    """Delaunay triangulation of a point set (Qhull backend)."""
    pts = _as_points(points)
    if len(pts) < 3:
        raise GeometryError("delaunay needs at least 3 points")
    centred = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(centred, tol=1e-9 * max(1.0, np.abs(centred).max())) < 2:
        raise GeometryError("all points are collinear")
    try:
        tri = Delaunay(pts).simplices.astype(np.int64)
    except QhullError as exc:
        raise GeometryError(f"triangulation failed: {exc}") from exc
    areas = np.abs(_signed_areas(pts, tri))
    tri = tri[areas > 1e-12]
    return TriangleMesh(vertices=pts.copy(), triangles=tri)


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` at float coordinates with edge clamping; returns (N, C)."""
    h, w = img.shape[:2]
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[:, None]
    fy = (ys - y0)[:, None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def piecewise_warp(img, src, dst, mesh: TriangleMesh) -> np.ndarray:
    """Warp ``img`` so that ``src`` points land on ``dst`` points.

    Each destination triangle is filled by inverse-mapping its pixels into the
    corresponding source triangle and sampling bilinearly. Pixels not covered
    by any triangle keep their value from ``img``.
    """
    img = as_image(img)
    s = _as_points(src)
    d = _as_points(dst)
    if len(s) != len(d):
        raise CorrespondenceError(f"point count mismatch: {len(s)} vs {len(d)}")
    tri = np.asarray(mesh.triangles, dtype=np.int64)
    if tri.size and tri.max() >= len(d):
        raise CorrespondenceError("mesh indexes more points than supplied")
    if np.array_equal(s, d):
        return img.copy()

    h, w = img.shape[:2]
    out = img.copy()
    done = np.zeros((h, w), dtype=bool)
    for t in tri:
        dv = d[t]
        sv = s[t]
        # barycentric basis of the destination triangle
        m = np.vstack([dv.T, np.ones(3)])
        if abs(np.linalg.det(m)) < 1e-12:
            continue
        minv = np.linalg.inv(m)
        x_lo = max(int(np.floor(dv[:, 0].min())), 0)
        x_hi = min(int(np.ceil(dv[:, 0].max())), w - 1)
        y_lo = max(int(np.floor(dv[:, 1].min())), 0)
        y_hi = min(int(np.ceil(dv[:, 1].max())), h - 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        yy, xx = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
        xx = xx.ravel()
        yy = yy.ravel()
        bary = minv @ np.vstack([xx, yy, np.ones_like(xx)])
        inside = np.all(bary >= -1e-9, axis=0) & ~done[yy, xx]
        if not inside.any():
            continue
        b = bary[:, inside]
        sx = sv[:, 0] @ b
        sy = sv[:, 1] @ b
        px, py = xx[inside], yy[inside]
        out[py, px] = bilinear_sample(img, sx, sy)
        done[py, px] = True
    return np.clip(out, 0.0, 1.0)


def morph(i1, lm1: Landmarks, i2, lm2: Landmarks, alpha: float = 0.5):
    """Landmark morph of two faces; returns ``(image, target_landmarks)``.

    Both faces are warped onto the interpolated geometry
    ``(1 - alpha) * lm1 + alpha * lm2`` and cross-dissolved with the same
    weight.
    """
    i1 = as_image(i1)
    i2 = as_image(i2)
    if i1.shape != i2.shape:
        raise CorrespondenceError(f"image shapes differ: {i1.shape} vs {i2.shape}")
    if len(lm1) != len(lm2):
        raise CorrespondenceError(f"landmark counts differ: {len(lm1)} vs {len(lm2)}")
    if lm1.frame != i1.shape[:2] or lm2.frame != i2.shape[:2]:
        raise CorrespondenceError("landmark frame does not match image shape")
    if not 0.0 <= alpha <= 1.0:
        raise DimensionError(f"alpha must be in [0, 1], got {alpha}")

    target = Landmarks((1.0 - alpha) * lm1.points + alpha * lm2.points, lm1.frame)
    dst = target.with_anchors()
    mesh = delaunay(dst)
    w1 = piecewise_warp(i1, lm1.with_anchors(), dst, mesh)
    w2 = piecewise_warp(i2, lm2.with_anchors(), dst, mesh)
    out = (1.0 - alpha) * w1 + alpha * w2
    return np.clip(out, 0.0, 1.0), target


def write_landmark_file(path, records) -> Path:
    """Write ``{image_path: Landmarks | (N, 2) array}`` as one line per image."""
    path = Path(path)
    lines = []
    for img_path, lm in records.items():
        img_path = str(img_path)
        if any(ch.isspace() for ch in img_path):
            raise CorrespondenceError(f"whitespace in image path {img_path!r}")
        pts = _as_points(lm)
        coords = " ".join(f"{float(v)!r}" for v in pts.reshape(-1))
        lines.append(f"{img_path} {len(pts)} {coords}".rstrip())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


def read_landmark_file(path) -> dict[str, np.ndarray]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        try:
            n = int(fields[1])
            vals = np.array([float(v) for v in fields[2:]], dtype=np.float64)
        except (IndexError, ValueError) as exc:
            raise CorrespondenceError(f"{path}:{lineno}: malformed landmark record") from exc
        if vals.size != 2 * n:
            raise CorrespondenceError(f"{path}:{lineno}: expected {n} points, got {vals.size / 2:g}")
        out[fields[0]] = vals.reshape(n, 2)
    return out
