"""Landmark-based face morphing: mean shape, triangulation, warping, blending."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from msdmad.errors import (
    CardinalityMismatch,
    DegenerateInput,
    DegenerateTriangle,
    IndexOutOfRange,
    ParseError,
    ShapeMismatch,
)

logger = logging.getLogger(__name__)

AREA_EPS = 1e-9
DET_EPS = 1e-12
N_FACIAL_LANDMARKS = 68

Triangle = tuple[int, int, int]


@dataclass(frozen=True)
class MorphSpec:
    alpha: float = 0.5
    size: Optional[tuple[int, int]] = None  # (W, H); None -> size of parent A
    interpolation: str = "bilinear"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.interpolation != "bilinear":
            raise ValueError("only bilinear interpolation is supported")


def as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ShapeMismatch(f"landmarks must have shape (N, 2), got {pts.shape}")
    return pts


def read_landmarks(path: str | Path) -> np.ndarray:
    """Parse a landmark file: a count line followed by one ``x y`` pair per line."""
    try:
        lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    lines = [ln for ln in lines if ln]
    try:
        n = int(lines[0])
        pts = [tuple(float(v) for v in ln.split()) for ln in lines[1 : n + 1]]
    except (IndexError, ValueError) as exc:
        raise ParseError(f"{path}: malformed landmark file ({exc})") from exc
    if len(pts) != n or any(len(p) != 2 for p in pts):
        raise ParseError(f"{path}: expected {n} 'x y' lines")
    return np.array(pts, dtype=np.float64).reshape(n, 2)


def write_landmarks(points, path: str | Path) -> None:
    pts = as_points(points)
    body = "".join(f"{x!r} {y!r}\n" for x, y in pts.tolist())
    Path(path).write_text(f"{len(pts)}\n{body}", encoding="utf-8")


def augment_boundary(points, size: tuple[int, int]) -> np.ndarray:
    """Clamp landmarks into the frame and append 4 corners + 4 edge midpoints."""
    w, h = size
    pts = as_points(points).copy()
    pts[:, 0] = np.clip(pts[:, 0], 0.0, w - 1.0)
    pts[:, 1] = np.clip(pts[:, 1], 0.0, h - 1.0)
    xr, yb = w - 1.0, h - 1.0
    frame = np.array(
        [
            [0.0, 0.0],
            [xr, 0.0],
            [xr, yb],
            [0.0, yb],
            [xr / 2.0, 0.0],
            [xr, yb / 2.0],
            [xr / 2.0, yb],
            [0.0, yb / 2.0],
        ]
    )
    return np.vstack([pts, frame])


def average_landmarks(a, b, alpha: float) -> np.ndarray:
    pa, pb = as_points(a), as_points(b)
    if pa.shape != pb.shape:
        raise CardinalityMismatch(f"landmark counts differ: {len(pa)} vs {len(pb)}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return pa.copy()
    if alpha == 1.0:
        return pb.copy()
    return (1.0 - alpha) * pa + alpha * pb


def _signed_area(p: np.ndarray, tri) -> np.ndarray:
    a, b, c = p[tri[..., 0]], p[tri[..., 1]], p[tri[..., 2]]
    return 0.5 * (
        (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
        - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])
    )


def _overlaps(tri_pts: np.ndarray, others: np.ndarray, eps: float) -> np.ndarray:
    """Interior intersection test of one triangle against many (separating axes)."""
    if len(others) == 0:
        return np.zeros(0, dtype=bool)
    a = np.broadcast_to(tri_pts, others.shape)
    separated = np.zeros(len(others), dtype=bool)
    for shape in (a, others):
        for e in range(3):
            edge = shape[:, (e + 1) % 3] - shape[:, e]
            normal = np.stack([-edge[:, 1], edge[:, 0]], axis=1)
            normal /= np.linalg.norm(normal, axis=1, keepdims=True)
            pa = np.einsum("nkd,nd->nk", a, normal)
            pb = np.einsum("nkd,nd->nk", others, normal)
            gap = np.maximum(pb.min(1) - pa.max(1), pa.min(1) - pb.max(1))
            separated |= gap >= -eps
    return ~separated


def delaunay_triangulate(points) -> list[Triangle]:
    """Delaunay triangulation with deterministic tie-breaking.

    Every non-degenerate index triple whose circumcircle holds no other point
    strictly inside is a candidate. Candidates are visited in lexicographic
    order of their sorted index triple and kept unless they overlap a kept
    triangle, so cocircular configurations resolve to the lowest triples.
    Cost is cubic in the number of points, which suits landmark sets.
    """
    p = as_points(points)
    n = len(p)
    if n < 3:
        raise DegenerateInput(f"need at least 3 points, got {n}")
    centred = p - p.mean(axis=0)
    scale = float(np.abs(centred).max()) or 1.0
    sv = np.linalg.svd(centred / scale, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1.0):
        raise DegenerateInput("all points are collinear")

    triples = np.array(list(itertools.combinations(range(n), 3)), dtype=np.int64)
    area = _signed_area(p, triples)
    triples, area = triples[np.abs(area) > AREA_EPS], area[np.abs(area) > AREA_EPS]

    a, b, c = p[triples[:, 0]], p[triples[:, 1]], p[triples[:, 2]]
    d = 4.0 * area
    a2, b2, c2 = (a**2).sum(1), (b**2).sum(1), (c**2).sum(1)
    ux = (a2 * (b[:, 1] - c[:, 1]) + b2 * (c[:, 1] - a[:, 1]) + c2 * (a[:, 1] - b[:, 1])) / d
    uy = (a2 * (c[:, 0] - b[:, 0]) + b2 * (a[:, 0] - c[:, 0]) + c2 * (b[:, 0] - a[:, 0])) / d
    r2 = (a[:, 0] - ux) ** 2 + (a[:, 1] - uy) ** 2

    keep = np.ones(len(triples), dtype=bool)
    chunk = max(1, 2_000_000 // n)
    for start in range(0, len(triples), chunk):
        sl = slice(start, start + chunk)
        dist2 = (p[None, :, 0] - ux[sl, None]) ** 2 + (p[None, :, 1] - uy[sl, None]) ** 2
        inside = dist2 < (r2[sl, None] * (1.0 - 1e-9))
        rows = np.arange(len(triples[sl]))[:, None]
        inside[rows, triples[sl]] = False
        keep[sl] = ~inside.any(axis=1)
    candidates = triples[keep]

    chosen: list[Triangle] = []
    chosen_pts = np.zeros((0, 3, 2))
    eps = 1e-9 * scale
    for tri in candidates:
        tp = p[tri]
        if _overlaps(tp, chosen_pts, eps).any():
            continue
        chosen.append((int(tri[0]), int(tri[1]), int(tri[2])))
        chosen_pts = np.concatenate([chosen_pts, tp[None]], axis=0)
    return chosen


def affine_from_triangles(src, dst) -> np.ndarray:
    """2x3 matrix ``[[a, b, c], [d, e, f]]`` mapping each src vertex onto its dst vertex."""
    s, t = as_points(src), as_points(dst)
    if s.shape != (3, 2) or t.shape != (3, 2):
        raise ShapeMismatch("affine_from_triangles needs exactly 3 points on each side")
    if abs(_signed_area(s, np.array([0, 1, 2]))) <= AREA_EPS:
        raise DegenerateTriangle(f"source triangle {s.tolist()} has (near) zero area")
    # solve relative to the first vertex, then one step of residual refinement
    ds, dt = s[1:] - s[0], t[1:] - t[0]
    lin = np.linalg.solve(ds, dt).T
    lin = lin + np.linalg.solve(ds, dt - ds @ lin.T).T
    offset = t[0] - lin @ s[0]
    return np.hstack([lin, offset[:, None]])


def apply_affine(transform: np.ndarray, points) -> np.ndarray:
    pts = as_points(points)
    return pts @ transform[:, :2].T + transform[:, 2]


def _snap(v: np.ndarray) -> np.ndarray:
    r = np.round(v)
    return np.where(np.abs(v - r) < 1e-9, r, v)


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    x = np.clip(_snap(x), 0.0, w - 1.0)
    y = np.clip(_snap(y), 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    if img.ndim == 3:
        fx, fy = fx[:, None], fy[:, None]
    src = img.astype(np.float64, copy=False)
    top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
    bottom = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    # exact pass-through where the sample lands on a pixel centre
    exact = (fx == 0) & (fy == 0)
    return np.where(exact, src[y0, x0], out)


def warp_image(
    img: np.ndarray,
    triangles: Sequence[Triangle],
    src_shape,
    dst_shape,
    size: Optional[tuple[int, int]] = None,
) -> np.ndarray:
    """Piecewise-affine warp of ``img`` from ``src_shape`` onto ``dst_shape``.

    Each output pixel inside a destination triangle takes the bilinear sample
    of ``img`` at its preimage; pixels on shared edges belong to the first
    triangle listed. Uncovered pixels are 0. The result is float64 with
    ``size`` = (W, H), defaulting to the input size.
    """
    src_pts, dst_pts = as_points(src_shape), as_points(dst_shape)
    if len(src_pts) != len(dst_pts):
        raise CardinalityMismatch(f"shape sizes differ: {len(src_pts)} vs {len(dst_pts)}")
    img = np.asarray(img)
    if img.ndim not in (2, 3):
        raise ShapeMismatch(f"expected grayscale or RGB raster, got shape {img.shape}")
    tris = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if tris.size and (tris.min() < 0 or tris.max() >= len(dst_pts)):
        raise IndexOutOfRange(
            f"triangle index outside 0..{len(dst_pts) - 1}: {tris.min()}..{tris.max()}"
        )
    w, h = size if size is not None else (img.shape[1], img.shape[0])
    out = np.zeros((h, w) + img.shape[2:], dtype=np.float64)
    covered = np.zeros((h, w), dtype=bool)
    for tri in tris:
        dt, st = dst_pts[tri], src_pts[tri]
        if abs(_signed_area(dt, np.array([0, 1, 2]))) <= AREA_EPS:
            logger.warning("skipping degenerate destination triangle %s", tuple(tri))
            continue
        x_lo = max(int(np.floor(dt[:, 0].min())), 0)
        x_hi = min(int(np.ceil(dt[:, 0].max())), w - 1)
        y_lo = max(int(np.floor(dt[:, 1].min())), 0)
        y_hi = min(int(np.ceil(dt[:, 1].max())), h - 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        gy, gx = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
        gx, gy = gx.ravel().astype(np.float64), gy.ravel().astype(np.float64)
        # barycentric coordinates with respect to the destination triangle
        m = np.array([[dt[0, 0], dt[1, 0], dt[2, 0]], [dt[0, 1], dt[1, 1], dt[2, 1]], [1, 1, 1]])
        bary = np.linalg.solve(m, np.vstack([gx, gy, np.ones_like(gx)]))
        inside = (bary >= -1e-9).all(axis=0)
        ix, iy = gx[inside].astype(np.int64), gy[inside].astype(np.int64)
        fresh = ~covered[iy, ix]
        ix, iy = ix[fresh], iy[fresh]
        if ix.size == 0:
            continue
        inv = affine_from_triangles(dt, st)
        sx = inv[0, 0] * ix + inv[0, 1] * iy + inv[0, 2]
        sy = inv[1, 0] * ix + inv[1, 1] * iy + inv[1, 2]
        out[iy, ix] = _bilinear(img, sx, sy)
        covered[iy, ix] = True
    return out


def coverage_mask(triangles: Sequence[Triangle], shape, size: tuple[int, int]) -> np.ndarray:
    """Boolean (H, W) mask of pixels that lie inside at least one triangle."""
    probe = np.ones((size[1], size[0]), dtype=np.float64)
    return warp_image(probe, triangles, shape, shape, size) > 0


def _round_half_up(values: np.ndarray, dtype) -> np.ndarray:
    info = np.iinfo(dtype)
    return np.clip(np.floor(values + 0.5), info.min, info.max).astype(dtype)


def alpha_blend(a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    """``(1 - alpha) * a + alpha * b``; integer rasters are rounded half-up."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"raster shapes differ: {a.shape} vs {b.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return a.copy()
    if alpha == 1.0:
        return b.copy()
    mixed = (1.0 - alpha) * a.astype(np.float64) + alpha * b.astype(np.float64)
    if np.issubdtype(a.dtype, np.integer) and np.issubdtype(b.dtype, np.integer):
        return _round_half_up(mixed, a.dtype)
    return mixed


@dataclass(frozen=True)
class MorphGeometry:
    shape_a: np.ndarray
    shape_b: np.ndarray
    mean_shape: np.ndarray
    triangles: list[Triangle]

    def transforms_to_mean(self, parent: str) -> list[np.ndarray]:
        """Per-triangle affine maps from a parent's shape onto the mean shape."""
        shape = self.shape_a if parent == "a" else self.shape_b
        return [affine_from_triangles(shape[list(t)], self.mean_shape[list(t)]) for t in self.triangles]


def morph_geometry(landmarks_a, landmarks_b, size: tuple[int, int], alpha: float) -> MorphGeometry:
    la, lb = as_points(landmarks_a), as_points(landmarks_b)
    if la.shape != lb.shape:
        raise CardinalityMismatch(f"landmark counts differ: {len(la)} vs {len(lb)}")
    sa, sb = augment_boundary(la, size), augment_boundary(lb, size)
    mean = average_landmarks(sa, sb, alpha)
    return MorphGeometry(sa, sb, mean, delaunay_triangulate(mean))


def generate_morph(img_a, landmarks_a, img_b, landmarks_b, spec: MorphSpec = MorphSpec()) -> np.ndarray:
    """Warp both parents onto the alpha-weighted mean shape and blend them."""
    img_a, img_b = np.asarray(img_a), np.asarray(img_b)
    if img_a.shape != img_b.shape:
        raise ShapeMismatch(f"parent rasters differ: {img_a.shape} vs {img_b.shape}")
    size = spec.size or (img_a.shape[1], img_a.shape[0])
    if size != (img_a.shape[1], img_a.shape[0]):
        raise ShapeMismatch(f"output size {size} must match parent size {img_a.shape[1::-1]}")
    geo = morph_geometry(landmarks_a, landmarks_b, size, spec.alpha)
    warped_a = warp_image(img_a, geo.triangles, geo.shape_a, geo.mean_shape, size)
    warped_b = warp_image(img_b, geo.triangles, geo.shape_b, geo.mean_shape, size)
    blended = alpha_blend(warped_a, warped_b, spec.alpha)
    if np.issubdtype(img_a.dtype, np.integer):
        return _round_half_up(blended, img_a.dtype)
    return blended


def morph_filename(subject_a: str, subject_b: str, alpha: float) -> str:
    return f"morph_{subject_a}_{subject_b}_a{int(round(alpha * 100))}.png"


def read_image(path: str | Path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            return np.asarray(im, dtype=np.uint8).copy()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_image(img: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = _round_half_up(arr.astype(np.float64), np.uint8)
    Image.fromarray(arr).save(path, format="PNG")
