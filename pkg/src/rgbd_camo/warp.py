"""Four-point homography and bilinear quad extraction."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateQuadError


def _triangle_area(a, b, c) -> float:
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def check_quad(points: np.ndarray, min_area: float = 1e-9) -> None:
    p = np.asarray(points, float)
    if p.shape != (4, 2) or not np.all(np.isfinite(p)):
        raise DegenerateQuadError("quad needs four finite 2-D points")
    for i in range(4):
        tri = [p[j] for j in range(4) if j != i]
        if _triangle_area(*tri) < min_area:
            raise DegenerateQuadError("three of the four corners are collinear")


def homography_from_points(src, dst) -> np.ndarray:
    """3x3 H with H @ [src, 1] ~ [dst, 1], normalized so H[2, 2] = 1."""
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    check_quad(src)
    check_quad(dst)
    A = np.zeros((8, 8))
    rhs = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        A[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        A[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        rhs[2 * i] = u
        rhs[2 * i + 1] = v
    try:
        h = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateQuadError("corner correspondence is singular") from exc
    return np.append(h, 1.0).reshape(3, 3)


def apply_homography(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    p = np.asarray(pts, float)
    q = p @ H[:, :2].T + H[:, 2]
    return q[..., :2] / q[..., 2:3]


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample at sub-pixel (x, y); coordinates are clamped to the image."""
    img = np.asarray(image)
    h, w = img.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    f = img.astype(float)
    if f.ndim == 2:
        f = f[..., None]
    top = f[y0, x0] * (1 - fx) + f[y0, x1] * fx
    bot = f[y1, x0] * (1 - fx) + f[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    return out if img.ndim == 3 else out[..., 0]


def raster_corners(width: int, height: int) -> np.ndarray:
    """Raster corner pixel centers in TL, TR, BL, BR order."""
    return np.array([[0, 0], [width - 1, 0], [0, height - 1], [width - 1, height - 1]], float)


def extract_quad(image: np.ndarray, corner_pixels, width: int, height: int) -> np.ndarray:
    """Warp the quadrilateral with corners (TL, TR, BL, BR) in ``image`` onto a
    ``width`` x ``height`` raster whose corner pixels land exactly on those corners."""
    H = homography_from_points(raster_corners(width, height), corner_pixels)
    v, u = np.mgrid[0:height, 0:width]
    src = apply_homography(H, np.stack([u, v], axis=-1).astype(float))
    out = bilinear_sample(image, src[..., 0], src[..., 1])
    if np.asarray(image).dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(peak * peak / mse)
