"""Coordinate conventions shared by the whole pipeline.

Units are meters and degrees. Camera frames use +x right, +y up, +z forward.
Angles are per-axis (yaw/pitch style) rather than textbook spherical:

    theta = atan2(x, z)   azimuth, rotation about the y-axis (xz plane)
    phi   = atan2(y, z)   polar,   rotation about the x-axis (yz plane)

so both angles are bounded by the field-of-view half angles of a sensor that
looks along +z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    BehindCameraError,
    DegeneratePointError,
    GeometryError,
    OutOfRangeError,
    OutOfViewError,
)

ORTHONORMAL_TOL = 1e-9


class SphericalAngles(NamedTuple):
    theta: float
    phi: float
    r: float


def as_point(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"non-finite point {arr!r}")
    return arr


def cartesian_to_spherical(p) -> SphericalAngles:
    x, y, z = as_point(p)
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0.0:
        raise DegeneratePointError("cannot take angles of the origin")
    return SphericalAngles(
        math.degrees(math.atan2(x, z)), math.degrees(math.atan2(y, z)), r
    )


def cartesian_to_spherical_many(points: np.ndarray) -> np.ndarray:
    """Vectorised form of :func:`cartesian_to_spherical`; returns (N, 3) theta, phi, r."""
    p = np.asarray(points, dtype=float)
    out = np.empty(p.shape[:-1] + (3,))
    out[..., 0] = np.degrees(np.arctan2(p[..., 0], p[..., 2]))
    out[..., 1] = np.degrees(np.arctan2(p[..., 1], p[..., 2]))
    out[..., 2] = np.linalg.norm(p, axis=-1)
    return out


def spherical_to_cartesian(s) -> np.ndarray:
    theta, phi, r = (float(v) for v in s)
    if not (abs(theta) < 90.0 and abs(phi) < 90.0):
        raise OutOfRangeError(f"angles ({theta}, {phi}) outside the z > 0 branch")
    if not r > 0.0:
        raise OutOfRangeError(f"radius must be positive, got {r}")
    tx = math.tan(math.radians(theta))
    ty = math.tan(math.radians(phi))
    z = r / math.sqrt(1.0 + tx * tx + ty * ty)
    return np.array([tx * z, ty * z, z])


def _check_orthonormal(m: np.ndarray, proper: bool) -> None:
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise GeometryError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(m.T @ m - np.eye(3))) > ORTHONORMAL_TOL:
        raise GeometryError("matrix is not orthonormal")
    if proper and abs(np.linalg.det(m) - 1.0) > ORTHONORMAL_TOL:
        raise GeometryError("rotation must have determinant +1")


def rotation_y(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera. ``rotation`` maps camera axes to world, ``position`` is the
    optical center in world coordinates."""

    width: int
    height: int
    fov_h: float
    fov_v: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise GeometryError("camera raster must be at least 1x1")
        if not (0.0 < self.fov_h < 180.0 and 0.0 < self.fov_v < 180.0):
            raise GeometryError("field of view must lie in (0, 180) degrees")
        rot = np.array(self.rotation, dtype=float)
        pos = as_point(self.position)
        _check_orthonormal(rot, proper=True)
        rot.setflags(write=False)
        pos.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "position", pos)

    @property
    def cx(self) -> float:
        return (self.width - 1) / 2.0

    @property
    def cy(self) -> float:
        return (self.height - 1) / 2.0

    @property
    def fx(self) -> float:
        # a 1-pixel-wide raster has no extent; any focal length keeps the single pixel on-axis
        return max(self.cx, 0.5) / math.tan(math.radians(self.fov_h) / 2.0)

    @property
    def fy(self) -> float:
        return max(self.cy, 0.5) / math.tan(math.radians(self.fov_v) / 2.0)

    def moved(self, offset) -> "CameraModel":
        return CameraModel(
            self.width, self.height, self.fov_h, self.fov_v,
            self.rotation, self.position + as_point(offset),
        )

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (..., 3) into this camera's frame."""
        return (np.asarray(points, dtype=float) - self.position) @ self.rotation

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.position


def pixel_to_ray(cam: CameraModel, u: float, v: float) -> np.ndarray:
    """Unit world-frame direction through pixel (u, v)."""
    if not (0.0 <= u < cam.width and 0.0 <= v < cam.height):
        raise OutOfViewError(f"pixel ({u}, {v}) outside {cam.width}x{cam.height}")
    return pixel_rays(cam, np.array([u], float), np.array([v], float))[0]


def pixel_rays(cam: CameraModel, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Unit world directions for arrays of pixel coordinates (no bounds check)."""
    d = np.empty(np.shape(u) + (3,))
    d[..., 0] = (np.asarray(u, float) - cam.cx) / cam.fx
    d[..., 1] = (cam.cy - np.asarray(v, float)) / cam.fy
    d[..., 2] = 1.0
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d @ cam.rotation.T


def _in_view(cam: CameraModel, u, v):
    return (u >= -0.5) & (u < cam.width - 0.5) & (v >= -0.5) & (v < cam.height - 0.5)


def project_points(cam: CameraModel, points: np.ndarray):
    """Project world points (N, 3) to sub-pixel coordinates.

    Returns ``(uv, in_front, in_view)``; ``uv`` is NaN where the point is not
    in front of the camera. A point is in view when it rounds to a raster pixel.
    """
    pc = cam.to_camera(points)
    z = pc[..., 2]
    in_front = z > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(in_front, cam.cx + cam.fx * pc[..., 0] / z, np.nan)
        v = np.where(in_front, cam.cy - cam.fy * pc[..., 1] / z, np.nan)
    uv = np.stack([u, v], axis=-1)
    finite = np.isfinite(u) & np.isfinite(v)
    in_view = in_front & finite & _in_view(cam, np.nan_to_num(u), np.nan_to_num(v))
    return uv, in_front, in_view


def point_to_pixel(cam: CameraModel, p) -> tuple[float, float]:
    uv, in_front, in_view = project_points(cam, as_point(p)[None, :])
    if not in_front[0]:
        raise BehindCameraError(f"point {p} is behind the camera")
    if not in_view[0]:
        raise OutOfViewError(f"point {p} projects outside the raster at {tuple(uv[0])}")
    return float(uv[0, 0]), float(uv[0, 1])


@dataclass(frozen=True, eq=False)
class CornerFrame:
    """Frame with its origin at a display corner.

    ``orientation`` has the frame axes as columns (frame -> world). The back
    frame shares the back sensor's optical axis; :meth:`facing_front` gives the
    mirror frame in which observer angles are measured.
    """

    name: str
    origin: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        origin = as_point(self.origin)
        rot = np.array(self.orientation, dtype=float)
        _check_orthonormal(rot, proper=False)
        origin.setflags(write=False)
        rot.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "orientation", rot)

    def facing_front(self) -> "CornerFrame":
        """Same origin and x/y axes, z reversed to point at the observer side.

        Measured in this frame an observation point has z > 0, and its angles are
        exactly the negated angles of its straight-through shadow in the back frame.
        """
        return CornerFrame(self.name, self.origin, self.orientation * np.array([1.0, 1.0, -1.0]))


def to_corner_frame(frame: CornerFrame, p) -> np.ndarray:
    return (np.asarray(p, dtype=float) - frame.origin) @ frame.orientation


def corner_angles(frame: CornerFrame, p) -> SphericalAngles:
    return cartesian_to_spherical(to_corner_frame(frame, as_point(p)))


def observer_angles(frame: CornerFrame, op) -> SphericalAngles:
    """Angles of an observation point as seen from the corner, looking out at the observer."""
    return corner_angles(frame.facing_front(), op)
