"""Simulated back RGB-D sensor and point-cloud construction.

The cloud has one entry per depth pixel, defined or not. Within each row the
entries run right to left: cloud index ``r * W + k`` holds depth pixel column
``W - 1 - k`` of row ``r``. Points whose depth is invalid, or whose 3-D
position projects outside the color raster, are undefined and black.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from .errors import FormatError
from .geometry import (
    CameraModel,
    CornerFrame,
    SphericalAngles,
    cartesian_to_spherical_many,
    pixel_rays,
    project_points,
    rotation_y,
    to_corner_frame,
)
from .netpbm import read_netpbm, write_pgm16, write_ppm
from .scene import Scene, cast_rays, shade

DEPTH_FOV = (70.0, 60.0)
COLOR_FOV = (84.1, 53.8)
COLOR_BASELINE = 0.052


@dataclass(frozen=True, eq=False)
class SensorRig:
    back: CameraModel
    color: CameraModel
    front: CameraModel

    @property
    def baseline(self) -> np.ndarray:
        return self.color.position - self.back.position


def default_rig(depth_size=(512, 424), color_size=(1280, 720), baseline: float = COLOR_BASELINE,
                back_position=(0.0, 0.0, 0.02), front_position=(0.0, 0.16, 0.0)) -> SensorRig:
    """Back sensor just behind the display looking +z; front sensor on top looking -z."""
    back = CameraModel(depth_size[0], depth_size[1], *DEPTH_FOV, np.eye(3), back_position)
    color = CameraModel(color_size[0], color_size[1], *COLOR_FOV, np.eye(3),
                        np.asarray(back_position, float) + [baseline, 0.0, 0.0])
    front = CameraModel(depth_size[0], depth_size[1], *DEPTH_FOV, rotation_y(180.0), front_position)
    return SensorRig(back, color, front)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Camera-frame z depth in meters, NaN where no surface was hit."""

    values: np.ndarray

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    def to_millimeters(self) -> np.ndarray:
        mm = np.where(self.valid, np.rint(np.nan_to_num(self.values) * 1000.0), 0)
        return np.clip(mm, 0, 65535).astype(np.uint16)

    @classmethod
    def from_millimeters(cls, mm: np.ndarray) -> "DepthMap":
        mm = np.asarray(mm)
        return cls(np.where(mm > 0, mm / 1000.0, np.nan))


def _raster_rays(cam: CameraModel):
    v, u = np.mgrid[0 : cam.height, 0 : cam.width]
    return pixel_rays(cam, u.astype(float), v.astype(float)).reshape(-1, 3)


def _hits(cam: CameraModel, scene: Scene):
    d = _raster_rays(cam)
    t, idx = cast_rays(scene, cam.position[None, :], d)
    return d, t, idx


def render_depth(rig: SensorRig, scene: Scene) -> DepthMap:
    cam = rig.back
    d, t, _ = _hits(cam, scene)
    axis = cam.rotation[:, 2]
    z = np.where(np.isfinite(t), t * (d @ axis), np.nan)
    return DepthMap(z.reshape(cam.height, cam.width))


def render_color(rig: SensorRig, scene: Scene) -> np.ndarray:
    cam = rig.color
    d, t, idx = _hits(cam, scene)
    pts = cam.position + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    return shade(scene, pts, idx).reshape(cam.height, cam.width, 3)


class CloudPoint(NamedTuple):
    depth_pixel: tuple[int, int]
    color_pixel: tuple[float, float] | None
    position: np.ndarray
    color: tuple[int, int, int]
    defined: bool
    angles: dict[str, SphericalAngles]


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Struct-of-arrays cloud in buffer order (see module docstring).

    ``position`` is in world coordinates, NaN where depth was invalid.
    ``color_pixel`` is NaN for undefined points. ``angles`` maps a corner name
    to an (N, 3) array of theta, phi, r, NaN for undefined points.
    """

    width: int
    height: int
    depth_pixel: np.ndarray
    position: np.ndarray
    color_pixel: np.ndarray
    color: np.ndarray
    defined: np.ndarray
    angles: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.defined)

    @property
    def undefined_fraction(self) -> float:
        return float(1.0 - self.defined.mean())

    def point(self, i: int) -> CloudPoint:
        cp = tuple(map(float, self.color_pixel[i])) if self.defined[i] else None
        angles = {k: SphericalAngles(*map(float, a[i])) for k, a in self.angles.items()
                  if self.defined[i]}
        return CloudPoint(tuple(map(int, self.depth_pixel[i])), cp, self.position[i].copy(),
                          tuple(map(int, self.color[i])), bool(self.defined[i]), angles)

    def index_of(self, u: int, v: int) -> int:
        """Cloud index of depth pixel column ``u``, row ``v``."""
        return v * self.width + (self.width - 1 - u)


def buffer_order(width: int, height: int) -> np.ndarray:
    """Depth pixels (u, v) in cloud order: rows top-down, columns right to left."""
    v, k = np.divmod(np.arange(width * height), width)
    return np.stack([width - 1 - k, v], axis=1)


def register_and_build(depth: DepthMap, color: np.ndarray, rig: SensorRig) -> PointCloud:
    cam = rig.back
    if (depth.width, depth.height) != (cam.width, cam.height):
        raise ValueError("depth map does not match the back camera raster")
    col = np.asarray(color)
    if col.shape != (rig.color.height, rig.color.width, 3):
        raise ValueError("color image does not match the color camera raster")
    pix = buffer_order(cam.width, cam.height)
    u, v = pix[:, 0], pix[:, 1]
    z = depth.values[v, u]
    d = pixel_rays(cam, u.astype(float), v.astype(float))
    axis = cam.rotation[:, 2]
    valid = np.isfinite(z)
    scale = np.where(valid, z / (d @ axis), np.nan)
    pos = cam.position + scale[:, None] * d
    uv, _, in_view = project_points(rig.color, np.where(valid[:, None], pos, 0.0))
    defined = valid & in_view
    color_pixel = np.where(defined[:, None], uv, np.nan)
    rgb = np.zeros((len(z), 3), np.uint8)
    cu = np.rint(color_pixel[defined, 0]).astype(np.int64)
    cv = np.rint(color_pixel[defined, 1]).astype(np.int64)
    rgb[defined] = col[cv, cu]
    for a in (pix, pos, color_pixel, rgb, defined):
        a.setflags(write=False)
    return PointCloud(cam.width, cam.height, pix, pos, color_pixel, rgb, defined)


def annotate_corner_angles(cloud: PointCloud, frames: list[CornerFrame]) -> PointCloud:
    if not frames:
        raise ValueError("at least one corner frame is required")
    angles = dict(cloud.angles)
    for frame in frames:
        a = np.full((len(cloud), 3), np.nan)
        a[cloud.defined] = cartesian_to_spherical_many(
            to_corner_frame(frame, cloud.position[cloud.defined]))
        a.setflags(write=False)
        angles[frame.name] = a
    return replace(cloud, angles=angles)


# --- files -------------------------------------------------------------------

CLOUD_HEADER = ["depth_u", "depth_v", "defined", "x", "y", "z", "r", "g", "b", "color_u", "color_v"]


def save_cloud_csv(path: str | Path, cloud: PointCloud) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CLOUD_HEADER)
        for (du, dv), dfd, p, c, cp in zip(cloud.depth_pixel.tolist(), cloud.defined.tolist(),
                                           cloud.position.tolist(), cloud.color.tolist(),
                                           cloud.color_pixel.tolist()):
            w.writerow([du, dv, int(dfd), *(repr(x) for x in p), *c, *(repr(x) for x in cp)])


def load_cloud_csv(path: str | Path) -> PointCloud:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read cloud {path}: {exc}") from exc
    if not rows or rows[0] != CLOUD_HEADER:
        raise FormatError(f"{path}: missing cloud header")
    try:
        body = np.array(rows[1:], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if body.ndim != 2 or body.shape[1] != len(CLOUD_HEADER):
        raise FormatError(f"{path}: wrong column count")
    pix = body[:, 0:2].astype(np.int64)
    width = int(pix[:, 0].max()) + 1
    height = int(pix[:, 1].max()) + 1
    if len(body) != width * height or not np.array_equal(pix, buffer_order(width, height)):
        raise FormatError(f"{path}: points are not in cloud buffer order")
    return PointCloud(width, height, pix, body[:, 3:6], body[:, 9:11],
                      body[:, 6:9].astype(np.uint8), body[:, 2] != 0)


def save_images(directory: str | Path, depth: DepthMap, color: np.ndarray) -> None:
    d = Path(directory)
    write_pgm16(d / "depth.pgm", depth.to_millimeters())
    write_ppm(d / "color.ppm", color)


def load_images(directory: str | Path) -> tuple[DepthMap, np.ndarray]:
    d = Path(directory)
    depth = read_netpbm(d / "depth.pgm")
    color = read_netpbm(d / "color.ppm")
    if depth.ndim != 2 or color.ndim != 3:
        raise FormatError(f"{d}: expected a P5 depth map and a P6 color image")
    return DepthMap.from_millimeters(depth), color.astype(np.uint8)
