"""Parametric synthetic scenes and the ray-cast oracle.

Scene file grammar, one item per line, ``#`` starts a comment::

    plane      px py pz  nx ny nz  w h  <albedo>
    background px py pz  nx ny nz  w h  <albedo>
    box        x0 y0 z0  x1 y1 z1       <albedo>
    sphere     cx cy cz  r              <albedo>
    display    TLx TLy TLz TRx TRy TRz BLx BLy BLz BRx BRy BRz

    <albedo> := solid R G B
              | checker PERIOD R G B R G B
              | gradient AXIS LO HI R G B R G B      (AXIS in x, y, z)

Exactly one ``background`` line is required; it is always cast last.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from .errors import FormatError, GeometryError, RayMissError, SceneError
from .geometry import as_point

EPS = 1e-9
Color = tuple[int, int, int]


def _fmt(x: float) -> str:
    return repr(float(x))


def _color(c) -> Color:
    c = tuple(int(v) for v in c)
    if len(c) != 3 or any(v < 0 or v > 255 for v in c):
        raise SceneError(f"bad 8-bit color {c}")
    return c


# --- textures --------------------------------------------------------------


@dataclass(frozen=True)
class Solid:
    color: Color

    def __post_init__(self):
        object.__setattr__(self, "color", _color(self.color))

    def sample(self, uv: np.ndarray, world: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.array(self.color, np.uint8), (len(world), 3)).copy()

    def tokens(self) -> list[str]:
        return ["solid", *map(str, self.color)]


@dataclass(frozen=True)
class Checker:
    period: float
    color_a: Color
    color_b: Color

    def __post_init__(self):
        if not self.period > 0:
            raise SceneError("checker period must be positive")
        object.__setattr__(self, "period", float(self.period))
        object.__setattr__(self, "color_a", _color(self.color_a))
        object.__setattr__(self, "color_b", _color(self.color_b))

    def sample(self, uv: np.ndarray, world: np.ndarray) -> np.ndarray:
        cells = np.floor(uv / self.period).astype(np.int64)
        odd = (cells.sum(axis=1) & 1).astype(bool)
        out = np.empty((len(uv), 3), np.uint8)
        out[~odd] = self.color_a
        out[odd] = self.color_b
        return out

    def tokens(self) -> list[str]:
        return ["checker", _fmt(self.period), *map(str, self.color_a), *map(str, self.color_b)]


@dataclass(frozen=True)
class Gradient:
    axis: str
    lo: float
    hi: float
    color_lo: Color
    color_hi: Color

    def __post_init__(self):
        if self.axis not in ("x", "y", "z"):
            raise SceneError(f"gradient axis must be x, y or z, got {self.axis!r}")
        if not self.hi > self.lo:
            raise SceneError("gradient needs hi > lo")
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        object.__setattr__(self, "color_lo", _color(self.color_lo))
        object.__setattr__(self, "color_hi", _color(self.color_hi))

    def sample(self, uv: np.ndarray, world: np.ndarray) -> np.ndarray:
        k = "xyz".index(self.axis)
        f = np.clip((world[:, k] - self.lo) / (self.hi - self.lo), 0.0, 1.0)[:, None]
        c = (1.0 - f) * np.array(self.color_lo, float) + f * np.array(self.color_hi, float)
        return np.rint(c).astype(np.uint8)

    def tokens(self) -> list[str]:
        return ["gradient", self.axis, _fmt(self.lo), _fmt(self.hi),
                *map(str, self.color_lo), *map(str, self.color_hi)]


Texture = Union[Solid, Checker, Gradient]


# --- surfaces ----------------------------------------------------------------


def plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """In-plane (u, v) axes; for a normal along +z these are world +x and +y."""
    ref = np.array([0.0, 1.0, 0.0]) if abs(normal[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(ref, normal)
    u /= np.linalg.norm(u)
    return u, np.cross(normal, u)


@dataclass(frozen=True)
class Plane:
    point: tuple[float, float, float]
    normal: tuple[float, float, float]
    width: float
    height: float
    texture: Texture

    def __post_init__(self):
        n = as_point(self.normal)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise SceneError("plane normal must be unit length")
        if not (self.width > 0 and self.height > 0):
            raise SceneError("plane bounds must be positive")
        object.__setattr__(self, "point", tuple(map(float, self.point)))
        object.__setattr__(self, "normal", tuple(map(float, self.normal)))
        object.__setattr__(self, "width", float(self.width))
        object.__setattr__(self, "height", float(self.height))

    def _local(self, pts: np.ndarray) -> np.ndarray:
        bu, bv = plane_basis(np.array(self.normal))
        rel = pts - np.array(self.point)
        return np.stack([rel @ bu, rel @ bv], axis=1)

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        n = np.array(self.normal)
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((np.array(self.point) - o) @ n) / denom
        t = np.where(np.abs(denom) > 1e-15, t, np.inf)
        t = np.where(t > EPS, t, np.inf)
        hit = np.isfinite(t)
        if np.any(hit):
            uv = self._local(o[hit] + t[hit, None] * d[hit])
            inside = (np.abs(uv[:, 0]) <= self.width / 2) & (np.abs(uv[:, 1]) <= self.height / 2)
            th = t[hit]
            th[~inside] = np.inf
            t[hit] = th
        return t

    def albedo(self, pts: np.ndarray) -> np.ndarray:
        return self.texture.sample(self._local(pts), pts)

    def tokens(self, kind: str = "plane") -> list[str]:
        return [kind, *map(_fmt, self.point), *map(_fmt, self.normal),
                _fmt(self.width), _fmt(self.height), *self.texture.tokens()]


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    texture: Texture

    def __post_init__(self):
        lo, hi = as_point(self.lo), as_point(self.hi)
        if not np.all(lo < hi):
            raise SceneError("box needs min < max componentwise")
        object.__setattr__(self, "lo", tuple(map(float, lo)))
        object.__setattr__(self, "hi", tuple(map(float, hi)))

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        lo, hi = np.array(self.lo), np.array(self.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (lo - o) * inv
            t2 = (hi - o) * inv
        # a zero direction component gives +-inf (or nan when o sits on the slab face)
        t1 = np.where(np.isnan(t1), -np.inf, t1)
        t2 = np.where(np.isnan(t2), np.inf, t2)
        tnear = np.max(np.minimum(t1, t2), axis=1)
        tfar = np.min(np.maximum(t1, t2), axis=1)
        valid = tnear <= tfar
        t = np.where(valid & (tnear > EPS), tnear, np.where(valid & (tfar > EPS), tfar, np.inf))
        return t

    def albedo(self, pts: np.ndarray) -> np.ndarray:
        lo, hi = np.array(self.lo), np.array(self.hi)
        # face axis is the coordinate lying closest to a slab plane
        gap = np.minimum(np.abs(pts - lo), np.abs(pts - hi))
        face = np.argmin(gap, axis=1)
        keep = np.array([[1, 2], [0, 2], [0, 1]])[face]
        uv = np.take_along_axis(pts - lo, keep, axis=1)
        return self.texture.sample(uv, pts)

    def tokens(self) -> list[str]:
        return ["box", *map(_fmt, self.lo), *map(_fmt, self.hi), *self.texture.tokens()]


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    texture: Texture

    def __post_init__(self):
        if not self.radius > 0:
            raise SceneError("sphere radius must be positive")
        object.__setattr__(self, "center", tuple(map(float, as_point(self.center))))
        object.__setattr__(self, "radius", float(self.radius))

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        oc = o - np.array(self.center)
        b = np.einsum("ij,ij->i", oc, d)
        c = np.einsum("ij,ij->i", oc, oc) - self.radius**2
        disc = b * b - c
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        t0, t1 = -b - sq, -b + sq
        t = np.where(t0 > EPS, t0, np.where(t1 > EPS, t1, np.inf))
        return np.where(np.isnan(t), np.inf, t)

    def albedo(self, pts: np.ndarray) -> np.ndarray:
        # solid 3-D checker in world coordinates
        return self.texture.sample(pts, pts)

    def tokens(self) -> list[str]:
        return ["sphere", *map(_fmt, self.center), _fmt(self.radius), *self.texture.tokens()]


Surface = Union[Plane, Box, Sphere]


@dataclass(frozen=True)
class DisplayQuad:
    tl: tuple[float, float, float]
    tr: tuple[float, float, float]
    bl: tuple[float, float, float]
    br: tuple[float, float, float]

    def __post_init__(self):
        pts = [tuple(map(float, as_point(c))) for c in (self.tl, self.tr, self.bl, self.br)]
        for name, p in zip(("tl", "tr", "bl", "br"), pts):
            object.__setattr__(self, name, p)
        tl, tr, bl, br = (np.array(p) for p in pts)
        n = np.cross(tr - tl, bl - tl)
        if np.linalg.norm(n) < 1e-12:
            raise GeometryError("display quad is degenerate")
        n /= np.linalg.norm(n)
        if abs((br - tl) @ n) > 1e-6:
            raise GeometryError("display corners are not coplanar")

    @property
    def corners(self) -> dict[str, np.ndarray]:
        return {"TL": np.array(self.tl), "TR": np.array(self.tr),
                "BL": np.array(self.bl), "BR": np.array(self.br)}

    @property
    def front_normal(self) -> np.ndarray:
        """Unit normal pointing toward the observer side."""
        tl, tr, bl = np.array(self.tl), np.array(self.tr), np.array(self.bl)
        n = np.cross(tr - tl, bl - tl)
        return n / np.linalg.norm(n)

    @property
    def center(self) -> np.ndarray:
        return np.mean([self.tl, self.tr, self.bl, self.br], axis=0)

    def is_front(self, op) -> bool:
        return float((as_point(op) - np.array(self.tl)) @ self.front_normal) > EPS

    def points(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Bilinear surface points; s runs TL->TR, t runs TL->BL, both in [0, 1]."""
        tl, tr, bl, br = (np.array(p) for p in (self.tl, self.tr, self.bl, self.br))
        s = np.asarray(s, float)[..., None]
        t = np.asarray(t, float)[..., None]
        return (1 - s) * (1 - t) * tl + s * (1 - t) * tr + (1 - s) * t * bl + s * t * br

    def tokens(self) -> list[str]:
        return ["display", *(_fmt(v) for c in (self.tl, self.tr, self.bl, self.br) for v in c)]


@dataclass(frozen=True)
class Scene:
    surfaces: tuple[Surface, ...]
    background: Plane

    def __post_init__(self):
        if not isinstance(self.background, Plane):
            raise SceneError("a background plane is required")
        object.__setattr__(self, "surfaces", tuple(self.surfaces))

    @property
    def all_surfaces(self) -> tuple[Surface, ...]:
        return self.surfaces + (self.background,)

    def fingerprint(self) -> str:
        return hashlib.sha256(format_scene(self).encode()).hexdigest()[:16]


class Hit(NamedTuple):
    point: np.ndarray
    surface: int
    t: float


def cast_rays(scene: Scene, origins: np.ndarray, dirs: np.ndarray):
    """Nearest hits for many rays. Returns ``(t, surface_index)``; misses are (inf, -1).

    Ties in t go to the lowest surface index.
    """
    o = np.atleast_2d(np.asarray(origins, float))
    d = np.atleast_2d(np.asarray(dirs, float))
    o = np.broadcast_to(o, d.shape)
    best_t = np.full(len(d), np.inf)
    best_i = np.full(len(d), -1, dtype=np.int64)
    for idx, surf in enumerate(scene.all_surfaces):
        t = surf.intersect(o, d)
        closer = t < best_t
        best_t[closer] = t[closer]
        best_i[closer] = idx
    return best_t, best_i


def shade(scene: Scene, points: np.ndarray, surface_idx: np.ndarray,
          miss_color: Color = (0, 0, 0)) -> np.ndarray:
    out = np.empty((len(points), 3), np.uint8)
    out[:] = miss_color
    for idx, surf in enumerate(scene.all_surfaces):
        sel = surface_idx == idx
        if np.any(sel):
            out[sel] = surf.albedo(points[sel])
    return out


def ray_cast(origin, direction, scene: Scene) -> Hit | None:
    d = as_point(direction)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise GeometryError("ray direction must be unit length")
    o = as_point(origin)
    t, idx = cast_rays(scene, o[None, :], d[None, :])
    if idx[0] < 0:
        return None
    return Hit(o + t[0] * d, int(idx[0]), float(t[0]))


def shadow_rays(ops: np.ndarray, corner) -> tuple[np.ndarray, np.ndarray]:
    c = as_point(corner)
    d = c - np.atleast_2d(ops)
    n = np.linalg.norm(d, axis=1, keepdims=True)
    if np.any(n == 0):
        raise GeometryError("observation point coincides with the corner")
    return np.broadcast_to(c, d.shape), d / n


def shadow_of_corner(op, corner, scene: Scene) -> np.ndarray:
    """First scene point on the ray from ``op`` through ``corner`` lying beyond the corner."""
    o, d = shadow_rays(as_point(op)[None, :], corner)
    t, idx = cast_rays(scene, o, d)
    if idx[0] < 0:
        raise RayMissError(f"shadow of corner {tuple(map(float, corner))} leaves the scene")
    return o[0] + t[0] * d[0]


def occluded_region_render(op, display: DisplayQuad, scene: Scene, width: int, height: int,
                           miss_color: Color = (255, 0, 255)):
    """What the observer at ``op`` would see through the display area were it absent.

    Raster pixel (c, r) samples display point at s = c/(W-1), t = r/(H-1).
    Returns ``(image uint8 (H, W, 3), miss mask (H, W))``.
    """
    op = as_point(op)
    if not display.is_front(op):
        raise GeometryError("observation point is not in front of the display")
    s = np.linspace(0.0, 1.0, width) if width > 1 else np.zeros(1)
    t = np.linspace(0.0, 1.0, height) if height > 1 else np.zeros(1)
    ss, tt = np.meshgrid(s, t)
    targets = display.points(ss, tt).reshape(-1, 3)
    d = targets - op
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    # start at the display plane so nothing between observer and display is seen
    tt_hit, idx = cast_rays(scene, targets, d)
    pts = targets + np.where(np.isfinite(tt_hit), tt_hit, 0.0)[:, None] * d
    img = shade(scene, pts, idx, miss_color)
    return img.reshape(height, width, 3), (idx < 0).reshape(height, width)


# --- text format -------------------------------------------------------------


def _parse_texture(tok: list[str]) -> Texture:
    kind, args = tok[0], tok[1:]
    try:
        if kind == "solid" and len(args) == 3:
            return Solid(tuple(int(a) for a in args))
        if kind == "checker" and len(args) == 7:
            return Checker(float(args[0]), tuple(map(int, args[1:4])), tuple(map(int, args[4:7])))
        if kind == "gradient" and len(args) == 9:
            return Gradient(args[0], float(args[1]), float(args[2]),
                            tuple(map(int, args[3:6])), tuple(map(int, args[6:9])))
    except ValueError as exc:
        raise FormatError(f"bad albedo {' '.join(tok)!r}: {exc}") from exc
    raise FormatError(f"bad albedo {' '.join(tok)!r}")


def _floats(tok: list[str], n: int, what: str) -> list[float]:
    if len(tok) < n:
        raise FormatError(f"{what}: expected {n} numbers")
    try:
        return [float(x) for x in tok[:n]]
    except ValueError as exc:
        raise FormatError(f"{what}: {exc}") from exc


def parse_scene(text: str) -> tuple[Scene, DisplayQuad | None]:
    surfaces: list[Surface] = []
    background = None
    display = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *tok = line.split()
        where = f"line {lineno}"
        try:
            if kind in ("plane", "background"):
                v = _floats(tok, 8, where)
                surf = Plane(tuple(v[0:3]), tuple(v[3:6]), v[6], v[7], _parse_texture(tok[8:]))
                if kind == "background":
                    if background is not None:
                        raise FormatError(f"{where}: second background plane")
                    background = surf
                else:
                    surfaces.append(surf)
            elif kind == "box":
                v = _floats(tok, 6, where)
                surfaces.append(Box(tuple(v[0:3]), tuple(v[3:6]), _parse_texture(tok[6:])))
            elif kind == "sphere":
                v = _floats(tok, 4, where)
                surfaces.append(Sphere(tuple(v[0:3]), v[3], _parse_texture(tok[4:])))
            elif kind == "display":
                if len(tok) != 12:
                    raise FormatError(f"{where}: display needs 12 numbers")
                v = _floats(tok, 12, where)
                display = DisplayQuad(tuple(v[0:3]), tuple(v[3:6]), tuple(v[6:9]), tuple(v[9:12]))
            else:
                raise FormatError(f"{where}: unknown item {kind!r}")
        except FormatError:
            raise
        except (SceneError, GeometryError, IndexError) as exc:
            raise FormatError(f"{where}: {exc}") from exc
    if background is None:
        raise FormatError("scene has no background plane")
    return Scene(tuple(surfaces), background), display


def format_scene(scene: Scene, display: DisplayQuad | None = None) -> str:
    lines = [" ".join(s.tokens()) for s in scene.surfaces]
    lines.append(" ".join(scene.background.tokens("background")))
    if display is not None:
        lines.append(" ".join(display.tokens()))
    return "\n".join(lines) + "\n"


def load_scene(path: str | Path) -> tuple[Scene, DisplayQuad | None]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read scene {path}: {exc}") from exc
    return parse_scene(text)


def save_scene(path: str | Path, scene: Scene, display: DisplayQuad | None = None) -> None:
    Path(path).write_text(format_scene(scene, display))


# --- presets -----------------------------------------------------------------

DEFAULT_DISPLAY = DisplayQuad((-0.24, 0.135, 0.0), (0.24, 0.135, 0.0),
                              (-0.24, -0.135, 0.0), (0.24, -0.135, 0.0))


def preset_scene(name: str = "planar") -> tuple[Scene, DisplayQuad]:
    """Desk-scale presets; the display sits in the z = 0 plane facing -z."""
    back = Plane((0.0, 0.0, 3.0), (0.0, 0.0, -1.0), 10.0, 8.0,
                 Checker(0.5, (210, 200, 180), (60, 70, 90)))
    if name == "planar":
        return Scene((), back), DEFAULT_DISPLAY
    if name == "occluder":
        box = Box((-0.6, -0.5, 1.8), (0.2, 0.3, 2.2), Checker(0.2, (200, 40, 40), (240, 220, 60)))
        ball = Sphere((0.9, 0.4, 2.4), 0.3, Solid((40, 160, 60)))
        return Scene((box, ball), back), DEFAULT_DISPLAY
    if name == "steps":
        # three background depths, as in a cluttered room corner
        near = Plane((-1.2, 0.0, 2.0), (0.0, 0.0, -1.0), 1.6, 6.0, Checker(0.3, (230, 120, 40), (50, 50, 50)))
        mid = Plane((1.2, 0.0, 2.5), (0.0, 0.0, -1.0), 1.6, 6.0, Gradient("y", -1.5, 1.5, (20, 40, 200), (220, 220, 250)))
        return Scene((near, mid), back), DEFAULT_DISPLAY
    raise SceneError(f"unknown preset {name!r}")


PRESETS = ("planar", "occluder", "steps")
