import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgbd_camo.errors import FormatError, GeometryError, RayMissError, SceneError
from rgbd_camo.geometry import CornerFrame, cartesian_to_spherical, to_corner_frame
from rgbd_camo.scene import (
    DEFAULT_DISPLAY,
    PRESETS,
    Box,
    Checker,
    DisplayQuad,
    Gradient,
    Plane,
    Scene,
    Solid,
    Sphere,
    format_scene,
    load_scene,
    occluded_region_render,
    parse_scene,
    preset_scene,
    ray_cast,
    save_scene,
    shadow_of_corner,
)

GREY = Solid((128, 128, 128))


def wall(z=3.0, texture=GREY):
    return Plane((0, 0, z), (0, 0, -1), 40, 40, texture)


# --- independent scalar oracle ------------------------------------------------


def _oracle_t(surface, o, d):
    if isinstance(surface, Plane):
        n = np.array(surface.normal)
        den = float(d @ n)
        if abs(den) < 1e-15:
            return math.inf
        t = float((np.array(surface.point) - o) @ n) / den
        if t <= 1e-9:
            return math.inf
        p = o + t * d - np.array(surface.point)
        # the planes used here are all z-facing, so use x/y extents
        if abs(p[0]) > surface.width / 2 + 1e-12 or abs(p[1]) > surface.height / 2 + 1e-12:
            return math.inf
        return t
    if isinstance(surface, Sphere):
        oc = o - np.array(surface.center)
        b = 2 * float(oc @ d)
        c = float(oc @ oc) - surface.radius ** 2
        disc = b * b - 4 * c
        if disc < 0:
            return math.inf
        roots = sorted([(-b - math.sqrt(disc)) / 2, (-b + math.sqrt(disc)) / 2])
        return next((r for r in roots if r > 1e-9), math.inf)
    # box: test the six faces individually
    best = math.inf
    lo, hi = np.array(surface.lo), np.array(surface.hi)
    for axis in range(3):
        if d[axis] == 0:
            continue
        for bound in (lo[axis], hi[axis]):
            t = (bound - o[axis]) / d[axis]
            if t <= 1e-9:
                continue
            p = o + t * d
            others = [k for k in range(3) if k != axis]
            if all(lo[k] - 1e-12 <= p[k] <= hi[k] + 1e-12 for k in others):
                best = min(best, t)
    return best


def _oracle_hit(scene, o, d):
    ts = [_oracle_t(s, o, d) for s in scene.all_surfaces]
    i = int(np.argmin(ts))
    return (None, math.inf) if math.isinf(ts[i]) else (i, ts[i])


# --- ray_cast ------------------------------------------------------------------


def test_ray_cast_examples():
    h = ray_cast((0, 0, 0), (0, 0, 1), Scene((), wall()))
    assert np.allclose(h.point, (0, 0, 3)) and h.t == pytest.approx(3)
    ball = Sphere((0, 0, 5), 1, GREY)
    h = ray_cast((0, 0, 0), (0, 0, 1), Scene((ball,), wall(8)))
    assert np.allclose(h.point, (0, 0, 4)) and h.surface == 0
    h = ray_cast((0, 0, 0), (0, 0, 1), Scene((Sphere((0, 0, 2), 0.5, GREY),), wall(3)))
    assert h.surface == 0 and h.t == pytest.approx(1.5)


def test_ray_cast_miss_and_bad_direction():
    small = Plane((0, 0, 3), (0, 0, -1), 1, 1, GREY)
    assert ray_cast((0, 0, 0), (0, 1, 0), Scene((), small)) is None
    with pytest.raises(Exception):
        ray_cast((0, 0, 0), (0, 0, 2), Scene((), small))


def test_ray_cast_tie_lowest_index():
    a = Plane((0, 0, 2), (0, 0, -1), 4, 4, Solid((1, 1, 1)))
    b = Plane((0, 0, 2), (0, 0, 1), 4, 4, Solid((2, 2, 2)))
    assert ray_cast((0, 0, 0), (0, 0, 1), Scene((a, b), wall())).surface == 0


def test_ray_cast_matches_brute_force():
    rng = np.random.default_rng(2024)
    for trial in range(40):
        surfaces = []
        for _ in range(rng.integers(1, 5)):
            kind = rng.integers(3)
            c = rng.uniform([-1, -1, 1], [1, 1, 4])
            if kind == 0:
                surfaces.append(Sphere(tuple(c), rng.uniform(0.1, 0.8), GREY))
            elif kind == 1:
                half = rng.uniform(0.05, 0.6, 3)
                surfaces.append(Box(tuple(c - half), tuple(c + half), GREY))
            else:
                surfaces.append(Plane(tuple(c), (0, 0, -1), rng.uniform(0.2, 2), rng.uniform(0.2, 2), GREY))
        scene = Scene(tuple(surfaces), wall(6))
        for _ in range(25):
            o = rng.uniform(-0.5, 0.5, 3) - [0, 0, 1]
            d = rng.normal(size=3) + [0, 0, 3]
            d /= np.linalg.norm(d)
            hit = ray_cast(o, d, scene)
            i, t = _oracle_hit(scene, o, d)
            if hit is None:
                assert i is None
                continue
            assert hit.surface == i
            assert hit.t == pytest.approx(t, abs=1e-9)


def test_hit_lies_on_surface():
    ball = Sphere((0.2, -0.1, 2.0), 0.7, GREY)
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = rng.normal(size=3) * 0.2 + [0, 0, 1]
        d /= np.linalg.norm(d)
        h = ray_cast((0, 0, 0), d, Scene((ball,), wall(9)))
        if h.surface == 0:
            assert abs(np.linalg.norm(h.point - ball.center) - ball.radius) < 1e-9


# --- shadow_of_corner ------------------------------------------------------------


def test_shadow_examples():
    sc = Scene((), wall(2))
    assert np.allclose(shadow_of_corner((0, 0, -1), (0, 0, 0), sc), (0, 0, 2))
    assert np.allclose(shadow_of_corner((1, 0, -1), (0, 0, 0), sc), (-2, 0, 2))


def test_shadow_on_box_front_face():
    box = Box((-1, -1, 1.0), (1, 1, 1.5), GREY)
    p = shadow_of_corner((0.1, 0.05, -1), (0, 0, 0), Scene((box,), wall(3)))
    assert p[2] == pytest.approx(1.0)


def test_shadow_miss():
    small = Plane((0, 0, 3), (0, 0, -1), 0.5, 0.5, GREY)
    with pytest.raises(RayMissError):
        shadow_of_corner((3, 0, -1), (0, 0, 0), Scene((), small))


ops = st.tuples(st.floats(-1, 1), st.floats(-0.7, 0.7), st.floats(-4, -1))


@settings(max_examples=60)
@given(ops, st.sampled_from(PRESETS))
def test_shadow_collinear(op, preset):
    scene, disp = preset_scene(preset)
    op = np.array(op)
    for c in disp.corners.values():
        s = shadow_of_corner(op, c, scene)
        d = (c - op) / np.linalg.norm(c - op)
        off = (s - op) - ((s - op) @ d) * d
        assert np.linalg.norm(off) < 1e-9
        assert (s - c) @ d > 0


@settings(max_examples=60)
@given(ops, st.floats(0.05, 0.95), st.sampled_from(PRESETS))
def test_shadow_invariant_along_line(op, f, preset):
    scene, disp = preset_scene(preset)
    op = np.array(op)
    c = disp.corners["TR"]
    nearer = op + f * (c - op)
    assert np.allclose(shadow_of_corner(op, c, scene), shadow_of_corner(nearer, c, scene), atol=1e-9)


@settings(max_examples=60)
@given(ops, st.sampled_from(PRESETS))
def test_mirror_property_any_background(op, preset):
    scene, disp = preset_scene(preset)
    for name, c in disp.corners.items():
        back = CornerFrame(name, c)
        s = cartesian_to_spherical(to_corner_frame(back, shadow_of_corner(op, c, scene)))
        o = cartesian_to_spherical(to_corner_frame(back.facing_front(), op))
        assert s.theta == pytest.approx(-o.theta, abs=1e-9)
        assert s.phi == pytest.approx(-o.phi, abs=1e-9)


def test_occluder_changes_only_radius():
    planar, disp = preset_scene("planar")
    occl, _ = preset_scene("occluder")
    c = disp.corners["BL"]
    op = np.array([-0.28, -0.17, -1.5])  # shadow of BL lands on the box front
    a = shadow_of_corner(op, c, planar)
    b = shadow_of_corner(op, c, occl)
    assert b[2] < a[2] - 0.5
    frame = CornerFrame("BL", c)
    sa = cartesian_to_spherical(to_corner_frame(frame, a))
    sb = cartesian_to_spherical(to_corner_frame(frame, b))
    assert sa.theta == pytest.approx(sb.theta, abs=1e-9)
    assert sa.r > sb.r


# --- occluded region render -------------------------------------------------------


def test_render_uniform_background():
    img, miss = occluded_region_render((0.1, 0, -1.5), DEFAULT_DISPLAY, Scene((), wall()), 32, 18)
    assert img.shape == (18, 32, 3) and not miss.any()
    assert np.all(img == 128)


def test_render_checker_similar_triangles():
    scene, disp = preset_scene("planar")
    d = 1.5
    w, h = 96, 54
    img, _ = occluded_region_render((0, 0, -d), disp, scene, w, h)
    s, t = np.meshgrid(np.linspace(0, 1, w), np.linspace(0, 1, h))
    x = -0.24 + 0.48 * s
    y = 0.135 - 0.27 * t
    k = (3 + d) / d
    # a 0.5 m checker on the wall seen through the display plane has period 0.5 / k
    parity = (np.floor(x * k / 0.5) + np.floor(y * k / 0.5)).astype(int) % 2
    light = img[..., 0] == 210
    dark = img[..., 0] == 60
    assert np.all(light | dark)
    agree = np.mean(light == (parity == 0))
    assert agree > 0.98 or agree < 0.02  # phase depends on the in-plane basis sign


def test_render_lateral_shift_opposite():
    ramp = wall(texture=Gradient("x", -5, 5, (0, 0, 0), (255, 255, 255)))
    sc = Scene((), ramp)
    left, _ = occluded_region_render((-0.3, 0, -1.5), DEFAULT_DISPLAY, sc, 9, 5)
    right, _ = occluded_region_render((0.3, 0, -1.5), DEFAULT_DISPLAY, sc, 9, 5)
    assert int(right[2, 4, 0]) < int(left[2, 4, 0])


def test_render_miss_flag():
    small = Plane((0, 0, 3), (0, 0, -1), 0.3, 0.3, GREY)
    img, miss = occluded_region_render((0, 0, -1), DEFAULT_DISPLAY, Scene((), small), 40, 20)
    assert miss.any() and (~miss).any()
    assert np.all(img[miss] == (255, 0, 255))


def test_render_behind_display_rejected():
    with pytest.raises(Exception):
        occluded_region_render((0, 0, 1), DEFAULT_DISPLAY, Scene((), wall()), 4, 4)


# --- types and file format ----------------------------------------------------


def test_surface_validation():
    with pytest.raises(SceneError):
        Plane((0, 0, 1), (0, 0, 2), 1, 1, GREY)
    with pytest.raises(SceneError):
        Box((0, 0, 0), (1, -1, 1), GREY)
    with pytest.raises(SceneError):
        Sphere((0, 0, 0), 0, GREY)
    with pytest.raises(SceneError):
        Solid((0, 0, 300))


def test_display_validation():
    with pytest.raises(GeometryError):
        DisplayQuad((0, 0, 0), (1, 0, 0), (0, 1, 0.01), (1, 1, 0))
    with pytest.raises(GeometryError):
        DisplayQuad((0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0))


def test_display_front_side():
    assert np.allclose(DEFAULT_DISPLAY.front_normal, (0, 0, -1))
    assert DEFAULT_DISPLAY.is_front((0, 0, -1))
    assert not DEFAULT_DISPLAY.is_front((0, 0, 1))


@pytest.mark.parametrize("name", PRESETS)
def test_scene_file_round_trip(name, tmp_path):
    scene, disp = preset_scene(name)
    path = tmp_path / "s.txt"
    save_scene(path, scene, disp)
    again, d2 = load_scene(path)
    assert again.fingerprint() == scene.fingerprint()
    assert format_scene(again, d2) == format_scene(scene, disp)


def test_scene_file_errors(tmp_path):
    for text in ["plane 0 0 1 0 0 -1 2 2 solid 1 1 1\n",  # no background
                 "background 0 0 3 0 0 -1 4 4 solid 1 1\n",
                 "background 0 0 3 0 0 -1 4 4 solid 1 1 1\nteapot 1 2 3\n",
                 "background 0 0 3 0 0 -1 4 4 checker x 1 1 1 2 2 2\n"]:
        with pytest.raises(FormatError):
            parse_scene(text)
    with pytest.raises(FormatError):
        load_scene(tmp_path / "missing.txt")


def test_textures():
    c = Checker(1.0, (0, 0, 0), (255, 255, 255))
    out = c.sample(np.array([[0.5, 0.5], [1.5, 0.5]]), None)
    assert out[0].tolist() == [0, 0, 0] and out[1].tolist() == [255, 255, 255]
    g = Gradient("y", 0, 1, (0, 0, 0), (200, 100, 0))
    mid = g.sample(None, np.array([[0, 0.5, 0], [0, 2, 0]]))
    assert mid[0].tolist() == [100, 50, 0] and mid[1].tolist() == [200, 100, 0]
