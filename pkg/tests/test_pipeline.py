import numpy as np
import pytest

from rgbd_camo.errors import DegenerateQuadError, FormatError, GeometryError, RayMissError, UndefinedCloudPointError
from rgbd_camo.kdtree import linear_scan
from rgbd_camo.mlp import split_dataset
from rgbd_camo.pipeline import (
    CORNER_SOURCES,
    CORNERS,
    NETWORKS,
    CloudLocator,
    capture_background,
    collect_datasets,
    concealment_error,
    corner_frames,
    flip_horizontal,
    frame_observer_angles,
    generate_dataset,
    load_bundle,
    load_datasets_csv,
    observers_at_angles,
    predict_shadow_angles,
    resolve_corners,
    run_frame,
    sample_observers,
    save_bundle,
    save_datasets_csv,
    train_correction,
    train_model,
)
from rgbd_camo.scene import Plane, Scene, Solid, cast_rays, preset_scene
from rgbd_camo.sensor import default_rig
from rgbd_camo.trainer import TrainConfig

RIG = default_rig(depth_size=(128, 106), color_size=(320, 180))
FAST = TrainConfig(restarts=2, seed=3)


@pytest.fixture(scope="module")
def planar():
    scene, disp = preset_scene("planar")
    frames = corner_frames(disp, RIG)
    return scene, disp, frames


@pytest.fixture(scope="module")
def trained(planar):
    scene, disp, frames = planar
    ds = collect_datasets(scene, disp, frames, seed=5)
    model = train_model(scene, disp, frames, ds, FAST, sizes=(2, 3))
    cap = capture_background(scene, RIG, frames)
    return ds, model, cap


def test_frames_follow_back_sensor(planar):
    _, disp, frames = planar
    assert set(frames) == set(CORNERS)
    for name, f in frames.items():
        assert np.array_equal(f.origin, disp.corners[name])
        assert np.array_equal(f.orientation, RIG.back.rotation)


def test_sample_observers_in_front(planar):
    _, disp, frames = planar
    ops = sample_observers(disp, 35, np.random.default_rng(0))
    assert ops.shape == (35, 3)
    assert all(disp.is_front(op) for op in ops)
    d = np.linalg.norm(ops - disp.center, axis=1)
    assert d.min() >= 1.0 - 1e-9 and d.max() <= 4.0 + 1e-9


def test_observers_at_angles_round_trip(planar):
    _, _, frames = planar
    ops = observers_at_angles(frames["TR"], [10.0, -20.0], [5.0, -3.0], 2.0)
    a = frame_observer_angles(frames["TR"], ops)
    assert np.allclose(a, [[10, 5, 2], [-20, -3, 2]], atol=1e-12)


def test_generate_dataset_planar_mirror(planar):
    scene, disp, frames = planar
    ops = sample_observers(disp, 35, np.random.default_rng(1))
    for corner in ("TR", "BL"):
        ds = generate_dataset(scene, disp, corner, ops, frames[corner], split_dataset(35, seed=2))
        assert len(ds.theta) == len(ds.phi) == 35
        assert np.max(np.abs(ds.theta.angle_target + ds.theta.angle_in)) < 1e-9
        assert np.max(np.abs(ds.phi.angle_target + ds.phi.angle_in)) < 1e-9


def test_targets_lie_on_scene(planar):
    scene, disp, frames = planar
    occl, _ = preset_scene("occluder")
    ops = sample_observers(disp, 20, np.random.default_rng(2))
    for sc in (scene, occl):
        ds = generate_dataset(sc, disp, "BL", ops, frames["BL"])
        c = disp.corners["BL"]
        d = (ds.shadows - c) / np.linalg.norm(ds.shadows - c, axis=1, keepdims=True)
        t, idx = cast_rays(sc, np.broadcast_to(c, d.shape), d)
        assert np.all(idx >= 0)
        assert np.allclose(c + t[:, None] * d, ds.shadows, atol=1e-9)


def test_on_axis_observer_targets_zero(planar):
    scene, disp, frames = planar
    f = frames["TR"]
    ops = observers_at_angles(f, [0.0, 0.0, 0.0], [0.0, 0.0, 0.0], 1.5) + [[0, 0, 0], [0, 0, -0.5], [0, 0, -1]]
    ds = generate_dataset(scene, disp, "TR", ops, f, split_dataset(3, proportions=(1 / 3, 1 / 3, 1 / 3)))
    assert np.allclose(ds.theta.angle_target, 0, atol=1e-12)
    assert np.allclose(ds.phi.angle_target, 0, atol=1e-12)


def test_occluder_keeps_direction_changes_depth(planar):
    # angles are direction-only, so an occluder moves the shadow radially, not angularly
    scene, disp, frames = planar
    occl, _ = preset_scene("occluder")
    ops = sample_observers(disp, 35, np.random.default_rng(3))
    a = generate_dataset(scene, disp, "BL", ops, frames["BL"])
    b = generate_dataset(occl, disp, "BL", ops, frames["BL"])
    assert np.allclose(a.theta.angle_target, b.theta.angle_target, atol=1e-9)
    moved = np.linalg.norm(a.shadows - b.shadows, axis=1) > 1e-6
    assert moved.any() and not moved.all()


def test_generate_dataset_errors(planar):
    scene, disp, frames = planar
    with pytest.raises(ValueError):
        generate_dataset(scene, disp, "TR", np.array([[0, 0, -1.0], [0.1, 0, -1.0]]), frames["TR"])
    with pytest.raises(GeometryError):
        generate_dataset(scene, disp, "TR", np.array([[0, 0, -1.0], [0.1, 0, -1.0], [0, 0, 1.0]]), frames["TR"])
    tiny = Scene((), Plane((0, 0, 3), (0, 0, -1), 0.2, 0.2, Solid((1, 1, 1))))
    with pytest.raises(RayMissError):
        generate_dataset(tiny, disp, "TR", np.array([[0, 0, -1.0], [0.5, 0, -1.0], [0, 0.5, -1.0]]), frames["TR"])


def test_cloud_locator_and_cloud_targets(planar, trained):
    scene, disp, frames = planar
    _, _, cap = trained
    loc = CloudLocator(cap.cloud, RIG)
    ops = sample_observers(disp, 12, np.random.default_rng(4), theta_range=15, phi_range=10)
    ds = generate_dataset(scene, disp, "TR", ops, frames["TR"], split_dataset(12), loc, target="cloud")
    assert np.all(cap.cloud.defined[ds.cloud_index])
    # the cloud target sits within one cloud cell of the exact mirror
    assert np.max(np.abs(ds.theta.angle_target + ds.theta.angle_in)) < 1.5
    with pytest.raises(UndefinedCloudPointError):
        loc.locate(np.array([0.0, 50.0, 3.0]))
    with pytest.raises(ValueError):
        generate_dataset(scene, disp, "TR", ops, frames["TR"], target="cloud")


def test_flip_horizontal(trained):
    ds, _, _ = trained
    f = flip_horizontal(ds["TR"])
    assert np.array_equal(f.theta.angle_target, -ds["TR"].theta.angle_target)
    assert np.array_equal(f.phi.angle_target, ds["TR"].phi.angle_target)


def test_dataset_csv_round_trip(trained, tmp_path):
    ds, _, _ = trained
    save_datasets_csv(tmp_path / "d.csv", ds)
    back = load_datasets_csv(tmp_path / "d.csv")
    for c in ds:
        for ch in ("theta", "phi"):
            a, b = ds[c].channel(ch), back[c].channel(ch)
            assert np.array_equal(a.angle_in, b.angle_in) and np.array_equal(a.angle_target, b.angle_target)
            assert np.array_equal(a.split.test, b.split.test)
    (tmp_path / "bad.csv").write_text("corner,channel\nTR,theta\n")
    with pytest.raises(FormatError):
        load_datasets_csv(tmp_path / "bad.csv")


def test_train_model_networks(trained):
    _, model, _ = trained
    assert set(model.networks) == set(NETWORKS)
    for name in NETWORKS:
        sel = model.selections[name]
        assert model.networks[name].arch.hidden == sel.chosen
        best = sel.best
        assert abs(best.a) <= 0.5 and 0.9 <= best.b <= 1.1


def test_corner_composition(trained, planar):
    _, model, _ = trained
    _, disp, frames = planar
    op = np.array([0.15, -0.05, -1.8])
    preds = predict_shadow_angles(model, op)
    tr = frame_observer_angles(frames["TR"], op)[0]
    bl = frame_observer_angles(frames["BL"], op)[0]
    assert preds["TL"].theta_in == pytest.approx(bl[0]) and preds["TL"].phi_in == pytest.approx(tr[1])
    assert preds["BR"].theta_in == pytest.approx(tr[0]) and preds["BR"].phi_in == pytest.approx(bl[1])
    assert CORNER_SOURCES["TL"] == ("BLX", "TRY")
    # on a rectangle the composed angles match each corner's own mirror angles
    for c in CORNERS:
        own = frame_observer_angles(frames[c], op)[0]
        assert preds[c].theta == pytest.approx(-own[0], abs=0.5)
        assert preds[c].phi == pytest.approx(-own[1], abs=0.5)
    with pytest.raises(GeometryError):
        predict_shadow_angles(model, (0, 0, 1.0))


def test_resolve_matches_linear_scan(trained):
    _, model, cap = trained
    rng = np.random.default_rng(9)
    ok = np.flatnonzero(cap.cloud.defined)
    for _ in range(5):
        op = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2), rng.uniform(-2.5, -1.2)])
        preds = predict_shadow_angles(model, op)
        res = resolve_corners(preds, cap)
        for c, p in preds.items():
            a = cap.cloud.angles[c]
            idx, dist = linear_scan(a[ok, 0], a[ok, 1], ok, (p.theta, p.phi))
            assert res[c].cloud_index == idx and res[c].distance == dist


def test_run_frame_properties(trained, planar):
    scene, disp, _ = planar
    _, model, cap = trained
    a = run_frame(model, scene, cap, (0.0, 0.0, -1.6), (64, 36))
    b = run_frame(model, scene, cap, (0.0, 0.0, -1.6), (64, 36))
    c = run_frame(model, scene, cap, (0.3, 0.1, -1.6), (64, 36))
    assert a.image.shape == (36, 64, 3)
    assert np.array_equal(a.image, b.image)
    assert not np.array_equal(a.image, c.image)
    assert not a.low_confidence and not a.extrapolated
    assert concealment_error(a, disp, scene, (0.0, 0.0, -1.6)) <= 8
    other, _ = preset_scene("steps")
    with pytest.raises(ValueError):
        run_frame(model, other, cap, (0.0, 0.0, -1.6))


def test_extrapolation_flag(trained, planar):
    scene, _, _ = planar
    _, model, cap = trained
    preds = predict_shadow_angles(model, (2.5, 0.0, -1.0))
    assert any(p.extrapolated for p in preds.values())
    # every corner lands on the same cloud edge, so no quad can be formed
    with pytest.raises(DegenerateQuadError):
        run_frame(model, scene, cap, (2.5, 0.0, -1.0), (16, 9))


def test_bundle_round_trip(trained, planar, tmp_path):
    _, model, _ = trained
    save_bundle(tmp_path, model, {"note": "x"})
    back, manifest = load_bundle(tmp_path)
    assert manifest["note"] == "x" and back.scene_fingerprint == model.scene_fingerprint
    for name in NETWORKS:
        assert back.networks[name].params.zeta.tobytes() == model.networks[name].params.zeta.tobytes()
    op = (0.1, 0.0, -2.0)
    p1, p2 = predict_shadow_angles(model, op), predict_shadow_angles(back, op)
    assert all(p1[c] == p2[c] for c in CORNERS)
    (tmp_path / "manifest.json").write_text("{")
    with pytest.raises(FormatError):
        load_bundle(tmp_path)


def test_train_correction_requires_pairs(trained):
    _, model, _ = trained
    with pytest.raises(ValueError):
        train_correction(model, {"TRX": (np.arange(5.0), np.arange(5.0))})


def test_correction_composes(trained):
    _, model, _ = trained
    x = np.linspace(-20, 20, 16)
    stage1 = model.networks["TRX"](x)
    fixed = train_correction(model, {"TRX": (stage1, 0.5 * stage1 + 1.0)}, FAST, sizes=(2,))
    assert "TRX" in fixed.stage2 and "TRX" not in model.stage2
    assert fixed.apply("TRX", 3.0) == pytest.approx(0.5 * model.apply("TRX", 3.0) + 1.0, abs=0.05)
