"""End-to-end camouflage: shadow datasets, per-corner networks, kd-tree lookup
of predicted shadow angles, and extraction of the image the display must show.

Two corners are learned (TR and BL), each with one network per angle channel:
TRX/TRY and BLX/BLY. For a rectangular display the remaining corners share
one coordinate with each learned corner, so TL takes theta from BL and phi
from TR, and BR takes theta from TR and phi from BL.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .errors import FormatError, GeometryError, RayMissError, UndefinedCloudPointError
from .geometry import (
    CornerFrame,
    cartesian_to_spherical_many,
    point_to_pixel,
    spherical_to_cartesian,
    to_corner_frame,
)
from .kdtree import KdTree2, build, nn_search
from .mlp import (
    CamouflageDataset,
    MlpArchitecture,
    MlpParameters,
    Split,
    forward,
    load_model,
    save_model,
    split_dataset,
)
from .scene import DisplayQuad, Scene, occluded_region_render, shadow_rays, cast_rays
from .seeding import substream
from .sensor import (
    PointCloud,
    SensorRig,
    annotate_corner_angles,
    register_and_build,
    render_color,
    render_depth,
)
from .trainer import Selection, TrainConfig, model_selection
from .warp import extract_quad

CORNERS = ("TL", "TR", "BL", "BR")
TRACKED = ("TR", "BL")
NETWORKS = ("TRX", "TRY", "BLX", "BLY")
AZIMUTH_LIMIT = 35.0
POLAR_LIMIT = 26.9
LOW_CONFIDENCE_DEG = 2.0
DISPLAY_RASTER = (640, 360)

# corner -> (network for theta, network for phi)
CORNER_SOURCES = {
    "TR": ("TRX", "TRY"),
    "BL": ("BLX", "BLY"),
    "TL": ("BLX", "TRY"),
    "BR": ("TRX", "BLY"),
}


def network_name(corner: str, channel: str) -> str:
    return corner + {"theta": "X", "phi": "Y"}[channel]


def corner_frames(display: DisplayQuad, rig: SensorRig) -> dict[str, CornerFrame]:
    """Back-facing frames at each display corner, aligned with the back sensor."""
    return {name: CornerFrame(name, p, rig.back.rotation) for name, p in display.corners.items()}


def frame_observer_angles(frame: CornerFrame, ops: np.ndarray) -> np.ndarray:
    """(N, 3) theta, phi, r of observation points in the corner's front-facing frame."""
    return cartesian_to_spherical_many(to_corner_frame(frame.facing_front(), np.atleast_2d(ops)))


def frame_back_angles(frame: CornerFrame, pts: np.ndarray) -> np.ndarray:
    return cartesian_to_spherical_many(to_corner_frame(frame, np.atleast_2d(pts)))


def sample_observers(display: DisplayQuad, count: int, rng: np.random.Generator,
                     theta_range: float = 30.0, phi_range: float = 25.0,
                     distance=(1.0, 4.0), orientation: np.ndarray | None = None) -> np.ndarray:
    """Stratified, jittered observation points in front of the display.

    Angles are drawn on a grid of cells over +-theta_range x +-phi_range about the
    display center (measured looking out from the display), distance uniform.
    """
    if count < 1:
        raise ValueError("count must be positive")
    cols = max(1, math.ceil(math.sqrt(count * theta_range / phi_range)))
    rows = math.ceil(count / cols)
    cells = rng.permutation(rows * cols)[:count]
    r, c = np.divmod(cells, cols)
    th = -theta_range + (c + rng.uniform(size=count)) * (2 * theta_range / cols)
    ph = -phi_range + (r + rng.uniform(size=count)) * (2 * phi_range / rows)
    dist = rng.uniform(distance[0], distance[1], size=count)
    center = CornerFrame("center", display.center,
                         np.eye(3) if orientation is None else orientation).facing_front()
    local = np.array([spherical_to_cartesian((t, p, d)) for t, p, d in zip(th, ph, dist)])
    return local @ center.orientation.T + center.origin


def observers_at_angles(frame: CornerFrame, thetas, phis, distance: float) -> np.ndarray:
    """Observation points at given corner-frame observer angles and radial distance."""
    front = frame.facing_front()
    local = np.array([spherical_to_cartesian((t, p, distance)) for t, p in zip(thetas, phis)])
    return local @ front.orientation.T + front.origin


# --- datasets ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CornerDataset:
    corner: str
    theta: CamouflageDataset
    phi: CamouflageDataset
    ops: np.ndarray | None = None
    shadows: np.ndarray | None = None
    cloud_index: np.ndarray | None = None

    def channel(self, name: str) -> CamouflageDataset:
        return {"theta": self.theta, "phi": self.phi}[name]


class CloudLocator:
    """Finds the defined cloud point whose registered color pixel is nearest a
    color-image location (marking a point in the RGB image, then looking it up)."""

    def __init__(self, cloud: PointCloud, rig: SensorRig, max_gap_px: float = 3.0):
        self.cloud = cloud
        self.rig = rig
        self.max_gap_px = max_gap_px
        idx = np.flatnonzero(cloud.defined)
        self.tree = build(cloud.color_pixel[idx, 0], cloud.color_pixel[idx, 1], idx)

    def locate(self, point) -> int:
        try:
            uv = point_to_pixel(self.rig.color, point)
        except GeometryError as exc:
            raise UndefinedCloudPointError(f"shadow point {tuple(point)} is not in the color image") from exc
        st = nn_search(self.tree, uv)
        if st.distance > self.max_gap_px:
            raise UndefinedCloudPointError(
                f"no defined cloud point within {self.max_gap_px} px of color pixel {uv}")
        return st.result


def generate_dataset(scene: Scene, display: DisplayQuad, corner: str, ops: np.ndarray,
                     frame: CornerFrame, split: Split | int = 0, locator: CloudLocator | None = None,
                     target: str = "shadow") -> CornerDataset:
    """Observer angles -> shadow angles at one corner.

    With a ``locator`` each shadow point is also found in the point cloud;
    ``target='cloud'`` then takes the target angles from that cloud point rather
    than from the exact shadow point.
    """
    ops = np.atleast_2d(np.asarray(ops, float))
    if len(ops) < 3:
        raise ValueError("at least three observation points are required")
    if not all(display.is_front(op) for op in ops):
        raise GeometryError("every observation point must be in front of the display")
    if target not in ("shadow", "cloud") or (target == "cloud" and locator is None):
        raise ValueError("target must be 'shadow', or 'cloud' together with a locator")
    cpos = display.corners[corner]
    o, d = shadow_rays(ops, cpos)
    t, idx = cast_rays(scene, o, d)
    if np.any(idx < 0):
        raise RayMissError(f"{int(np.sum(idx < 0))} shadow rays of corner {corner} miss the scene")
    shadows = o + t[:, None] * d
    cloud_index = None
    target_pts = shadows
    if locator is not None:
        cloud_index = np.array([locator.locate(p) for p in shadows])
        if target == "cloud":
            target_pts = locator.cloud.position[cloud_index]
    a_in = frame_observer_angles(frame, ops)
    a_t = frame_back_angles(frame, target_pts)
    if not isinstance(split, Split):
        split = split_dataset(len(ops), seed=split)
    return CornerDataset(corner, CamouflageDataset(a_in[:, 0], a_t[:, 0], split),
                         CamouflageDataset(a_in[:, 1], a_t[:, 1], split), ops, shadows, cloud_index)


def collect_datasets(scene: Scene, display: DisplayQuad, frames: Mapping[str, CornerFrame],
                     seed: int, instances: int = 35, corners: Sequence[str] = TRACKED,
                     locator: CloudLocator | None = None, target: str = "shadow") -> dict[str, CornerDataset]:
    ops = sample_observers(display, instances, substream(seed, "observers"),
                           orientation=frames[corners[0]].orientation)
    return {c: generate_dataset(scene, display, c, ops, frames[c],
                                split_dataset(instances, seed=substream(seed, "split", c)),
                                locator, target) for c in corners}


def flip_horizontal(ds: CornerDataset) -> CornerDataset:
    """Negate the theta targets, as a right-to-left buffer written left-to-right would."""
    th = CamouflageDataset(ds.theta.angle_in, -ds.theta.angle_target, ds.theta.split)
    return replace(ds, theta=th)


DATASET_HEADER = ["corner", "channel", "angle_in", "angle_target", "split"]


def save_datasets_csv(path: str | Path, datasets: Mapping[str, CornerDataset]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_HEADER)
        for corner, ds in datasets.items():
            for channel in ("theta", "phi"):
                cd = ds.channel(channel)
                for a, b, tag in zip(cd.angle_in.tolist(), cd.angle_target.tolist(),
                                     cd.split.tags(len(cd))):
                    w.writerow([corner, channel, repr(a), repr(b), tag])


def load_datasets_csv(path: str | Path) -> dict[str, CornerDataset]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read dataset {path}: {exc}") from exc
    if not rows or rows[0] != DATASET_HEADER:
        raise FormatError(f"{path}: missing dataset header")
    groups: dict[tuple[str, str], list[list[str]]] = {}
    for row in rows[1:]:
        if len(row) != 5:
            raise FormatError(f"{path}: bad row {row}")
        groups.setdefault((row[0], row[1]), []).append(row)
    out = {}
    try:
        for corner in dict.fromkeys(k[0] for k in groups):
            chans = {}
            for channel in ("theta", "phi"):
                g = groups.get((corner, channel))
                if not g:
                    raise FormatError(f"{path}: corner {corner} lacks channel {channel}")
                chans[channel] = CamouflageDataset([float(r[2]) for r in g], [float(r[3]) for r in g],
                                                   Split.from_tags([r[4] for r in g]))
            out[corner] = CornerDataset(corner, chans["theta"], chans["phi"])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return out


# --- models --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Network:
    name: str
    arch: MlpArchitecture
    params: MlpParameters

    def __call__(self, x):
        return forward(self.arch, self.params, x)


@dataclass(frozen=True, eq=False)
class CamouflageModel:
    networks: Mapping[str, Network]
    frames: Mapping[str, CornerFrame]
    scene_fingerprint: str
    display: DisplayQuad
    stage2: Mapping[str, Network] = field(default_factory=dict)
    selections: Mapping[str, Selection] = field(default_factory=dict)

    def apply(self, name: str, x):
        y = self.networks[name](x)
        if name in self.stage2:
            y = self.stage2[name](y)
        return y


def _network_config(config: TrainConfig, name: str, stage: str = "stage1") -> TrainConfig:
    seed = int(substream(config.seed, stage, name).integers(2**31))
    return replace(config, seed=seed)


def train_model(scene: Scene, display: DisplayQuad, frames: Mapping[str, CornerFrame],
                datasets: Mapping[str, CornerDataset], config: TrainConfig = TrainConfig(),
                sizes: Sequence[int] = (2, 3, 4)) -> CamouflageModel:
    networks, selections = {}, {}
    for corner in TRACKED:
        for channel in ("theta", "phi"):
            name = network_name(corner, channel)
            sel = model_selection(datasets[corner].channel(channel), sizes, _network_config(config, name))
            best = sel.best.result
            networks[name] = Network(name, best.arch, best.params)
            selections[name] = sel
    return CamouflageModel(networks, dict(frames), scene.fingerprint(), display, {}, selections)


def train_correction(model: CamouflageModel, pairs: Mapping[str, tuple[np.ndarray, np.ndarray]],
                     config: TrainConfig = TrainConfig(), sizes: Sequence[int] = (2, 3, 4)) -> CamouflageModel:
    """Second-stage networks mapping stage-1 outputs onto correct measured angles."""
    stage2 = dict(model.stage2)
    for name, (stage1_out, true) in pairs.items():
        stage1_out = np.asarray(stage1_out, float)
        if len(stage1_out) < 8:
            raise ValueError(f"{name}: at least 8 correction pairs are required")
        cfg = _network_config(config, name, "stage2")
        split = split_dataset(len(stage1_out), seed=substream(cfg.seed, "split"))
        sel = model_selection(CamouflageDataset(stage1_out, true, split), sizes, cfg)
        stage2[name] = Network(name, sel.best.result.arch, sel.best.result.params)
    return replace(model, stage2=stage2)


@dataclass(frozen=True)
class CornerPrediction:
    theta: float
    phi: float
    theta_in: float
    phi_in: float
    extrapolated: bool


def predict_shadow_angles(model: CamouflageModel, op) -> dict[str, CornerPrediction]:
    op = np.asarray(op, float)
    if not model.display.is_front(op):
        raise GeometryError("observation point is behind the display plane")
    inputs = {c: frame_observer_angles(model.frames[c], op)[0] for c in TRACKED}
    out = {}
    for corner, (tnet, pnet) in CORNER_SOURCES.items():
        th_in = inputs[tnet[:2]][0]
        ph_in = inputs[pnet[:2]][1]
        out[corner] = CornerPrediction(
            float(model.apply(tnet, th_in)), float(model.apply(pnet, ph_in)), float(th_in),
            float(ph_in), bool(abs(th_in) > AZIMUTH_LIMIT or abs(ph_in) > POLAR_LIMIT))
    return out


# --- background capture and frames ---------------------------------------------


@dataclass(frozen=True, eq=False)
class BackgroundCapture:
    rig: SensorRig
    color: np.ndarray
    cloud: PointCloud
    trees: Mapping[str, KdTree2]
    depth: object = None


def capture_background(scene: Scene, rig: SensorRig, frames: Mapping[str, CornerFrame]) -> BackgroundCapture:
    depth = render_depth(rig, scene)
    color = render_color(rig, scene)
    cloud = annotate_corner_angles(register_and_build(depth, color, rig), list(frames.values()))
    return BackgroundCapture(rig, color, cloud, corner_trees(cloud), depth)


def corner_trees(cloud: PointCloud) -> dict[str, KdTree2]:
    idx = np.flatnonzero(cloud.defined)
    return {name: build(a[idx, 0], a[idx, 1], idx) for name, a in cloud.angles.items()}


@dataclass(frozen=True)
class CornerResolution:
    pixel: tuple[float, float]
    cloud_index: int
    distance: float
    visited: int


def resolve_corners(predictions: Mapping[str, CornerPrediction], capture: BackgroundCapture) -> dict[str, CornerResolution]:
    out = {}
    for corner, pred in predictions.items():
        st = nn_search(capture.trees[corner], (pred.theta, pred.phi))
        cu, cv = capture.cloud.color_pixel[st.result]
        out[corner] = CornerResolution((float(cu), float(cv)), st.result, st.distance, st.visited)
    return out


extract_camouflage_image = extract_quad


@dataclass(frozen=True, eq=False)
class FrameOutput:
    image: np.ndarray
    predictions: dict[str, CornerPrediction]
    corners: dict[str, CornerResolution]

    @property
    def low_confidence(self) -> bool:
        return any(c.distance > LOW_CONFIDENCE_DEG for c in self.corners.values())

    @property
    def extrapolated(self) -> bool:
        return any(p.extrapolated for p in self.predictions.values())


def run_frame(model: CamouflageModel, scene: Scene, capture: BackgroundCapture, op,
              raster: tuple[int, int] = DISPLAY_RASTER) -> FrameOutput:
    if scene.fingerprint() != model.scene_fingerprint:
        raise ValueError("model was trained on a different scene")
    preds = predict_shadow_angles(model, op)
    res = resolve_corners(preds, capture)
    quad = np.array([res[c].pixel for c in CORNERS])
    image = extract_camouflage_image(capture.color, quad, raster[0], raster[1])
    return FrameOutput(image, preds, res)


def concealment_error(frame: FrameOutput, display: DisplayQuad, scene: Scene, op) -> float:
    """Mean absolute 8-bit channel error against the occluded-region oracle."""
    h, w = frame.image.shape[:2]
    truth, _ = occluded_region_render(op, display, scene, w, h)
    return mean_abs_error(frame.image, truth)


def mean_abs_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(a, float) - np.asarray(b, float))))


# --- bundles -------------------------------------------------------------------

MODEL_MANIFEST = "manifest.json"


def _frame_json(f: CornerFrame) -> dict:
    return {"origin": f.origin.tolist(), "orientation": f.orientation.tolist()}


def save_bundle(directory: str | Path, model: CamouflageModel, extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    nets = {}
    for name, net in model.networks.items():
        save_model(d / f"{name}.model", net.arch, net.params)
        nets[name] = {"hidden": net.arch.hidden, "file": f"{name}.model"}
    stage2 = {}
    for name, net in model.stage2.items():
        save_model(d / f"{name}.stage2.model", net.arch, net.params)
        stage2[name] = {"hidden": net.arch.hidden, "file": f"{name}.stage2.model"}
    manifest = {
        "tool_version": __version__,
        "scene_fingerprint": model.scene_fingerprint,
        "display": {k: list(v) for k, v in zip(CORNERS, (model.display.tl, model.display.tr,
                                                          model.display.bl, model.display.br))},
        "corner_frames": {k: _frame_json(f) for k, f in model.frames.items()},
        "networks": nets,
        "stage2": stage2,
    }
    if extra:
        manifest.update(extra)
    (d / MODEL_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_bundle(directory: str | Path) -> tuple[CamouflageModel, dict]:
    d = Path(directory)
    try:
        manifest = json.loads((d / MODEL_MANIFEST).read_text())
        disp = manifest["display"]
        display = DisplayQuad(*(tuple(disp[k]) for k in CORNERS))
        frames = {k: CornerFrame(k, v["origin"], v["orientation"])
                  for k, v in manifest["corner_frames"].items()}
        nets = {n: Network(n, *load_model(d / v["file"])) for n, v in manifest["networks"].items()}
        stage2 = {n: Network(n, *load_model(d / v["file"])) for n, v in manifest.get("stage2", {}).items()}
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"bad model bundle {d}: {exc}") from exc
    return CamouflageModel(nets, frames, manifest["scene_fingerprint"], display, stage2), manifest
