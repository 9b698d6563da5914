"""Command-line front end.

    rgbd-camo scene gen      --out s.txt [--preset planar]
    rgbd-camo cloud build    --scene s.txt --out DIR
    rgbd-camo dataset collect --scene s.txt --seed 7 --instances 35 --out d.csv
    rgbd-camo train          --scene s.txt --seed 7 --instances 35 --out BUNDLE
    rgbd-camo report         BUNDLE
    rgbd-camo tree stats     --scene s.txt [--queries 1000]
    rgbd-camo frame render   X Y Z --scene s.txt --model BUNDLE --out f.ppm
    rgbd-camo sweep          --scene s.txt --model BUNDLE --out DIR

Exit status: 0 ok, 2 usage, 3 unreadable or invalid file, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CamoError, FormatError
from .kdtree import visited_profile
from .netpbm import write_ppm
from .pipeline import (
    CORNERS,
    NETWORKS,
    CloudLocator,
    capture_background,
    collect_datasets,
    concealment_error,
    corner_frames,
    load_bundle,
    load_datasets_csv,
    run_frame,
    save_bundle,
    save_datasets_csv,
    train_model,
)
from .scene import PRESETS, load_scene, preset_scene, save_scene
from .seeding import substream
from .sensor import default_rig, save_cloud_csv, save_images
from .trainer import TrainConfig

log = logging.getLogger("rgbd_camo")


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}")
    return w, h


def _sizes(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _point(text: str) -> tuple[float, float, float]:
    try:
        x, y, z = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return x, y, z


def _write_run(path: Path, args: argparse.Namespace, artifacts: list[str], **extra) -> None:
    """Run manifest: everything needed to repeat the command bit for bit."""
    opts = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())
            if k not in ("func", "out") and not k.startswith("_")}
    doc = {"tool_version": __version__, "command": args._name, "options": opts,
           "artifacts": sorted(artifacts), **extra}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load(args):
    scene, display = load_scene(args.scene)
    if display is None:
        raise FormatError(f"{args.scene}: scene file has no display line")
    rig = default_rig(args.depth_size, args.color_size)
    return scene, display, rig, corner_frames(display, rig)


def _config(args) -> TrainConfig:
    return TrainConfig(restarts=args.restarts, seed=args.seed, threads=args.threads)


# --- commands ----------------------------------------------------------------


def cmd_scene_gen(args) -> int:
    scene, display = preset_scene(args.preset)
    save_scene(args.out, scene, display)
    print(f"wrote {args.out} ({args.preset}, fingerprint {scene.fingerprint()})")
    return 0


def cmd_cloud_build(args) -> int:
    scene, display, rig, frames = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cap = capture_background(scene, rig, frames)
    save_images(out, cap.depth, cap.color)
    save_cloud_csv(out / "cloud.csv", cap.cloud)
    _write_run(out / "run.json", args, ["cloud.csv", "color.ppm", "depth.pgm"],
               scene_fingerprint=scene.fingerprint())
    print(f"{len(cap.cloud)} points, {cap.cloud.undefined_fraction:.1%} undefined -> {out}")
    return 0


def _collect(args, scene, display, rig, frames):
    locator = None
    if args.target == "cloud":
        locator = CloudLocator(capture_background(scene, rig, frames).cloud, rig)
    return collect_datasets(scene, display, frames, args.seed, args.instances,
                            locator=locator, target=args.target)


def cmd_dataset_collect(args) -> int:
    scene, display, rig, frames = _load(args)
    datasets = _collect(args, scene, display, rig, frames)
    out = Path(args.out)
    save_datasets_csv(out, datasets)
    _write_run(out.with_suffix(".run.json"), args, [out.name], scene_fingerprint=scene.fingerprint())
    print(f"wrote {args.instances} instances per corner to {out}")
    return 0


def _table_rows(model):
    t1, t2 = [], []
    for name in NETWORKS:
        sel = model.selections[name]
        for row in sel.rows:
            t1.append([name, row.hidden, repr(row.a), repr(row.b), repr(row.r2),
                       repr(row.train_error), repr(row.validation_error), int(row.hidden == sel.chosen)])
        best = sel.best.result
        t2.append([name, best.epochs, repr(best.param_norm), repr(best.grad_norm), best.arch.hidden,
                   best.restart, best.best_epoch])
    return t1, t2


TABLE1_HEADER = ["network", "s", "a", "b", "r2", "E_T", "E_V", "selected"]
TABLE2_HEADER = ["network", "N", "param_norm", "grad_norm", "s", "restart", "best_epoch"]


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_train(args) -> int:
    scene, display, rig, frames = _load(args)
    if args.dataset:
        datasets = load_datasets_csv(args.dataset)
    else:
        datasets = _collect(args, scene, display, rig, frames)
    model = train_model(scene, display, frames, datasets, _config(args), args.hidden_sizes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_datasets_csv(out / "dataset.csv", datasets)
    artifacts = ["dataset.csv", "manifest.json", "table1.csv", "table2.csv", "report.txt"]
    for name in NETWORKS:
        res = model.selections[name].best.result
        _write_csv(out / f"{name}.csv", ["epoch", "E_T", "E_V"],
                   [[i, repr(a), repr(b)] for i, (a, b) in
                    enumerate(zip(res.train_history, res.validation_history))])
        artifacts += [f"{name}.csv", f"{name}.model"]
        print(f"{name}: s={res.arch.hidden} N={res.epochs} T={int(round(res.seconds))}s "
              f"E_T={res.train_error:.3g} E_V={res.validation_error:.3g}")
    save_bundle(out, model, {"training": {"seed": args.seed, "instances": args.instances,
                                           "hidden_sizes": list(args.hidden_sizes),
                                           "restarts": args.restarts, "target": args.target}})
    t1, t2 = _table_rows(model)
    _write_csv(out / "table1.csv", TABLE1_HEADER, t1)
    _write_csv(out / "table2.csv", TABLE2_HEADER, t2)
    (out / "report.txt").write_text(format_report(out))
    _write_run(out / "run.json", args, artifacts, scene_fingerprint=scene.fingerprint())
    return 0


def format_report(bundle: Path) -> str:
    def rows(name):
        try:
            with open(bundle / name, newline="") as fh:
                return list(csv.DictReader(fh))
        except OSError as exc:
            raise FormatError(f"cannot read {bundle / name}: {exc}") from exc

    t1, t2 = rows("table1.csv"), rows("table2.csv")
    lines = ["TRAINING AND VALIDATION ERRORS",
             f"{'network':8} {'s':>2} {'a':>12} {'b':>10} {'R2':>10} {'E_T':>12} {'E_V':>12}"]
    for r in t1:
        mark = " *" if r["selected"] == "1" else ""
        lines.append(f"{r['network']:8} {r['s']:>2} {float(r['a']):12.6g} {float(r['b']):10.6g} "
                     f"{float(r['r2']):10.6g} {float(r['E_T']):12.6g} {float(r['E_V']):12.6g}{mark}")
    lines += ["", "TRAINING RESULT VARIABLES",
              f"{'network':8} {'s':>2} {'N':>5} {'|zeta*|':>12} {'|grad e(zeta*)|':>16}"]
    for r in t2:
        lines.append(f"{r['network']:8} {r['s']:>2} {r['N']:>5} {float(r['param_norm']):12.6g} "
                     f"{float(r['grad_norm']):16.6g}")
    lines += ["", "TEST-SPLIT REGRESSION (selected networks, outputs = a + b * targets)"]
    for r in t1:
        if r["selected"] == "1":
            lines.append(f"{r['network']:8} a={float(r['a']):.6g} b={float(r['b']):.6g} "
                         f"R2={float(r['r2']):.6g}")
    lines += ["", "history files: " + ", ".join(f"{n}.csv" for n in NETWORKS)]
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    bundle = Path(args.bundle)
    load_bundle(bundle)
    text = format_report(bundle)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_tree_stats(args) -> int:
    scene, display, rig, frames = _load(args)
    cap = capture_background(scene, rig, frames)
    rows = []
    for corner in args.corner or CORNERS:
        tree = cap.trees[corner]
        a = cap.cloud.angles[corner][cap.cloud.defined]
        rng = substream(args.seed, "queries", corner)
        q = np.column_stack([rng.uniform(a[:, 0].min(), a[:, 0].max(), args.queries),
                             rng.uniform(a[:, 1].min(), a[:, 1].max(), args.queries)])
        prof = visited_profile(tree, q)
        rows.append([corner, tree.size, tree.depth, prof["min"], prof["median"], prof["max"]])
        print(f"{corner}: size={tree.size} depth={tree.depth} visited min={prof['min']} "
              f"median={prof['median']:g} max={prof['max']}")
    if args.out:
        _write_csv(Path(args.out), ["corner", "size", "depth", "min", "median", "max"], rows)
    return 0


def cmd_frame_render(args) -> int:
    scene, display, rig, frames = _load(args)
    model, _ = load_bundle(args.model)
    op = np.array([args.x, args.y, args.z])
    if not model.display.is_front(op):
        raise CamoError(f"observation point {tuple(op.tolist())} is behind the display plane")
    cap = capture_background(scene, rig, model.frames)
    fr = run_frame(model, scene, cap, op, args.raster)
    write_ppm(args.out, fr.image)
    mae = concealment_error(fr, model.display, scene, op)
    print(f"wrote {args.out}: concealment error {mae:.3f}"
          + (" (low confidence)" if fr.low_confidence else ""))
    return 0


def cmd_sweep(args) -> int:
    scene, display, rig, frames = _load(args)
    model, _ = load_bundle(args.model)
    cap = capture_background(scene, rig, model.frames)
    a, b = np.array(args.start), np.array(args.end)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, artifacts = [], ["concealment.csv"]
    for k in range(args.frames):
        f = k / (args.frames - 1) if args.frames > 1 else 0.0
        op = (1 - f) * a + f * b
        fr = run_frame(model, scene, cap, op, args.raster)
        name = f"frame_{k:03d}.ppm"
        write_ppm(out / name, fr.image)
        artifacts.append(name)
        mae = concealment_error(fr, model.display, scene, op)
        rows.append([k, repr(float(op[0])), repr(float(op[1])), repr(float(op[2])), repr(mae),
                     int(fr.low_confidence), int(fr.extrapolated)])
    _write_csv(out / "concealment.csv",
               ["frame", "op_x", "op_y", "op_z", "mae", "low_confidence", "extrapolated"], rows)
    _write_run(out / "run.json", args, artifacts, scene_fingerprint=scene.fingerprint())
    print(f"{args.frames} frames -> {out}; mean concealment error "
          f"{np.mean([float(r[4]) for r in rows]):.3f}")
    return 0


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rgbd-camo", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, scene=True, seed=False, train=False):
        if scene:
            sp.add_argument("--scene", required=True)
            sp.add_argument("--depth-size", type=_size, default=(512, 424))
            sp.add_argument("--color-size", type=_size, default=(1280, 720))
        if seed or train:
            sp.add_argument("--seed", type=int, default=0)
            sp.add_argument("--instances", type=int, default=35)
            sp.add_argument("--target", choices=("shadow", "cloud"), default="shadow")
        if train:
            sp.add_argument("--hidden-sizes", type=_sizes, default=[2, 3, 4])
            sp.add_argument("--restarts", type=int, default=5)
            sp.add_argument("--threads", type=int, default=1)

    def group(name):
        g = sub.add_parser(name).add_subparsers(dest="action", required=True)
        return g

    sc = group("scene").add_parser("gen")
    sc.add_argument("--preset", choices=PRESETS, default="planar")
    sc.add_argument("--out", required=True)
    sc.set_defaults(func=cmd_scene_gen, _name="scene gen")

    cb = group("cloud").add_parser("build")
    common(cb)
    cb.add_argument("--out", required=True)
    cb.set_defaults(func=cmd_cloud_build, _name="cloud build")

    dc = group("dataset").add_parser("collect")
    common(dc, seed=True)
    dc.add_argument("--out", required=True)
    dc.set_defaults(func=cmd_dataset_collect, _name="dataset collect")

    tr = sub.add_parser("train")
    common(tr, train=True)
    tr.add_argument("--dataset")
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_train, _name="train")

    rp = sub.add_parser("report")
    rp.add_argument("bundle")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report, _name="report")

    ts = group("tree").add_parser("stats")
    common(ts)
    ts.add_argument("--seed", type=int, default=0)
    ts.add_argument("--queries", type=int, default=1000)
    ts.add_argument("--corner", action="append", choices=CORNERS)
    ts.add_argument("--out")
    ts.set_defaults(func=cmd_tree_stats, _name="tree stats")

    fr = group("frame").add_parser("render")
    fr.add_argument("x", type=float)
    fr.add_argument("y", type=float)
    fr.add_argument("z", type=float)
    common(fr)
    fr.add_argument("--model", required=True)
    fr.add_argument("--raster", type=_size, default=(640, 360))
    fr.add_argument("--out", required=True)
    fr.set_defaults(func=cmd_frame_render, _name="frame render")

    sw = sub.add_parser("sweep")
    common(sw)
    sw.add_argument("--model", required=True)
    sw.add_argument("--start", type=_point, default=(-0.25, 0.0, -1.6))
    sw.add_argument("--end", type=_point, default=(0.25, 0.1, -1.6))
    sw.add_argument("--frames", type=int, default=5)
    sw.add_argument("--raster", type=_size, default=(640, 360))
    sw.add_argument("--out", required=True)
    sw.set_defaults(func=cmd_sweep, _name="sweep")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FormatError, OSError) as exc:
        print(f"rgbd-camo: invalid file: {exc}", file=sys.stderr)
        return 3
    except (CamoError, ValueError, FloatingPointError, ArithmeticError) as exc:
        print(f"rgbd-camo: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
