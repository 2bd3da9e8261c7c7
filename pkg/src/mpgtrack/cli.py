"""Command-line front end: ``mpgtrack {synth,track,eval,grid}``.

Exit codes: 0 success (a diverged but valid tracking run included), 1 usage
error, 2 data error.
"""

import argparse
import csv
import hashlib
import json
import logging
from pathlib import Path
import sys
import time

import numpy as np

from . import __version__
from .camera import load_camera
from .errors import InvalidInputError, MpgTrackError, SchemaError
from .frames import load_keypoints, save_keypoints
from .kinematics import Pose, forward_kinematics, load_skeleton, select_keypoints
from .metrics import MetricsReport, acceleration, average_chamfer, body_points, mpjpe_family
from .mpg import MpgConfig
from .scene import load_scene, occupancy_grid, penetration_metrics
from .synthdata import NoiseConfig, load_motion, synthesize_keypoints
from .tracker import TrackerConfig, load_config, load_pose_records, save_reports, track

log = logging.getLogger("mpgtrack")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _digest(obj):
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _write_manifest(out, command, inputs, outputs, config, seed, started):
    manifest = {
        "command": command,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "outputs": [str(p) for p in outputs],
        "config_digest": _digest(config),
        "seed": seed,
        "version": __version__,
        "duration_s": round(time.perf_counter() - started, 6),
    }
    path = Path(f"{out}.manifest.json")
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def _load_pose_file(path):
    """Poses from a motion file (header line) or a tracker output file."""
    first = next((ln for ln in Path(path).read_text().splitlines() if ln.strip()), "")
    try:
        head = json.loads(first)
    except json.JSONDecodeError:
        head = None
    if isinstance(head, dict) and "frame_rate" in head:
        return list(load_motion(path).poses)
    if isinstance(head, list) and len(head) == 75:
        return [Pose.from_vector(head)]
    return load_pose_records(path)


def _tracker_config(args):
    cfg = load_config(args.config) if args.config else TrackerConfig()
    mpg = cfg.mpg.to_dict()
    if args.mpg_steps is not None:
        mpg["steps"] = args.mpg_steps
    if args.mpg_step_size is not None:
        mpg["step_size"] = args.mpg_step_size
    data = cfg.to_dict()
    data["mpg"] = MpgConfig.from_dict(mpg)
    if args.no_orientation_blend:
        data["apply_orientation_delta"] = False
    if args.scene_clamp:
        data["scene_clamp"] = True
    return TrackerConfig(**data)


def cmd_synth(args):
    started = time.perf_counter()
    seq = load_motion(args.motion)
    camera = load_camera(args.camera)
    tree = load_skeleton(args.skeleton)
    noise = NoiseConfig(
        pixel_noise_std=args.noise_std, dropout_probability=args.noise_dropout,
        confidence_mode=args.noise_confidence, rng_seed=args.seed,
    )
    frames = synthesize_keypoints(seq, tree, camera, noise)
    save_keypoints(args.out, frames)
    config = {
        "pixel_noise_std": noise.pixel_noise_std, "dropout_probability": noise.dropout_probability,
        "confidence_mode": noise.confidence_mode,
    }
    _write_manifest(args.out, "synth", {"motion": args.motion, "camera": args.camera, "skeleton": args.skeleton},
                    [args.out], config, args.seed, started)
    log.info("wrote %d keypoint frames to %s", len(frames), args.out)
    return EXIT_OK


def cmd_track(args):
    started = time.perf_counter()
    frames = load_keypoints(args.keypoints)
    camera = load_camera(args.camera)
    tree = load_skeleton(args.skeleton)
    scene = load_scene(args.scene) if args.scene else None
    config = _tracker_config(args)
    init_pose = _load_pose_file(args.init)[0]
    references = None
    if args.reference:
        references = _load_pose_file(args.reference)
        if len(references) != len(frames):
            raise InvalidInputError(f"{args.reference}: {len(references)} poses for {len(frames)} keypoint frames")
    result = track(init_pose, frames, camera, scene, config, references=references, tree=tree)

    out = Path(args.out)
    save_reports(out, result.reports)
    summary_path = Path(f"{out}.summary.json")
    summary_path.write_text(json.dumps(result.summary, indent=1) + "\n")
    series_path = Path(f"{out}.series.csv")
    with series_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame", "loss_before", "loss_after", "deviation"])
        for r in result.reports:
            writer.writerow([r.frame, _cell(r.loss_before), _cell(r.loss_after), _cell(r.deviation)])
    _write_manifest(out, "track", {"keypoints": args.keypoints, "camera": args.camera, "scene": args.scene,
                                   "skeleton": args.skeleton, "init": args.init, "reference": args.reference},
                    [out, summary_path, series_path], config.to_dict(), args.seed, started)
    print(json.dumps({"success": result.summary["success"], "frames": result.summary["frames"]}))
    return EXIT_OK


def _cell(value):
    return "" if value is None else repr(float(value))


def _load_clouds(path):
    clouds = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        pts = np.asarray(json.loads(line), dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
            raise SchemaError(f"{path}: line {lineno}: expected a non-empty list of [x, y, z] points")
        clouds.append(pts)
    return clouds


def cmd_eval(args):
    started = time.perf_counter()
    tree = load_skeleton(args.skeleton)
    pred = _load_pose_file(args.pred)
    joints = np.stack([forward_kinematics(tree, p) for p in pred])
    kp = select_keypoints(joints)
    report = MetricsReport()
    per_frame = None
    if args.gt:
        gt = _load_pose_file(args.gt)
        if len(gt) != len(pred):
            raise InvalidInputError(f"{len(pred)} predicted poses but {len(gt)} ground-truth poses")
        gt_kp = select_keypoints(np.stack([forward_kinematics(tree, p) for p in gt]))
        fam = mpjpe_family(kp, gt_kp)
        report.mpjpe, report.pa_mpjpe, report.a_mpjpe = fam["mpjpe"], fam["pa_mpjpe"], fam["a_mpjpe"]
        per_frame = np.linalg.norm(kp - gt_kp, axis=-1).mean(axis=1) * 1000.0
        deviation = np.linalg.norm(joints - np.stack([forward_kinematics(tree, p) for p in gt]), axis=-1).mean(axis=1)
        report.success = bool(np.all(deviation <= args.threshold))
    if len(pred) >= 3:
        report.accel = acceleration(kp)
    else:
        report.notes.append("accel needs at least 3 frames")
    if args.cloud:
        clouds = _load_clouds(args.cloud)
        if len(clouds) != len(pred):
            raise InvalidInputError(f"{len(clouds)} point clouds for {len(pred)} poses")
        bodies = [body_points(j, tree.parents) for j in joints]
        report.acd = average_chamfer(clouds, bodies, direction=args.chamfer_direction)
    if args.penetration:
        if not args.scene:
            raise InvalidInputError("--penetration needs --scene")
        scene = load_scene(args.scene)
        pen = penetration_metrics(scene, joints)
        report.ground_penetration = pen.get("ground")
        report.scene_penetration = pen.get("scene", {"freq": pen["freq"], "pen": pen["pen"]})

    out = Path(args.out)
    out.write_text(report.to_json())
    table_path = Path(f"{out}.txt")
    table = report.to_table()
    table_path.write_text(table)
    outputs = [out, table_path]
    if per_frame is not None:
        series_path = Path(f"{out}.series.csv")
        with series_path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["frame", "a_mpjpe_mm", "deviation_m"])
            for i, (e, d) in enumerate(zip(per_frame, deviation)):
                writer.writerow([i, repr(float(e)), repr(float(d))])
        outputs.append(series_path)
    _write_manifest(out, "eval", {"pred": args.pred, "gt": args.gt, "cloud": args.cloud, "scene": args.scene,
                                  "skeleton": args.skeleton},
                    outputs, {"threshold": args.threshold, "chamfer_direction": args.chamfer_direction,
                              "penetration": args.penetration}, args.seed, started)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_grid(args):
    started = time.perf_counter()
    scene = load_scene(args.scene)
    grid = occupancy_grid(scene, np.asarray(args.position, dtype=float), args.heading, sigma=args.sigma)
    out = Path(args.out)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "z", "value"])
        for row in grid.rows():
            writer.writerow([repr(float(v)) for v in row])
    _write_manifest(out, "grid", {"scene": args.scene}, [out],
                    {"position": list(args.position), "heading": args.heading, "sigma": args.sigma},
                    args.seed, started)
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="mpgtrack", description="Absolute 3D pose tracking from 2D keypoints with MPG.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_help):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help=out_help)

    p = sub.add_parser("synth", help="project a motion file to noisy 2D keypoints")
    p.add_argument("motion")
    p.add_argument("--camera", required=True)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--noise.std", dest="noise_std", type=float, default=0.0, help="pixel noise std")
    p.add_argument("--noise.dropout", dest="noise_dropout", type=float, default=0.0,
                   help="per-keypoint dropout probability")
    p.add_argument("--noise.confidence", dest="noise_confidence", choices=("fixed", "uniform"), default="fixed")
    common(p, "keypoint JSONL output")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="track a keypoint file")
    p.add_argument("keypoints")
    p.add_argument("--camera", required=True)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--init", required=True, help="initial pose: motion file (first frame) or pose JSON array")
    p.add_argument("--scene")
    p.add_argument("--config", help="tracker config JSON")
    p.add_argument("--reference", help="reference poses for deviation and divergence")
    p.add_argument("--mpg.steps", dest="mpg_steps", type=int)
    p.add_argument("--mpg.step-size", dest="mpg_step_size", type=float)
    p.add_argument("--no-orientation-blend", action="store_true")
    p.add_argument("--scene-clamp", action="store_true")
    common(p, "pose JSONL output")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="compute metrics for predicted poses")
    p.add_argument("pred")
    p.add_argument("--skeleton", required=True)
    p.add_argument("--gt", help="ground-truth poses")
    p.add_argument("--cloud", help="JSONL of per-frame point clouds for chamfer distance")
    p.add_argument("--chamfer-direction", choices=("cloud_to_body", "body_to_cloud"), default="cloud_to_body")
    p.add_argument("--scene")
    p.add_argument("--penetration", action="store_true")
    p.add_argument("--threshold", type=float, default=0.3, help="divergence threshold, meters")
    common(p, "metrics JSON output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="dump the occupancy grid around a position")
    p.add_argument("--scene", required=True)
    p.add_argument("--position", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
    p.add_argument("--heading", type=float, default=0.0, help="radians about z")
    p.add_argument("--sigma", type=float, default=0.05)
    common(p, "CSV output")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return exc.code or EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
    except (MpgTrackError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: malformed input: {exc}", file=sys.stderr)
    return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
