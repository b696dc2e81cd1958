"""Command-line pipeline driver.

Subcommands: simulate, predict, train-ego, eval, report. Every command
validates and loads all inputs before creating any file, then writes its
artifacts in one deferred pass; if anything fails, files created so far
are removed and a single-line `error: ...` goes to stderr with a nonzero
exit status. Identical argv + seed produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import figures
from .fileio import (
    frame_file_names,
    read_bundle,
    read_segmentation,
    read_trajectory,
    write_bundle_manifest,
    write_depth,
    write_intrinsics,
    write_segmentation,
    write_trajectory,
)
from .forecast import (
    DEFAULT_HISTORY,
    TrainConfig,
    TrajectoryHistory,
    forecast_rollout,
    load_checkpoint,
    lstm_train,
    save_checkpoint,
)
from .geometry import EgoMotionVector
from .metrics import error_map, evaluate, format_report
from .simulator import (
    default_camera,
    default_trajectory,
    generate_sequence,
    load_scene_spec,
    street_canyon,
    thread_count,
    trajectory_motions,
)
from .warp import predict_future

EVAL_CSV_HEADER = "method,transforms,mean_iou,pixel_accuracy,considered,pred_missing"


class _OutputSet:
    """Deferred writes: nothing touches the filesystem until commit(), and a
    failing commit removes everything it managed to create."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self._writes: list[tuple[Path, object]] = []

    def add(self, name: str, writer) -> Path:
        path = self.directory / name
        self._writes.append((path, writer))
        return path

    def commit(self) -> None:
        created_dir = not self.directory.exists()
        self.directory.mkdir(parents=True, exist_ok=True)
        written = []
        try:
            for path, writer in self._writes:
                writer(path)
                written.append(path)
        except BaseException:
            for path in written:
                path.unlink(missing_ok=True)
            if created_dir:
                try:
                    self.directory.rmdir()
                except OSError:
                    pass
            raise


def _text_writer(text: str):
    return lambda path: Path(path).write_text(text, encoding="ascii")


# ---------------------------------------------------------------------------
# simulate

def _cmd_simulate(args) -> None:
    if args.scene is not None:
        scene, trajectory, camera = load_scene_spec(args.scene)
        if camera is None:
            camera = default_camera()
    else:
        scene = street_canyon()
        trajectory = default_trajectory()
        camera = default_camera()
    if args.steps is not None:
        trajectory = type(trajectory)(
            kind=trajectory.kind, num_steps=args.steps,
            noise_sigma=trajectory.noise_sigma, velocity=trajectory.velocity,
            acceleration=trajectory.acceleration, total_angle=trajectory.total_angle,
            step_translation=trajectory.step_translation)

    frames = generate_sequence(scene, trajectory, camera, seed=args.seed)
    exact = trajectory_motions(trajectory)

    out = _OutputSet(args.out)
    out.add("intrinsics.txt", lambda p: write_intrinsics(p, camera))
    out.add("trajectory.csv", lambda p: write_trajectory(p, exact))
    if np.any(trajectory.noise_sigma > 0.0):
        measured = [fr.motion_to_next for fr in frames[:-1]]
        out.add("trajectory_est.csv", lambda p: write_trajectory(p, measured))
    for i, frame in enumerate(frames):
        seg_name, depth_name = frame_file_names(i)
        out.add(seg_name, lambda p, s=frame.segmentation: write_segmentation(p, s))
        out.add(depth_name, lambda p, d=frame.depth: write_depth(p, d))
    out.add("bundle.json", lambda p: write_bundle_manifest(
        p.parent, scene.num_classes, len(frames), camera.width, camera.height))
    out.commit()
    print(f"simulated {len(frames)} frames into {args.out}")


# ---------------------------------------------------------------------------
# predict

def _resolve_motions(args, bundle) -> list[EgoMotionVector]:
    source = args.ego
    frame, steps = args.frame, args.steps
    if source == "file" or source.startswith("file:"):
        if source == "file":
            motions = list(bundle.motions)
        else:
            motions = read_trajectory(source.split(":", 1)[1])
        if frame + steps > len(motions):
            raise ValueError(
                f"trajectory has {len(motions)} motions; need rows "
                f"{frame}..{frame + steps - 1} for --frame {frame} --steps {steps}")
        return motions[frame:frame + steps]
    if source == "copy":
        if frame < 1 or frame > len(bundle.motions):
            raise ValueError(
                f"copy forecast needs the motion into frame {frame}; "
                f"trajectory has {len(bundle.motions)} motions")
        return [bundle.motions[frame - 1]] * steps
    if source.startswith("lstm:"):
        model = load_checkpoint(source.split(":", 1)[1])
        history_len = args.history
        if frame < history_len:
            raise ValueError(
                f"lstm forecast needs {history_len} motions of history; "
                f"frame {frame} has only {frame}")
        window = bundle.motions[frame - history_len:frame]
        return forecast_rollout(model, TrajectoryHistory(tuple(window)), steps)
    raise ValueError(f"unknown ego source {source!r} (use file, copy, or lstm:<ckpt>)")


def _cmd_predict(args) -> None:
    bundle = read_bundle(args.bundle)
    if not 0 <= args.frame < len(bundle.frames):
        raise ValueError(
            f"frame {args.frame} outside bundle (has {len(bundle.frames)} frames)")
    depth, seg = bundle.load_frame(args.frame)
    motions = _resolve_motions(args, bundle)
    sequence = predict_future(depth, seg, bundle.intrinsics, motions,
                              inpaint_enabled=args.inpaint)

    out = _OutputSet(args.out)
    out.add("trajectory.csv", lambda p: write_trajectory(p, motions))
    for step in sequence.steps:
        out.add(f"pred_step{step.index}.pgm",
                lambda p, s=step.inpainted: write_segmentation(p, s))
        if args.inpaint:
            out.add(f"pred_step{step.index}_raw.pgm",
                    lambda p, s=step.raw.segmentation: write_segmentation(p, s))
    out.commit()
    print(f"predicted {len(sequence.steps)} steps from frame {args.frame} "
          f"into {args.out}")


# ---------------------------------------------------------------------------
# train-ego

def _collect_trajectories(paths) -> list[Path]:
    files = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            found = sorted(p.glob("*.csv"))
            if not found:
                raise ValueError(f"{p}: directory contains no *.csv trajectories")
            files.extend(found)
        elif p.is_file():
            files.append(p)
        else:
            raise ValueError(f"{p}: no such trajectory file or directory")
    return files


def _sliding_windows(motions, history_len):
    for start in range(len(motions) - history_len):
        hist = TrajectoryHistory(tuple(motions[start:start + history_len]))
        yield hist, motions[start + history_len]


def _cmd_train_ego(args) -> None:
    files = _collect_trajectories(args.data)
    dataset = []
    for path in files:
        motions = read_trajectory(path)
        dataset.extend(_sliding_windows(motions, args.history))
    if not dataset:
        raise ValueError(
            f"no training windows: need trajectories longer than {args.history} motions")
    cfg = TrainConfig(lr_start=args.lr_start, lr_end=args.lr_end,
                      momentum=args.momentum, total_steps=args.steps,
                      batch_size=args.batch, seed=args.seed)
    result = lstm_train(dataset, cfg)

    curve_lines = ["step,loss"]
    curve_lines += [f"{i},{loss!r}" for i, loss in enumerate(result.loss_curve)]
    out = _OutputSet(args.out)
    out.add(args.checkpoint, lambda p: save_checkpoint(result.model, p))
    out.add("loss_curve.csv", _text_writer("\n".join(curve_lines) + "\n"))
    out.commit()
    print(f"trained on {len(dataset)} windows for {args.steps} steps; "
          f"final loss {result.loss_curve[-1]:.6f}; "
          f"checkpoint {Path(args.out) / args.checkpoint}")


# ---------------------------------------------------------------------------
# eval

def _cmd_eval(args) -> None:
    pred = read_segmentation(args.pred, args.num_classes)
    gt = read_segmentation(args.gt, args.num_classes)
    report = evaluate(pred, gt, ignore_missing=args.ignore_missing)
    errors = error_map(pred, gt)

    row = (f"{args.method},{args.transforms},{report.mean_iou!r},"
           f"{report.pixel_accuracy!r},{report.considered},{report.pred_missing}")
    out = _OutputSet(args.out)
    out.add("report.txt", _text_writer(format_report(report)))
    out.add("report_row.csv", _text_writer(EVAL_CSV_HEADER + "\n" + row + "\n"))
    out.add("error_map.png", lambda p: figures.save_error_map_figure(
        errors, p, title=f"{args.method}, {args.transforms} transforms"))
    out.commit()
    print(f"mean_iou {report.mean_iou:.4f} pixel_accuracy "
          f"{report.pixel_accuracy:.4f} -> {args.out}")


# ---------------------------------------------------------------------------
# report

def _read_eval_rows(paths) -> list[tuple[str, int, float, float]]:
    rows = []
    for raw in paths:
        candidates = []
        p = Path(raw)
        if p.is_dir():
            candidates = sorted(p.rglob("report_row.csv"))
            if not candidates:
                raise ValueError(f"{p}: no report_row.csv files found")
        elif p.is_file():
            candidates = [p]
        else:
            raise ValueError(f"{p}: no such eval row file or directory")
        for path in candidates:
            lines = path.read_text(encoding="ascii").strip().split("\n")
            if not lines or lines[0] != EVAL_CSV_HEADER:
                raise ValueError(f"{path}: not an eval row file")
            for line in lines[1:]:
                fields = line.split(",")
                if len(fields) != 6:
                    raise ValueError(f"{path}: malformed row {line!r}")
                rows.append((fields[0], int(fields[1]),
                             float(fields[2]), float(fields[3])))
    return rows


def _cmd_report(args) -> None:
    rows = _read_eval_rows(args.inputs)
    if not rows:
        raise ValueError("no eval rows to aggregate")
    methods = sorted({r[0] for r in rows})
    horizons = sorted({r[1] for r in rows}, reverse=True)  # deepest first
    cells = {(r[0], r[1]): r[2] for r in rows}

    lines = ["transforms," + ",".join(methods)]
    for h in horizons:
        vals = [repr(cells[(m, h)]) if (m, h) in cells else "" for m in methods]
        lines.append(f"{h}," + ",".join(vals))
    table_text = "\n".join(lines) + "\n"

    series = {m: [cells[(m, h)] for h in sorted(horizons)] for m in methods
              if all((m, h) in cells for h in horizons)}
    out = _OutputSet(args.out)
    out.add("report.csv", _text_writer(table_text))
    if series:
        out.add("report.png", lambda p: figures.save_iou_curve_figure(
            sorted(horizons), series, p))
    out.commit()
    print(table_text, end="")


# ---------------------------------------------------------------------------
# parser / entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: arguments: {message}", file=sys.stderr)
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="futureseg3d",
                     description="Future semantic segmentation via 3D warping")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic frame bundle")
    p.add_argument("--scene", help="scene spec JSON (default: built-in street canyon)")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--steps", type=int, help="override trajectory step count")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("predict", help="warp a bundle frame into the future")
    p.add_argument("--bundle", required=True, help="input bundle directory")
    p.add_argument("--frame", type=int, default=0, help="start frame index")
    p.add_argument("--steps", type=int, required=True, help="prediction steps")
    p.add_argument("--ego", default="file",
                   help="motion source: file | file:<csv> | copy | lstm:<ckpt>")
    p.add_argument("--history", type=int, default=DEFAULT_HISTORY,
                   help="history length for the lstm source")
    p.add_argument("--inpaint", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("train-ego", help="train the ego-motion forecaster")
    p.add_argument("--data", nargs="+", required=True,
                   help="trajectory CSV files or directories of them")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--checkpoint", default="ego_lstm.ckpt",
                   help="checkpoint file name inside --out")
    p.add_argument("--history", type=int, default=DEFAULT_HISTORY)
    p.add_argument("--steps", type=int, default=50_000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr-start", type=float, default=5e-2)
    p.add_argument("--lr-end", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_ego)

    p = sub.add_parser("eval", help="score a prediction against ground truth")
    p.add_argument("--pred", required=True, help="predicted segmentation PGM")
    p.add_argument("--gt", required=True, help="ground-truth segmentation PGM")
    p.add_argument("--num-classes", type=int, required=True)
    p.add_argument("--ignore-missing", action="store_true",
                   help="exclude prediction holes instead of counting them wrong")
    p.add_argument("--method", default="model", help="label stored in the CSV row")
    p.add_argument("--transforms", type=int, default=1,
                   help="motion transform count stored in the CSV row")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="aggregate eval rows into a horizon table")
    p.add_argument("--inputs", nargs="+", required=True,
                   help="eval row CSVs or directories containing them")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        thread_count()  # fail fast on a bad env setting
        args.func(args)
    except Exception as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
