"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import se3
from .checkpoint import MAGIC as CKPT_MAGIC, load_checkpoint, save_checkpoint
from .curation import CurationConfig, read_stream, run_pipeline
from .errors import NumericFailure, PosecastError
from .formats import OFPC_MAGIC, atomic_write_bytes, iter_ofpc, read_windows, write_windows
from .metrics import MetricReport, baseline_constant_pose, baseline_constant_velocity, evaluate, evaluate_batch
from .model import ForecastNet, ModelConfig, gradient_check
from .synth import DatasetConfig, generate_dataset, generate_stream
from .trainer import TrainConfig, ablation_sweep, evaluate_model, grid_csv, sample_windows, train

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _load_json(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _configs(args) -> tuple[ModelConfig, TrainConfig]:
    raw = _load_json(args.config)
    model = dict(raw.get("model", {}))
    tr = dict(raw.get("train", {}))
    for key in ("C", "H"):
        if getattr(args, key, None) is not None:
            model[key] = tr[key] = getattr(args, key)
        else:
            model.setdefault(key, tr.get(key, 3 if key == "C" else 8))
            tr.setdefault(key, model[key])
    if getattr(args, "steps", None) is not None:
        tr["steps"] = args.steps
    if getattr(args, "seed", None) is not None:
        tr["seed"] = args.seed
    return ModelConfig.from_dict(model), TrainConfig.from_dict(tr)


# ------------------------------------------------------------------ commands

def cmd_synth_gen(args) -> int:
    out = Path(args.out)
    if args.stream:
        out.mkdir(parents=True, exist_ok=True)
        recs = generate_stream(args.stream, args.seed, n_points=args.points,
                               points_path=out / "stream.ofpc" if args.points else None)
        _write_text(out / "stream.jsonl", "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in recs))
        print(f"wrote {len(recs)} frame records to {out / 'stream.jsonl'}")
        return 0
    raw = _load_json(args.config)
    if args.count is not None:
        raw["count"] = args.count
    if args.C is not None:
        raw["C"] = args.C
    if args.H is not None:
        raw["H"] = args.H
    cfg = DatasetConfig.from_dict(raw)
    path = generate_dataset(cfg, args.seed, out, jobs=args.jobs)
    print(f"wrote {cfg.count} windows to {path}")
    return 0


def cmd_curate(args) -> int:
    clips = read_stream(args.stream)
    cfg = CurationConfig(C=args.C or 3, H=args.H or 8)
    windows, funnel = run_pipeline(clips, cfg, base_dir=Path(args.stream).parent)
    out = Path(args.out)
    write_windows(out / "windows.jsonl", windows)
    _write_text(out / "funnel.csv", funnel.to_csv())
    print(f"kept {len(windows)} windows from {len(clips)} clips")
    return 0


def cmd_train(args) -> int:
    mc, tc = _configs(args)
    windows = read_windows(args.data)

    def progress(step, row):
        if args.verbose and step % 100 == 0:
            print(f"step {step} loss {row['loss']:.6f}", file=sys.stderr)

    res = train(windows, mc, tc, progress=progress)
    out = Path(args.out)
    save_checkpoint(out / "checkpoint.ofck", res.model, res.stats, tc.seed, {"train": tc.to_dict()})
    _write_text(out / "curve.csv", res.curve_csv())
    last = res.curve[-1]["loss"] if res.curve else float("nan")
    print(f"trained {tc.steps} steps, final loss {last:.6f}")
    return 0


def _pick_window(windows, key: str):
    for w in windows:
        if w.clip_id == key:
            return w
    try:
        return windows[int(key)]
    except (ValueError, IndexError):
        raise PosecastError(f"no window with id or index {key!r}")


def overlay_svg(window, samples, width=None, height=None) -> str:
    """SVG of projected object centres and axes; later steps fade out."""
    fx, fy, cx, cy = window.intrinsics
    width = width or int(round(2 * cx))
    height = height or int(round(2 * cy))

    def proj(p):
        return fx * p[0] / p[2] + cx, fy * p[1] / p[2] + cy

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']

    def polyline(poses, color, dash=""):
        pts = " ".join("%.2f,%.2f" % proj(se3.translation_of(p)) for p in poses)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{extra}/>')

    polyline(window.context_poses, "#444444")
    polyline(np.concatenate([window.context_poses[-1:], window.future_poses]), "#888888", "4 3")
    axis_len = 0.05
    colors = ("#d62728", "#2ca02c", "#1f77b4")
    for traj in samples:
        H = len(traj)
        for k, pose in enumerate(traj):
            opacity = 1.0 - 0.8 * k / max(H - 1, 1)
            o = se3.translation_of(pose)
            if o[2] <= 0:
                continue
            x0, y0 = proj(o)
            for a, col in enumerate(colors):
                tip = o + axis_len * se3.rotation_of(pose)[:, a]
                if tip[2] <= 0:
                    continue
                x1, y1 = proj(tip)
                parts.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
                             f'stroke="{col}" stroke-width="2" stroke-opacity="{opacity:.3f}"/>')
            parts.append(f'<circle cx="{x0:.2f}" cy="{y0:.2f}" r="3" fill="black" fill-opacity="{opacity:.3f}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_sample(args) -> int:
    model, stats, _ = load_checkpoint(args.checkpoint)
    window = _pick_window(read_windows(args.data), args.window)
    window = window.with_lengths(model.config.C, min(window.H, model.config.H))
    samples = sample_windows(model, stats, [window], args.seed, args.samples)[0]
    doc = {
        "clip_id": window.clip_id,
        "seed": args.seed,
        "samples": [[[float(x) for x in se3.pose_to_vec9(p)] for p in s] for s in samples],
        "ground_truth": [[float(x) for x in se3.pose_to_vec9(p)] for p in window.future_poses],
        "pose_layout": "x,y,z,a1,a2,a3,b1,b2,b3",
    }
    out = Path(args.out)
    _write_text(out / "trajectory.json", json.dumps(doc, indent=1) + "\n")
    _write_text(out / "overlay.svg", overlay_svg(window, samples))
    print(f"wrote {args.samples} sample(s) for {window.clip_id}")
    return 0


def cmd_eval(args) -> int:
    windows = read_windows(args.data)
    if args.baseline:
        fn = baseline_constant_pose if args.baseline == "constant-pose" else baseline_constant_velocity
        report = evaluate_batch(windows, lambda w, s: fn(w), args.seed)
    else:
        if not args.checkpoint:
            raise PosecastError("eval needs --checkpoint or --baseline")
        model, stats, _ = load_checkpoint(args.checkpoint)
        windows = [w.with_lengths(model.config.C, min(w.H, model.config.H)) for w in windows]
        report = evaluate_model(model, stats, windows, args.seed, args.samples)
    out = Path(args.out)
    _write_text(out / "metrics.csv", report.to_csv())
    _write_text(out / "metrics.json", report.to_json())
    print(report.to_csv(), end="")
    return 0


def cmd_ablate(args) -> int:
    mc, tc = _configs(args)
    train_w = read_windows(args.data)
    eval_w = read_windows(args.eval_data) if args.eval_data else train_w
    header, rows = ablation_sweep(train_w, eval_w, args.C_list, args.H_list, mc, tc)
    out = Path(args.out)
    _write_text(out / "ablation.csv", grid_csv(header, rows))
    print(f"wrote {len(rows)} rows to {out / 'ablation.csv'}")
    return 0


def cmd_gradcheck(args) -> int:
    raw = _load_json(args.config)
    cfg = ModelConfig.from_dict(raw.get("model", raw) or {"width": 64, "depth": 2, "n_points": 64, "d_ctx": 64})
    from .gradcheck import full_model_gradcheck

    res = full_model_gradcheck(cfg, seed=args.seed, n_probes=args.probes)
    print(json.dumps({"max_rel_error": res["max_rel_error"], "probes": len(res["probes"])}))
    if not np.isfinite(res["max_rel_error"]):
        raise NumericFailure("gradient check produced a non-finite error")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.file)
    data = path.read_bytes()
    if data[:4] == CKPT_MAGIC:
        model, stats, header = load_checkpoint(path)
        print(f"checkpoint: {model.n_parameters()} parameters in {len(header['params'])} arrays")
        print(json.dumps({k: header[k] for k in ("config", "stats", "schedule", "seed", "meta")}, indent=2))
    elif data[:4] == OFPC_MAGIC:
        for off, pts in iter_ofpc(data):
            lo, hi = pts[:, :3].min(axis=0), pts[:, :3].max(axis=0)
            print(f"block @{off}: {len(pts)} points, xyz min {np.round(lo, 4).tolist()} max {np.round(hi, 4).tolist()}")
    elif path.suffix == ".jsonl":
        try:
            windows = read_windows(path)
        except PosecastError:
            lines = [ln for ln in data.decode("utf-8").splitlines() if ln.strip()]
            print(f"{len(lines)} JSON records; first keys: {sorted(json.loads(lines[0]))}" if lines else "empty")
            return 0
        print(f"{len(windows)} windows")
        for w in windows[: args.limit]:
            print(f"  {w.clip_id}: C={w.C} H={w.H} fps={w.fps} points={len(w.anchor_points)} label={w.label} "
                  f"anchor t={np.round(se3.translation_of(w.anchor_pose), 4).tolist()}")
    else:
        print(data.decode("utf-8", errors="replace"), end="")
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="posecast", description="Object pose forecasting toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=1)
        if out:
            sp.add_argument("--out", required=True)
        return sp

    sp = common(sub.add_parser("synth-gen", help="generate a synthetic dataset or detection stream"))
    sp.add_argument("--config")
    sp.add_argument("--count", type=int)
    sp.add_argument("--C", type=int)
    sp.add_argument("--H", type=int)
    sp.add_argument("--stream", type=int, default=0, metavar="N_CLIPS",
                    help="emit a detection stream of N clips instead of windows")
    sp.add_argument("--points", type=int, default=0, help="points per frame for --stream clouds")
    sp.set_defaults(fn=cmd_synth_gen)

    sp = common(sub.add_parser("curate", help="curate a detection stream into windows"))
    sp.add_argument("--stream", required=True)
    sp.add_argument("--C", type=int)
    sp.add_argument("--H", type=int)
    sp.set_defaults(fn=cmd_curate)

    sp = common(sub.add_parser("train", help="train a forecaster"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--config")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--C", type=int)
    sp.add_argument("--H", type=int)
    sp.set_defaults(fn=cmd_train)

    sp = common(sub.add_parser("sample", help="sample forecasts for one window"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--window", default="0", help="clip id or index")
    sp.add_argument("--samples", type=int, default=1)
    sp.set_defaults(fn=cmd_sample)

    sp = common(sub.add_parser("eval", help="evaluate a checkpoint or baseline"))
    sp.add_argument("--data", required=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--baseline", choices=("constant-pose", "constant-velocity"))
    sp.add_argument("--samples", type=int, default=1, help="best-of-N draws per window")
    sp.set_defaults(fn=cmd_eval)

    sp = common(sub.add_parser("ablate", help="context/horizon ablation grid"))
    sp.add_argument("--data", required=True, help="training windows built with the largest C and H")
    sp.add_argument("--eval-data", dest="eval_data")
    sp.add_argument("--config")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--C", dest="C_list", type=_int_list, required=True)
    sp.add_argument("--H", dest="H_list", type=_int_list, required=True)
    sp.set_defaults(fn=cmd_ablate)

    sp = common(sub.add_parser("gradcheck", help="finite-difference check of the full model"), out=False)
    sp.add_argument("--config")
    sp.add_argument("--probes", type=int, default=200)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("inspect", help="human-readable dump of a file")
    sp.add_argument("file")
    sp.add_argument("--limit", type=int, default=10)
    sp.set_defaults(fn=cmd_inspect)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "samples", 1) < 1 or getattr(args, "jobs", 1) < 1:
        parser.error("--samples and --jobs must be >= 1")
    try:
        return args.fn(args)
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PosecastError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
