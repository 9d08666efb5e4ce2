"""Command-line entry points.

Subcommands: gen-data (synthetic corpus), train (self-supervised training),
infer (mask propagation from a first-frame mask), eval (J/F report), and
analyze (offset visualization, PCA embedding image, receptive-field cosine
similarity). Report paths write delimited files plus rendered figures.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import dataio, viz
from .errors import PixmatchError
from .infer import run_sequence
from .metrics import build_report, evaluate_sequence, rf_cosine_similarity
from .model import embed_pair, frames_to_tensor, layer_sampling_locations, match_internals
from .synth import BACKGROUNDS, gen_sequence, make_random_scene
from .train import TrainConfig, train


def _parse_size(text: str):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from exc


def _parse_pixel(text: str):
    try:
        y, x = text.split(",")
        return int(y), int(x)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected Y,X, got {text!r}") from exc


def cmd_gen_data(args) -> int:
    out = viz.ensure_dir(args.out)
    h, w = args.size
    if h != w:
        raise PixmatchError("gen-data: only square canvases are supported")
    for i in range(args.num_sequences):
        spec = make_random_scene(seed=args.seed * 100003 + i, size=h, n_frames=args.frames,
                                 max_speed=args.motion, n_objects=args.objects,
                                 background=args.background)
        video = gen_sequence(spec, name=f"seq{i:04d}")
        dataio.write_sequence(out, video)
    print(f"wrote {args.num_sequences} sequences of {args.frames} frames at {h}x{w} to {out}")
    return 0


def cmd_train(args) -> int:
    overrides = dataio.read_config(args.config) if args.config else {}
    for key, val in (("variant", args.variant), ("epochs", args.epochs), ("seed", args.seed),
                     ("batch_size", args.batch_size), ("lr_init", args.lr), ("frame_gap", args.gap)):
        if val is not None:
            overrides[key] = str(val)
    dataset = dataio.read_dataset(args.data)
    h, w = dataset[0].size
    for v in dataset:
        if v.size != (h, w):
            raise PixmatchError(f"train: sequence {v.name!r} is {v.size}, expected {(h, w)}")
    overrides.setdefault("height", str(h))
    overrides.setdefault("width", str(w))
    cfg = TrainConfig.from_dict(overrides)

    def progress(epoch, loss):
        print(f"epoch {epoch + 1}/{cfg.epochs}  loss {loss:.6f}", flush=True)

    result = train(dataset, cfg, progress=progress)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    meta = {"epoch": cfg.epochs, "seed": cfg.seed, "loss": f"{result.epoch_losses[-1]:.8e}"}
    ckpt = dataio.checkpoint_from_params(result.params, result.state, meta=meta)
    dataio.save_checkpoint(out, ckpt)
    log_path = out.with_suffix(".log")
    log_path.write_text("".join(line + "\n" for line in result.log_lines))
    fig_path = out.with_name(out.stem + "_loss.png")
    viz.save_loss_figure(result.epoch_losses, fig_path)
    print(f"checkpoint {out}  log {log_path}  figure {fig_path}")
    print(f"final epoch loss {result.epoch_losses[-1]:.6f} ({result.seconds:.1f}s)")
    return 0


def _load_params(path):
    return dataio.params_from_checkpoint(dataio.load_checkpoint(path))


def cmd_infer(args) -> int:
    params = _load_params(args.ckpt)
    video = dataio.read_sequence(args.video)
    first_mask = dataio.load_mask(args.first_mask)
    timings = [] if args.time else None
    masks = run_sequence(params, video.frames, first_mask, timings=timings)
    out = viz.ensure_dir(args.out)
    for i, m in enumerate(masks):
        dataio.save_mask(out / f"{i:05d}.png", m.astype(np.uint8))
    print(f"wrote {len(masks)} masks to {out}")
    if args.time and timings:
        print(f"mean per-frame time: {1000.0 * float(np.mean(timings)):.1f} ms "
              f"over {len(timings)} propagated frames")
    return 0


def _find_pred_masks(pred_root: Path, name: str, count: int):
    seq = pred_root / name
    if (seq / "masks").is_dir():
        seq = seq / "masks"
    if not seq.is_dir():
        raise PixmatchError(f"eval: no predictions for sequence {name!r} under {pred_root}")
    masks = [dataio.load_mask(p) for p in sorted(seq.glob("*.png"))]
    if len(masks) != count:
        raise PixmatchError(f"eval: sequence {name!r} has {len(masks)} predicted masks, expected {count}")
    return masks


def cmd_eval(args) -> int:
    gt_root = Path(args.gt)
    pred_root = Path(args.pred)
    rows = []
    for video in dataio.read_dataset(gt_root):
        if video.masks is None or len(video.masks) != len(video.frames):
            continue  # sequences without full ground truth cannot be scored
        preds = _find_pred_masks(pred_root, video.name, len(video.frames))
        rows.extend(evaluate_sequence(preds, video.masks, tol=args.tol, name=video.name))
    if not rows:
        raise PixmatchError("eval: no sequences with full ground-truth masks found")
    attributes = dataio.read_attributes(args.attributes) if args.attributes else None
    report = build_report(rows, attributes=attributes)

    lines = [f"{'sequence':<20}{'object':>7}{'J':>8}{'F':>8}"]
    for r in report.rows:
        lines.append(f"{r.sequence:<20}{r.cls:>7}{r.j:>8.4f}{r.f:>8.4f}")
    lines.append(f"{'mean over sequences':<27}{report.j_mean:>8.4f}{report.f_mean:>8.4f}")
    if report.attribute_means:
        lines.append("")
        lines.append(f"{'attribute':<27}{'J':>8}{'F':>8}")
        for a, (j, f) in report.attribute_means.items():
            lines.append(f"{a:<27}{j:>8.4f}{f:>8.4f}")
    table = "\n".join(lines)
    print(table)

    if args.out:
        out = viz.ensure_dir(args.out)
        csv = ["sequence,object,j,f"]
        csv += [f"{r.sequence},{r.cls},{r.j:.6f},{r.f:.6f}" for r in report.rows]
        csv.append(f"ALL,,{report.j_mean:.6f},{report.f_mean:.6f}")
        (out / "report.csv").write_text("\n".join(csv) + "\n")
        (out / "report.txt").write_text(table + "\n")
        viz.save_eval_figure(report, out / "report.png")
        print(f"report written to {out}")
    return 0


def _analysis_pair(args):
    params = _load_params(args.ckpt)
    video = dataio.read_sequence(args.video)
    t = args.frame
    if not 1 <= t < len(video.frames):
        raise PixmatchError(f"analyze: frame {t} out of range (need 1..{len(video.frames) - 1})")
    return params, video.frames[t - 1], video.frames[t]


def cmd_analyze(args) -> int:
    params, ref, tar = _analysis_pair(args)
    out = viz.ensure_dir(args.out)
    ghat = embed_pair(params, frames_to_tensor([ref]), frames_to_tensor([tar]), training=False)
    if args.mode == "pca":
        img, evals = viz.pca_embedding_image(ghat.data[0])
        dataio.save_frame(out / "pca.png", img)
        (out / "pca_eigenvalues.csv").write_text(
            "component,eigenvalue\n" +
            "".join(f"{i + 1},{v:.8e}\n" for i, v in enumerate(evals)))
        viz.save_eigenvalue_figure(evals, out / "pca_eigenvalues.png")
        print(f"pca image and eigenvalues written to {out}")
        return 0

    final, records = match_internals(params, ghat, training=False)
    if args.mode == "offsets":
        offsets = final.data[0]
        hq, wq = offsets.shape[1:]
        pixel = args.pixel if args.pixel else (hq // 2, wq // 2)
        viz.emit_offset_viz(ref, tar, offsets, pixel, out / "offsets.png")
        print(f"offset overlay for pixel {pixel} written to {out / 'offsets.png'}")
        return 0

    # rf-sim: mean cosine similarity between each target's embedding vector and
    # the vectors each matching layer actually reads around it
    feats = ghat.data[0]
    hq, wq = feats.shape[1:]
    margin = min(3 + max(lay.dilation for lay in params.match_layers),
                 (hq - 1) // 2, (wq - 1) // 2)
    targets = [(y, x) for y in range(margin, hq - margin, 2) for x in range(margin, wq - margin, 2)]
    if not targets:
        raise PixmatchError("analyze rf-sim: feature map too small for the sampling margin")
    rows = []
    zero_flags = 0
    for i, (lay, rec) in enumerate(zip(params.match_layers, records)):
        sims = []
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            for pix in targets:
                locs = layer_sampling_locations(rec, pix, dilation=lay.dilation)
                sims.append(rf_cosine_similarity(feats, pix, locs))
            zero_flags += len(caught)
        rows.append((f"layer{i + 1} ({lay.kind}{'' if lay.dilation == 1 else f' d{lay.dilation}'})",
                     float(np.mean(sims))))
    (out / "rf_sim.csv").write_text(
        "layer,mean_cosine_similarity\n" + "".join(f"{label},{v:.6f}\n" for label, v in rows))
    viz.save_rf_sim_figure(rows, out / "rf_sim.png")
    for label, v in rows:
        print(f"{label}: {v:.4f}")
    if zero_flags:
        print(f"note: {zero_flags} zero-norm samples contributed 0")
    print(f"rf-sim table and figure written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pixmatch",
        description="Self-supervised pixel matching for video object segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic video dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num-sequences", type=int, default=10)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--size", type=_parse_size, default=(64, 64), metavar="HxW")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--motion", type=float, default=2.0, help="max speed in px/frame")
    p.add_argument("--objects", type=int, default=None, help="objects per scene (default: 1-2 random)")
    p.add_argument("--background", choices=BACKGROUNDS, default="noise")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train from unlabeled video")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--variant", choices=["deform", "conv1", "conv3", "conv5",
                                         "dilation3", "dilation6", "dilation9"], default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--gap", type=int, default=None, help="training frame gap")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="propagate a first-frame mask through a video")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--video", required=True, help="sequence directory (with frames/)")
    p.add_argument("--first-mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--time", action="store_true", help="report mean per-frame wall clock")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--attributes", default=None)
    p.add_argument("--tol", type=int, default=None, help="boundary tolerance in px")
    p.add_argument("--out", default=None, help="directory for report.csv/.txt/.png")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="inspect a trained model")
    p.add_argument("mode", choices=["rf-sim", "pca", "offsets"])
    p.add_argument("--ckpt", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--frame", type=int, default=1, help="target frame index (pairs with frame-1)")
    p.add_argument("--out", required=True)
    p.add_argument("--pixel", type=_parse_pixel, default=None, metavar="Y,X",
                   help="quarter-grid pixel for the offsets overlay")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PixmatchError, OSError, ValueError, IndexError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
