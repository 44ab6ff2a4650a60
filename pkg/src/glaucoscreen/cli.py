"""Command line entry point: ``glaucoscreen <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure (diagnostic on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch

from .config import RunConfig, load_config
from .data import DatasetManifest, load_manifest, make_synthetic, split_records, write_manifest
from .engine import (
    SampleCache,
    evaluate,
    load_checkpoint,
    model_from_state,
    prepare_roi,
    train,
)
from .imaging import load_image, resize_bilinear, save_image
from .viz import draw_windows, read_log, save_confusion_png, save_loss_png

log = logging.getLogger("glaucoscreen")


@dataclass
class CommandResult:
    exit_code: int
    artifacts: list[Path] = field(default_factory=list)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="random seed (overrides the config file)")
    p.add_argument("--config", type=Path, default=None, help="JSON run config with train/prep/model sections")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="glaucoscreen", description="Three-branch glaucoma screening toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic fundus dataset")
    p.add_argument("--out", type=Path, required=True, help="output directory for PNGs and manifest.csv")
    p.add_argument("--n", type=int, required=True, help="number of images (classes balanced)")
    p.add_argument("--side", type=int, default=299, help="image side in pixels")

    p = sub.add_parser("prep", parents=[common], help="write ROI-crop + CLAHE images for a manifest")
    p.add_argument("--manifest", type=Path, required=True, help="input manifest CSV")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("train", parents=[common], help="train the classifier")
    p.add_argument("--manifest", type=Path, required=True, help="manifest CSV; split into train/val/test")
    p.add_argument("--out", type=Path, required=True, help="run directory (logs, checkpoints, splits)")
    p.add_argument("--split", default="0.8,0.1,0.1", help="train,val,test fractions (default 0.8,0.1,0.1)")
    p.add_argument("--no-split", action="store_true", help="train on the whole manifest")
    p.add_argument("--val-manifest", type=Path, default=None, help="explicit validation manifest (implies --no-split)")
    p.add_argument("--epochs", type=int, default=None, help="maximum epochs")
    p.add_argument("--max-iterations", type=int, default=None, help="stop after this many iterations")
    p.add_argument("--batch-size", type=int, default=None, help="batch size")
    p.add_argument("--lr", type=float, default=None, help="initial learning rate")
    p.add_argument("--log-every", type=int, default=None, help="iterations between log lines")
    p.add_argument("--snapshot-every", type=int, default=None, help="iterations between validation snapshots")
    p.add_argument("--checkpoint-every", type=int, default=None, help="epochs between checkpoints")
    p.add_argument("--class-weighting", action="store_true", default=None, help="inverse-frequency class weights")
    p.add_argument("--no-augment", action="store_true", help="disable training augmentation")
    p.add_argument("--branches", type=int, choices=(2, 3), default=None, help="3 = with DWM patches, 2 = global+ROI")
    p.add_argument("--fusion", choices=("mha_readout", "concat_linear"), default=None, help="fusion head")
    p.add_argument("--threads", type=int, default=None, help="torch threads when not deterministic")
    p.add_argument("--no-deterministic", action="store_true", help="allow multi-threaded, non-bitwise runs")
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to resume from")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a manifest")
    p.add_argument("--manifest", type=Path, required=True, help="manifest CSV to score")
    p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint file")
    p.add_argument("--out", type=Path, required=True, help="output directory for report.json, confusion.png")
    p.add_argument("--threshold", type=float, default=0.5, help="decision threshold on the class-1 probability")

    p = sub.add_parser("show-windows", parents=[common], help="draw DWM proposals onto images")
    p.add_argument("--image", type=Path, action="append", required=True, help="input image (repeatable)")
    p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint file")
    p.add_argument("--out", type=Path, required=True, help="output PNG (or directory for several images)")

    p = sub.add_parser("plot-log", parents=[common], help="plot a JSON-lines training log")
    p.add_argument("--log", type=Path, required=True, help="train_log.jsonl")
    p.add_argument("--out", type=Path, required=True, help="output PNG")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_train(seed=args.seed)
    return cfg


def cmd_synth(args) -> list[Path]:
    seed = args.seed if args.seed is not None else 0
    m = make_synthetic(args.out, args.n, seed=seed, image_side=args.side)
    return [m.resolve(r) for r in m.records] + [args.out / "manifest.csv"]


def cmd_prep(args) -> list[Path]:
    cfg = _config(args)
    manifest = load_manifest(args.manifest)
    out = []
    records = []
    for rec in manifest.records:
        roi = prepare_roi(load_image(manifest.resolve(rec)), rec.roi, cfg.prep)
        name = f"{Path(rec.image_path).stem}_roi{cfg.prep.roi_side}_clahe.png"
        out.append(save_image(args.out / name, roi))
        records.append(replace(rec, image_path=name, roi=None))
    out.append(write_manifest(DatasetManifest(tuple(records)), args.out / "prep_manifest.csv"))
    return out


def _absolute(m: DatasetManifest) -> DatasetManifest:
    return DatasetManifest(tuple(replace(r, image_path=str(m.resolve(r).resolve())) for r in m.records))


def cmd_train(args) -> list[Path]:
    cfg = _config(args)
    cfg = cfg.with_train(
        max_epochs=args.epochs,
        max_iterations=args.max_iterations,
        batch_size=args.batch_size,
        lr=args.lr,
        log_every=args.log_every,
        snapshot_every=args.snapshot_every,
        checkpoint_every=args.checkpoint_every,
        class_weighting=args.class_weighting,
        num_threads=args.threads,
        augment=False if args.no_augment else None,
        deterministic=False if args.no_deterministic else None,
    )
    model_changes = {}
    if args.branches is not None:
        model_changes["branches"] = args.branches
    if args.fusion is not None:
        model_changes["fusion_mode"] = args.fusion
    if model_changes:
        cfg = replace(cfg, model=replace(cfg.model, **model_changes))

    args.out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    manifest = load_manifest(args.manifest)
    val = None
    if args.val_manifest is not None:
        tr, val = manifest, load_manifest(args.val_manifest)
    elif args.no_split:
        tr = manifest
    else:
        fractions = tuple(float(f) for f in args.split.split(","))
        parts = split_records(manifest, fractions, seed=cfg.train.seed)
        tr, val = parts[0], parts[1] if len(parts) > 1 else None
        for name, part in zip(("train", "val", "test"), parts):
            artifacts.append(write_manifest(_absolute(part), args.out / f"{name}.csv"))
    (args.out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    artifacts.append(args.out / "config.json")

    side = cfg.model.backbone.input_side
    log.info("preprocessing %d training images", len(tr))
    train_cache = SampleCache.build(tr, side, cfg.prep)
    val_cache = SampleCache.build(val, side, cfg.prep) if val is not None else None
    resume = load_checkpoint(args.resume) if args.resume else None
    result = train(cfg, train_cache, val_cache, args.out, resume=resume)
    artifacts.append(result.checkpoint_path)
    if (args.out / "train_log.jsonl").exists():
        artifacts.append(args.out / "train_log.jsonl")
    return artifacts


def cmd_eval(args) -> list[Path]:
    state = load_checkpoint(args.checkpoint)
    cfg = RunConfig.from_dict(state["config"])
    manifest = load_manifest(args.manifest)
    cache = SampleCache.build(manifest, cfg.model.backbone.input_side, cfg.prep)
    report = evaluate(state, cache, threshold=args.threshold)
    args.out.mkdir(parents=True, exist_ok=True)
    report_path = args.out / "report.json"
    report_path.write_text(report.to_json() + "\n")
    log.info("AP | AUC | Acc | F1 | Sen | Spe\n%s", report.row())
    print(report.to_json())
    return [report_path, save_confusion_png(report.counts, args.out / "confusion.png")]


@torch.no_grad()
def cmd_show_windows(args) -> list[Path]:
    state = load_checkpoint(args.checkpoint)
    model = model_from_state(state).eval()
    if model.patch_encoder is None:
        raise ValueError("checkpoint is a two-branch model without DWM windows")
    side = model.cfg.backbone.input_side
    many = len(args.image) > 1
    out = []
    for path in args.image:
        image = load_image(path)
        x = torch.from_numpy(resize_bilinear(image, side, side)).float().unsqueeze(0)
        fmap = model.global_encoder.backbone(x)
        proposals = model.propose(fmap, side)[0]
        scale = (image.shape[1] / side, image.shape[2] / side)
        canvas = draw_windows(image, proposals, scale)
        target = args.out / f"{Path(path).stem}_windows.png" if many else args.out
        target.parent.mkdir(parents=True, exist_ok=True)
        canvas.save(target, format="PNG")
        out.append(target)
        for p in proposals:
            log.info("%s scale %d score %.4f box %s", path, p.scale_index, p.score, p.box)
    return out


def cmd_plot_log(args) -> list[Path]:
    args.out.parent.mkdir(parents=True, exist_ok=True)
    return [save_loss_png(read_log(args.log), args.out)]


COMMANDS = {
    "synth": cmd_synth,
    "prep": cmd_prep,
    "train": cmd_train,
    "eval": cmd_eval,
    "show-windows": cmd_show_windows,
    "plot-log": cmd_plot_log,
}


def run(argv: list[str] | None = None) -> CommandResult:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return CommandResult(int(e.code or 0))
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    try:
        artifacts = [Path(a) for a in COMMANDS[args.command](args)]
    except Exception as e:  # noqa: BLE001 - every runtime failure maps to exit 1
        print(f"glaucoscreen {args.command}: error: {e}", file=sys.stderr)
        return CommandResult(1)
    missing = [a for a in artifacts if not a.exists()]
    if missing:
        print(f"glaucoscreen {args.command}: error: artifacts not written: {missing}", file=sys.stderr)
        return CommandResult(1, artifacts)
    return CommandResult(0, artifacts)


def main() -> None:
    sys.exit(run().exit_code)


if __name__ == "__main__":
    main()
