"""Command-line workflow: prepare, train-base, transfer, predict, evaluate.

Exit codes: 0 success, 1 validation failure (bad manifests, bad values),
2 I/O or configuration failure (missing files, unreadable checkpoints,
strict-mode mismatches, bad flags). Every artifact-writing run stores its
resolved configuration next to its outputs. Compute device comes from the
`device` config key (default "cpu"; use --set device=cuda for GPU runs).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import load_config_file, parse_set_overrides, resolve_config
from .dataset import DatasetManifest, load_manifest, split_dataset
from .errors import CheckpointError, ConfigMismatchError, ManifestError
from .util import dump_json

log = logging.getLogger(__name__)


def _run_config(args):
    file_values = load_config_file(args.config) if args.config else {}
    return resolve_config(file_values, parse_set_overrides(args.overrides))


def _write_resolved(cfg, args, out_dir, extras=None):
    doc = {"command": args.command, "seed": args.seed, "strict": args.strict,
           "jobs": args.jobs, "config": cfg.as_dict(),
           "config_hash": cfg.config_hash()}
    doc.update(extras or {})
    dump_json(doc, Path(out_dir) / "resolved_config.json")


def _prepare_one(row, images_dir, png_name, cfg):
    from .audio_io import decode_audio, mix_to_mono, resample
    from .spectrogram import make_spectrogram, save_png

    clip = resample(mix_to_mono(decode_audio(row["audio_path"])),
                    cfg.sample_rate)
    image = make_spectrogram(clip, frame_length=cfg.frame_length, hop=cfg.hop,
                             target_peak=cfg.peak_norm, target_rows=cfg.image_rows,
                             kind=cfg.spectrogram_kind, expected_rate=cfg.sample_rate)
    path = images_dir / png_name
    save_png(image, path)
    return str(path)


def cmd_prepare(args) -> int:
    cfg = _run_config(args)
    with open(args.manifest, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"audio_path", "species", "role"} <= set(reader.fieldnames):
            raise ManifestError(f"{args.manifest}: header must contain audio_path,species,role")
        rows = list(reader)
    if not rows:
        raise ManifestError(f"{args.manifest}: empty manifest")

    out_dir = Path(args.out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    # stable collision-free PNG names, assigned in manifest order
    names = []
    used = set()
    for row in rows:
        stem = Path(row["audio_path"]).stem
        name = f"{stem}.png"
        k = 1
        while name in used:
            name = f"{stem}_{k}.png"
            k += 1
        used.add(name)
        names.append(name)

    def job(pair):
        row, name = pair
        try:
            return _prepare_one(row, images_dir, name, cfg)
        except (FileNotFoundError, OSError, ValueError) as exc:
            print(f"warning: skipping {row['audio_path']}: {exc}", file=sys.stderr)
            return None

    workers = max(1, args.jobs)
    if workers == 1:
        results = [job(p) for p in zip(rows, names)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, zip(rows, names)))

    manifest_path = out_dir / "manifest.csv"
    kept = 0
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_path", "species", "role"])
        for row, png in zip(rows, results):
            if png is not None:
                writer.writerow([png, row["species"], row["role"]])
                kept += 1
    _write_resolved(cfg, args, out_dir, {"clips_in": len(rows), "clips_out": kept})
    print(f"prepared {kept}/{len(rows)} clips -> {manifest_path}")
    return 0


def cmd_train_base(args) -> int:
    from .model import build_model
    from .trainer import train

    cfg = _run_config(args)
    manifest = load_manifest(args.manifest)
    positives = DatasetManifest(manifest.positives, manifest.class_names)
    split = split_dataset(positives, cfg.base_split, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split.write_csv(positives, out_dir / f"split_{args.seed}.csv")

    net = build_model(manifest.num_classes,
                      backbone_init=args.pretrained or "random",
                      seed=args.seed, backbone=cfg.backbone, dropout=cfg.dropout)
    net, report = train(net, split.subset(positives, "train"),
                        split.subset(positives, "validation"),
                        manifest.negatives, manifest.class_names, cfg,
                        seed=args.seed, out_dir=out_dir,
                        negatives_per_epoch=cfg.negatives_per_epoch_base,
                        stage="base")
    dump_json(report, out_dir / "train_report.json")
    _write_resolved(cfg, args, out_dir, {"manifest": str(args.manifest)})
    best = report["best"]
    if best is None:
        print("training ended without a usable checkpoint", file=sys.stderr)
        return 1
    print(f"best epoch={best['epoch']} val_loss={best['val_loss']:.6f} "
          f"checkpoint={best['path']}")
    return 0


def _fold_seeds(args, folds: int) -> list:
    if args.fold_seeds:
        return [int(s) for s in args.fold_seeds.split(",")]
    return [args.seed + k + 1 for k in range(folds)]


def cmd_transfer(args) -> int:
    import numpy as np

    from .evaluate import (ConfusionMatrix, average_folds, export_matrix_csv,
                           kfold_evaluate, render_matrix_png)
    from .model import load_checkpoint

    cfg = _run_config(args)
    base = load_checkpoint(args.base_checkpoint,
                           expected_spectrogram=cfg.spectrogram_meta(),
                           strict=args.strict)
    if args.strict and base.num_classes != 47:
        raise ConfigMismatchError(
            f"base checkpoint head is {base.num_classes}-way, expected 47")
    manifest = load_manifest(args.manifest)
    folds = args.folds if args.folds is not None else cfg.folds
    seeds = _fold_seeds(args, folds)
    out_dir = Path(args.out_dir)

    report = kfold_evaluate(base, manifest, manifest.negatives, cfg, seeds,
                            out_dir, folds=folds,
                            mode="partition" if args.disjoint_folds else "resample")
    dump_json(report, out_dir / "kfold_report.json")
    names = tuple(report["class_names"])
    averaged = average_folds([ConfusionMatrix(np.asarray(f["matrix"]), class_names=names)
                              for f in report["folds"]])
    export_matrix_csv(averaged, out_dir / "averaged_matrix.csv")
    render_matrix_png(averaged, out_dir / "averaged_matrix.png")
    _write_resolved(cfg, args, out_dir, {"base_checkpoint": str(args.base_checkpoint),
                                         "fold_seeds": seeds})
    print(f"mean_accuracy={report['mean_accuracy']:.4f} "
          f"std_accuracy={report['std_accuracy']:.4f} folds={report['fold_count']}")
    return 0


def _image_for_input(path, cfg):
    from .audio_io import decode_audio, mix_to_mono, resample
    from .spectrogram import load_png, make_spectrogram

    p = Path(path)
    if p.suffix.lower() == ".wav":
        clip = resample(mix_to_mono(decode_audio(p)), cfg.sample_rate)
        return make_spectrogram(clip, frame_length=cfg.frame_length, hop=cfg.hop,
                                target_peak=cfg.peak_norm, target_rows=cfg.image_rows,
                                kind=cfg.spectrogram_kind, expected_rate=cfg.sample_rate)
    return load_png(p)


def cmd_predict(args) -> int:
    from .inference import classify, predict_clip
    from .model import load_checkpoint

    cfg = _run_config(args)
    net = load_checkpoint(args.checkpoint,
                          expected_spectrogram=cfg.spectrogram_meta(),
                          strict=args.strict).to(cfg.device)
    names = net.class_names or [f"class_{i}" for i in range(net.num_classes)]
    lines = []
    for path in args.inputs:
        image = _image_for_input(path, cfg)
        pred = predict_clip(net, image, class_names=names,
                            batch_size=cfg.batch_size, pad_mode=cfg.pad_mode)
        doc = {"path": str(path), "scores": pred.score_map(),
               "windows": pred.windows}
        if args.threshold is None:
            doc["label"] = names[classify(pred)]
        else:
            doc["labels"] = [names[i] for i in classify(pred, args.threshold)]
        line = json.dumps(doc, sort_keys=True)
        print(line)
        lines.append(line)
    if args.out_dir is not None:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "predictions.jsonl").write_text("\n".join(lines) + "\n",
                                                   encoding="utf-8")
        _write_resolved(cfg, args, out_dir, {"checkpoint": str(args.checkpoint)})
    return 0


def cmd_evaluate(args) -> int:
    from .evaluate import confusion_matrix, export_matrix_csv
    from .inference import classify, predict_clip
    from .model import load_checkpoint
    from .spectrogram import load_png

    cfg = _run_config(args)
    net = load_checkpoint(args.checkpoint,
                          expected_spectrogram=cfg.spectrogram_meta(),
                          strict=args.strict).to(cfg.device)
    manifest = load_manifest(args.manifest)
    if net.class_names is not None and list(net.class_names) != list(manifest.class_names):
        raise ConfigMismatchError(
            f"checkpoint classes {net.class_names} != manifest classes "
            f"{manifest.class_names}")

    records = manifest.records
    if args.split_csv:
        wanted = args.split
        keep = set()
        with open(args.split_csv, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                if row.get("split") == wanted:
                    keep.add(row["image_path"])
        records = [r for r in records if r.image_path in keep]
        if not records:
            raise ValueError(f"no manifest records in split {wanted!r}")

    names = list(manifest.class_names)
    preds, truths = [], []
    for rec in records:
        pred = predict_clip(net, load_png(rec.image_path), class_names=names,
                            batch_size=cfg.batch_size, pad_mode=cfg.pad_mode)
        preds.append(classify(pred))
        truths.append(rec.label_index)
    matrix = confusion_matrix(preds, truths, len(names), names)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_json({"accuracy": matrix.accuracy(), "matrix": matrix.counts.tolist(),
               "class_names": names, "n_samples": len(records)},
              out_dir / "evaluation.json")
    export_matrix_csv(matrix, out_dir / "matrix.csv")
    _write_resolved(cfg, args, out_dir, {"checkpoint": str(args.checkpoint)})
    print(f"accuracy={matrix.accuracy():.4f} n={len(records)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--strict", action="store_true",
                        help="turn config mismatches into errors")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")

    parser = argparse.ArgumentParser(prog="birdcall",
                                     description="spectrogram-based birdcall classification")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common],
                       help="batch-convert audio to spectrogram PNGs")
    p.add_argument("--manifest", required=True, help="CSV of audio_path,species,role")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train-base", parents=[common],
                       help="train the base-stage classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pretrained", help="backbone weights file; omit for random init")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_train_base)

    p = sub.add_parser("transfer", parents=[common],
                       help="head swap + cross-validated fine-tune")
    p.add_argument("--base-checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--folds", type=int, help="fold count (debug: 1)")
    p.add_argument("--fold-seeds", help="comma-separated seeds, one per fold")
    p.add_argument("--disjoint-folds", action="store_true",
                   help="disjoint test partitions instead of random resplits")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("predict", parents=[common],
                       help="score WAV or PNG inputs, one JSON line each")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float,
                   help="multi-label mode: report all classes scoring >= threshold")
    p.add_argument("--out-dir", type=Path, help="also write predictions.jsonl here")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common],
                       help="accuracy + confusion matrix of a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split-csv", help="restrict to one split of a split_<seed>.csv")
    p.add_argument("--split", default="test", help="split name used with --split-csv")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CheckpointError, ConfigMismatchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
