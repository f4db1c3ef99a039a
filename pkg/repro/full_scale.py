#!/usr/bin/env python3
"""Full-scale run: base training on the 46-species corpus, then five-fold
transfer onto the 10-species target corpus.

This is NOT part of the test suite. It needs the complete source corpora
and a CUDA GPU, and takes on the order of a dozen GPU-hours:

  * base corpus:      2814 bird clips across 46 species
  * target corpus:    351 bird clips across 10 species
  * negative corpus:  16930 environmental/background clips

Reference targets, checked at the end within +/- 3 percentage points:
best base validation accuracy 0.78, mean per-fold best target validation
accuracy 0.79. The script prints a PASS/MISS line for each.

Inputs are three audio manifests (CSV with header audio_path,species,role):
one for each corpus, with role "positive" for bird clips and "negative"
for background clips. Each stage is skipped when its output already
exists, so an interrupted run can be resumed by re-running the command.

Example:

  python repro/full_scale.py \
      --base-audio-manifest data/base_audio.csv \
      --target-audio-manifest data/target_audio.csv \
      --negative-audio-manifest data/negatives_audio.csv \
      --download-pretrained \
      --out-dir runs/full_scale --device cuda --jobs 8
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from birdcall.cli import main as birdcall_main

BASE_TARGET_ACC = 0.78
TRANSFER_TARGET_ACC = 0.79
TOLERANCE = 0.03


def run_cli(argv: list) -> None:
    print(f"+ birdcall {' '.join(argv)}", flush=True)
    code = birdcall_main(argv)
    if code != 0:
        sys.exit(f"command failed with exit code {code}: birdcall {' '.join(argv)}")


def download_pretrained(path: Path) -> None:
    """Fetch torchvision's ImageNet ResNet-50 weights (needs network access)."""
    import torch
    from torchvision.models import ResNet50_Weights, resnet50

    net = resnet50(weights=ResNet50_Weights.IMAGENET1K_V1)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(net.state_dict(), path)
    print(f"saved ImageNet weights -> {path}")


def prepare_corpus(name: str, audio_manifest: Path, out_dir: Path,
                   jobs: int, overrides: list) -> Path:
    prep_dir = out_dir / "prep" / name
    manifest = prep_dir / "manifest.csv"
    if manifest.exists():
        print(f"[skip] {name}: {manifest} already exists")
        return manifest
    run_cli(["prepare", "--manifest", str(audio_manifest),
             "--out-dir", str(prep_dir), "--jobs", str(jobs), *overrides])
    return manifest


def concat_manifests(parts: list, dest: Path) -> Path:
    """Join prepared manifests (shared header) into one training manifest."""
    rows = []
    for part in parts:
        with open(part, newline="", encoding="utf-8") as fh:
            rows.extend(list(csv.DictReader(fh)))
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["image_path", "species", "role"])
        writer.writeheader()
        writer.writerows(rows)
    return dest


def count_roles(manifest: Path) -> dict:
    counts = {"positive": 0, "negative": 0}
    species = set()
    with open(manifest, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            counts[row["role"]] = counts.get(row["role"], 0) + 1
            if row["role"] == "positive":
                species.add(row["species"])
    counts["species"] = len(species)
    return counts


def best_val_acc(report_path: Path) -> float:
    """Validation accuracy at the best (checkpointed) epoch of a training run."""
    report = json.loads(report_path.read_text(encoding="utf-8"))
    if report["best"] is None:
        sys.exit(f"{report_path}: training ended without a best checkpoint")
    best_epoch = report["best"]["epoch"]
    for entry in report["epochs"]:
        if entry["epoch"] == best_epoch:
            return entry["val_acc"]
    sys.exit(f"{report_path}: best epoch {best_epoch} missing from epoch log")


def check(label: str, value: float, target: float) -> bool:
    ok = abs(value - target) <= TOLERANCE
    verdict = "PASS" if ok else "MISS"
    print(f"[{verdict}] {label}: {value:.4f} (target {target:.2f} +/- {TOLERANCE:.2f})")
    return ok


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--base-audio-manifest", type=Path, required=True)
    parser.add_argument("--target-audio-manifest", type=Path, required=True)
    parser.add_argument("--negative-audio-manifest", type=Path, required=True)
    parser.add_argument("--pretrained", type=Path,
                        help='ImageNet ResNet-50 state-dict file, or "random" '
                             "to skip backbone init (debug runs only)")
    parser.add_argument("--download-pretrained", action="store_true",
                        help="fetch the weights via torchvision first")
    parser.add_argument("--out-dir", type=Path, default=Path("runs/full_scale"))
    parser.add_argument("--device", default="cuda")
    parser.add_argument("--jobs", type=int, default=8)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--folds", type=int, default=5)
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="extra config overrides forwarded to every command")
    args = parser.parse_args()

    out_dir = args.out_dir.resolve()
    out_dir.mkdir(parents=True, exist_ok=True)
    overrides = ["--set", f"device={args.device}"]
    for kv in args.overrides:
        overrides += ["--set", kv]

    if args.pretrained is not None and str(args.pretrained) == "random":
        print("warning: random backbone init; accuracy targets assume "
              "ImageNet weights", file=sys.stderr)
        pretrained_flags = []
    else:
        pretrained = args.pretrained or out_dir / "resnet50_imagenet.pth"
        if args.download_pretrained and not pretrained.exists():
            download_pretrained(pretrained)
        if not pretrained.exists():
            sys.exit(f"no pretrained weights at {pretrained}; pass --pretrained "
                     f"or --download-pretrained")
        pretrained_flags = ["--pretrained", str(pretrained)]

    prepared = {name: prepare_corpus(name, manifest, out_dir, args.jobs, overrides)
                for name, manifest in (("base", args.base_audio_manifest),
                                       ("target", args.target_audio_manifest),
                                       ("negatives", args.negative_audio_manifest))}

    base_manifest = concat_manifests([prepared["base"], prepared["negatives"]],
                                     out_dir / "base_manifest.csv")
    target_manifest = concat_manifests([prepared["target"], prepared["negatives"]],
                                       out_dir / "target_manifest.csv")
    for name, manifest in (("base", base_manifest), ("target", target_manifest)):
        counts = count_roles(manifest)
        print(f"{name} corpus: {counts['positive']} positives over "
              f"{counts['species']} species, {counts['negative']} negatives")
        if counts["positive"] < 300 or counts["negative"] < 1407:
            print(f"warning: {name} corpus is far below full scale; accuracy "
                  f"targets below will not be meaningful", file=sys.stderr)

    base_dir = out_dir / "base"
    base_report = base_dir / "train_report.json"
    if base_report.exists():
        print(f"[skip] base training: {base_report} already exists")
    else:
        run_cli(["train-base", "--manifest", str(base_manifest),
                 *pretrained_flags, "--seed", str(args.seed),
                 "--out-dir", str(base_dir), *overrides])

    transfer_dir = out_dir / "transfer"
    kfold_report = transfer_dir / "kfold_report.json"
    if kfold_report.exists():
        print(f"[skip] transfer: {kfold_report} already exists")
    else:
        run_cli(["transfer", "--base-checkpoint", str(base_dir / "best.ckpt"),
                 "--manifest", str(target_manifest), "--folds", str(args.folds),
                 "--seed", str(args.seed), "--out-dir", str(transfer_dir),
                 *overrides])

    base_acc = best_val_acc(base_report)
    kfold = json.loads(kfold_report.read_text(encoding="utf-8"))
    fold_accs = [best_val_acc(transfer_dir / f"fold_{f['seed']}" / "train_report.json")
                 for f in kfold["folds"]]
    transfer_acc = sum(fold_accs) / len(fold_accs)

    print()
    ok = check("base validation accuracy", base_acc, BASE_TARGET_ACC)
    ok &= check("mean fold validation accuracy", transfer_acc, TRANSFER_TARGET_ACC)
    print(f"held-out test accuracy (mean over folds): {kfold['mean_accuracy']:.4f}")
    print(f"averaged confusion matrix: {transfer_dir / 'averaged_matrix.csv'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
