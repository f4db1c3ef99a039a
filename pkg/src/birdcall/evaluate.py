"""Accuracy, confusion matrices, and the five-fold resplit protocol.

Cross-validation here is five independent random resplits (a new 72/18/10
split per seed), each followed by a head replacement and a full fine-tune;
a disjoint-partition mode is available as an alternative. Per-fold matrices
are row-normalized before averaging so folds with unequal per-class test
counts contribute equally.

The test split holds positive clips plus a reserved draw of negatives
(half the positive test count, rounded) so the negative row of the matrix
is populated; those negatives are removed from the per-epoch sampling pool
before training starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (DatasetManifest, allocate_counts, sample_negatives,
                      split_dataset)
from .inference import classify, predict_clip
from .model import replace_head
from .trainer import train
from .util import dump_json, round_half_up

# epoch key reserved for the one-off test-negative draw; training epochs
# never reach it, so the test subset stays out of every epoch's sample
_TEST_NEGATIVE_EPOCH = 2**31 - 1


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_names: tuple = ()
    fold_count: int = 1
    normalized: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError(f"counts must be square, got shape {self.counts.shape}")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())

    def row_normalized(self) -> np.ndarray:
        """Rows rescaled to sum to 1; all-zero rows stay zero."""
        counts = self.counts.astype(np.float64)
        sums = counts.sum(axis=1, keepdims=True)
        return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


def accuracy(preds, truths) -> float:
    preds = list(preds)
    truths = list(truths)
    if not preds or len(preds) != len(truths):
        raise ValueError("predictions and truths must be equal-length and non-empty")
    hits = sum(1 for p, t in zip(preds, truths) if p == t)
    return hits / len(preds)


def confusion_matrix(preds, truths, num_classes: int, class_names=()) -> ConfusionMatrix:
    preds = np.asarray(list(preds), dtype=np.int64)
    truths = np.asarray(list(truths), dtype=np.int64)
    if preds.shape != truths.shape or preds.size == 0:
        raise ValueError("predictions and truths must be equal-length and non-empty")
    for name, arr in (("prediction", preds), ("truth", truths)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"{name} label out of range [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truths, preds), 1)
    return ConfusionMatrix(counts, class_names=tuple(class_names))


def average_folds(matrices) -> ConfusionMatrix:
    """Mean of the row-normalized fold matrices; raw counts are summed."""
    matrices = list(matrices)
    if not matrices:
        raise ValueError("no matrices to average")
    shape = matrices[0].counts.shape
    for m in matrices[1:]:
        if m.counts.shape != shape:
            raise ValueError(f"shape mismatch: {m.counts.shape} vs {shape}")
    stacked = np.stack([m.row_normalized() for m in matrices])
    summed = np.sum([m.counts for m in matrices], axis=0)
    return ConfusionMatrix(summed, class_names=matrices[0].class_names,
                           fold_count=len(matrices),
                           normalized=stacked.mean(axis=0))


def _classify_records(net, records, loader, class_names, config):
    preds = []
    for rec in records:
        pred = predict_clip(net, loader(rec), class_names=class_names,
                            batch_size=config.batch_size, pad_mode=config.pad_mode)
        preds.append(classify(pred))
    return preds


def _partition_split(manifest: DatasetManifest, fractions, seed: int,
                     fold_index: int, folds: int):
    """Disjoint-partition alternative: per-class chunks from one base shuffle."""
    from .dataset import SplitAssignment

    rng = np.random.default_rng(seed)
    names = ("train", "validation", "test")
    assignment = {}
    by_label = {}
    for rec in manifest.records:
        by_label.setdefault(rec.label_index, []).append(rec)
    for label in sorted(by_label):
        group = by_label[label]
        order = rng.permutation(len(group))
        chunks = np.array_split(order, folds)
        test_idx = set(chunks[fold_index].tolist())
        rest = [i for i in order if i not in test_idx]
        inner = fractions[0] + fractions[1]
        n_train, _ = allocate_counts(len(rest), (fractions[0] / inner,
                                                 fractions[1] / inner))
        for pos, i in enumerate(rest):
            assignment[group[i].image_path] = names[0] if pos < n_train else names[1]
        for i in test_idx:
            assignment[group[i].image_path] = names[2]
    return SplitAssignment(assignment=assignment, seed=seed, split_names=names)


def kfold_evaluate(base_net, target_manifest: DatasetManifest, negative_pool,
                   config, seeds, out_dir, loader=None, folds: int | None = None,
                   mode: str = "resample") -> dict:
    """Train and test one fold per seed; returns the aggregate report dict.

    base_net is the trained base-stage network; each fold gets a fresh head
    sized to the target classes and a full fine-tune. mode "resample" draws
    an independent split per seed (the default protocol); "partition" uses
    disjoint per-class test chunks from a single shuffle.
    """
    seeds = list(seeds)
    if folds is None:
        folds = len(seeds)
    if len(seeds) != folds:
        raise ValueError(f"{len(seeds)} seeds for {folds} folds")
    if mode not in ("resample", "partition"):
        raise ValueError(f"unknown fold mode {mode!r}")
    if loader is None:
        from .trainer import _default_loader
        loader = _default_loader

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    positives = DatasetManifest(records=target_manifest.positives,
                                class_names=target_manifest.class_names)
    class_names = list(target_manifest.class_names)
    num_classes = len(class_names)
    negative_pool = list(negative_pool)

    fold_reports = []
    matrices = []
    for fold_index, seed in enumerate(seeds):
        fold_dir = out_dir / f"fold_{seed}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        if mode == "resample":
            split = split_dataset(positives, config.target_split, seed)
        else:
            split = _partition_split(positives, config.target_split, seeds[0],
                                     fold_index, folds)
        split.write_csv(positives, out_dir / f"split_{seed}.csv")
        train_pos = split.subset(positives, "train")
        val_pos = split.subset(positives, "validation")
        test_pos = split.subset(positives, "test")

        n_test_neg = int(round_half_up(0.5 * len(test_pos)))
        test_negs = sample_negatives(negative_pool, n_test_neg, seed,
                                     _TEST_NEGATIVE_EPOCH)
        held_out = {r.image_path for r in test_negs}
        epoch_pool = [r for r in negative_pool if r.image_path not in held_out]

        test_paths = {r.image_path for r in test_pos} | held_out
        train_val_paths = {r.image_path for r in train_pos} | {r.image_path for r in val_pos}
        if test_paths & train_val_paths:
            raise AssertionError("test split overlaps train/validation")

        net = replace_head(base_net, num_classes, seed=seed)
        net, train_report = train(net, train_pos, val_pos, epoch_pool, class_names,
                                  config, seed=seed, out_dir=fold_dir,
                                  negatives_per_epoch=config.negatives_per_epoch_target,
                                  loader=loader, stage="target")
        dump_json(train_report, fold_dir / "train_report.json")

        test_records = list(test_pos) + list(test_negs)
        preds = _classify_records(net, test_records, loader, class_names, config)
        truths = [r.label_index for r in test_records]
        matrix = confusion_matrix(preds, truths, num_classes, class_names)
        matrices.append(matrix)
        fold_reports.append({
            "seed": seed,
            "split_counts": {"train": len(train_pos), "validation": len(val_pos),
                             "test": len(test_pos), "test_negatives": len(test_negs)},
            "accuracy": matrix.accuracy(),
            "matrix": matrix.counts.tolist(),
            "negatives_per_epoch": config.negatives_per_epoch_target,
            "best": train_report["best"],
            "epochs_run": len(train_report["epochs"]),
        })

    averaged = average_folds(matrices)
    accs = np.array([f["accuracy"] for f in fold_reports])
    return {"folds": fold_reports,
            "mean_accuracy": float(accs.mean()),
            "std_accuracy": float(accs.std()),
            "averaged_matrix": averaged.normalized.tolist(),
            "class_names": class_names,
            "fold_count": len(fold_reports),
            "mode": mode}


def export_matrix_csv(matrix: ConfusionMatrix, path, normalized: bool = True) -> None:
    """Write the matrix with a header row/column of class names."""
    import csv

    grid = matrix.normalized if (normalized and matrix.normalized is not None) \
        else (matrix.row_normalized() if normalized else matrix.counts)
    names = list(matrix.class_names) or [str(i) for i in range(grid.shape[0])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["actual\\predicted"] + names)
        for name, row in zip(names, grid):
            writer.writerow([name] + [f"{v:.6f}" if normalized else int(v) for v in row])


def render_matrix_png(matrix: ConfusionMatrix, path) -> None:
    """Grayscale cell image of the row-normalized matrix, upscaled for viewing."""
    from PIL import Image

    grid = matrix.normalized if matrix.normalized is not None else matrix.row_normalized()
    cell = 32
    img = np.kron(grid, np.ones((cell, cell)))
    Image.fromarray(np.uint8(np.clip(img, 0, 1) * 255), mode="L").save(path)
