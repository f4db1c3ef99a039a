"""Manifest loading, reproducible splitting, per-epoch negative sampling,
and class-weight computation.

The manifest CSV is the single source of truth: UTF-8 with header
``image_path,species,role`` and role in {positive, negative}. Positive class
indices follow sorted species order; the reserved negative class is appended
last, so a manifest with K species yields K+1 classes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ManifestError

NEGATIVE_CLASS = "negative"
ROLES = ("positive", "negative")


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    label_index: int
    role: str
    species_name: str


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)
    class_names: list = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def positives(self) -> list:
        return [r for r in self.records if r.role == "positive"]

    @property
    def negatives(self) -> list:
        return [r for r in self.records if r.role == "negative"]


def load_manifest(path) -> DatasetManifest:
    """Read a manifest CSV; duplicate paths, unknown roles, and empty files are errors."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"image_path", "species", "role"} <= set(reader.fieldnames):
            raise ManifestError(f"{path}: header must contain image_path,species,role")
        rows = list(reader)
    if not rows:
        raise ManifestError(f"{path}: empty manifest")

    seen = set()
    species = set()
    for row in rows:
        if row["role"] not in ROLES:
            raise ManifestError(f"{path}: unknown role {row['role']!r}")
        if row["image_path"] in seen:
            raise ManifestError(f"{path}: duplicate sample {row['image_path']}")
        seen.add(row["image_path"])
        if row["role"] == "positive":
            species.add(row["species"])

    class_names = sorted(species) + [NEGATIVE_CLASS]
    index = {name: i for i, name in enumerate(class_names)}
    negative_index = len(class_names) - 1

    records = []
    for row in rows:
        label = index[row["species"]] if row["role"] == "positive" else negative_index
        records.append(SampleRecord(row["image_path"], label, row["role"], row["species"]))
    return DatasetManifest(records, class_names)


def write_manifest(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_path", "species", "role"])
        for r in records:
            writer.writerow([r.image_path, r.species_name, r.role])


def allocate_counts(total: int, fractions) -> list:
    """floor(fraction * total) per split, remainders to earlier splits in order."""
    counts = [int(np.floor(f * total)) for f in fractions]
    remainder = total - sum(counts)
    for i in range(remainder):
        counts[i] += 1
    return counts


_SPLIT_NAMES = {2: ("train", "validation"), 3: ("train", "validation", "test")}


@dataclass
class SplitAssignment:
    """image_path -> split-name map; exhaustive, disjoint, seed-reproducible."""

    assignment: dict
    seed: int
    split_names: tuple

    def subset(self, manifest: DatasetManifest, name: str) -> list:
        if name not in self.split_names:
            raise ValueError(f"unknown split {name!r}")
        return [r for r in manifest.records if self.assignment[r.image_path] == name]

    def counts(self) -> dict:
        out = {name: 0 for name in self.split_names}
        for name in self.assignment.values():
            out[name] += 1
        return out

    def write_csv(self, manifest: DatasetManifest, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_path", "species", "role", "split"])
            for r in manifest.records:
                writer.writerow([r.image_path, r.species_name, r.role,
                                 self.assignment[r.image_path]])


def split_dataset(manifest: DatasetManifest, fractions, seed: int) -> SplitAssignment:
    """Per-class stratified shuffle into len(fractions) splits.

    Per class: shuffle with the seeded generator, take floor(fraction * n)
    records per split, hand remainders to earlier splits. Deterministic given
    (manifest order, seed).
    """
    fractions = list(fractions)
    if not fractions or any(not 0 < f < 1 for f in fractions):
        raise ValueError("fractions must each lie in (0, 1)")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    names = _SPLIT_NAMES.get(len(fractions))
    if names is None:
        names = tuple(f"split{i}" for i in range(len(fractions)))

    by_class = {}
    for r in manifest.records:
        by_class.setdefault(r.label_index, []).append(r)

    rng = np.random.default_rng(seed)
    assignment = {}
    for label in sorted(by_class):
        group = by_class[label]
        if len(group) < len(fractions):
            raise ValueError(
                f"class {label} has {len(group)} records, fewer than {len(fractions)} splits")
        order = rng.permutation(len(group))
        counts = allocate_counts(len(group), fractions)
        start = 0
        for name, count in zip(names, counts):
            for i in order[start:start + count]:
                assignment[group[i].image_path] = name
            start += count
    return SplitAssignment(assignment, seed, names)


def sample_negatives(pool, count: int, seed: int, epoch: int) -> list:
    """Uniform draw without replacement, keyed by (seed, epoch).

    Each epoch sees a fresh deterministic subset of the negative pool.
    ``pool`` may be a DatasetManifest or a plain record list.
    """
    records = pool.records if isinstance(pool, DatasetManifest) else list(pool)
    if count > len(records):
        raise ValueError(f"cannot draw {count} negatives from a pool of {len(records)}")
    rng = np.random.default_rng([seed, epoch])
    picks = rng.permutation(len(records))[:count]
    return [records[i] for i in picks]


def class_weights(records, num_classes: int) -> np.ndarray:
    """Inverse-frequency weights, w_c = N / (num_classes * N_c).

    Normalized so a perfectly balanced dataset yields all-ones; the weighted
    sample mass sum(w_c * N_c) always equals N.
    """
    counts = np.zeros(num_classes, dtype=np.int64)
    for r in records:
        if not 0 <= r.label_index < num_classes:
            raise ValueError(f"label {r.label_index} out of range for {num_classes} classes")
        counts[r.label_index] += 1
    if (counts == 0).any():
        empty = int(np.argmax(counts == 0))
        raise ValueError(f"class {empty} has no records")
    total = counts.sum()
    return total / (num_classes * counts.astype(np.float64))
