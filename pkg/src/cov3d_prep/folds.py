"""Category-balanced 5-fold cross-validation assignment.

Fold 0 is the official validation partition.  Training scans are grouped
into six categories (negative, the four severities, positive without
severity); each group is sorted by scan id, shuffled with a seeded
generator and dealt round-robin to folds 1-4.
"""

from __future__ import annotations

import csv
from collections import Counter
from typing import Iterable

import numpy as np

from .categories import Category
from .volume_io import PathLike, ScanRecord, VolumeFormatError, read_table

NUM_FOLDS = 5
VALIDATION_FOLD = 0

# fixed dealing order so the generator stream is consumed identically every run
CATEGORY_ORDER = (
    Category.NEGATIVE,
    Category.MILD,
    Category.MODERATE,
    Category.SEVERE,
    Category.CRITICAL,
    Category.POSITIVE_UNKNOWN,
)


def make_folds(records: Iterable[ScanRecord], seed: int = 0) -> dict[str, int]:
    """Map each training and validation scan id to a fold in 0..4.

    Test-partition records are ignored.  Raises ``ValueError`` for a
    repeated scan id or a training scan without a category.
    """
    folds: dict[str, int] = {}
    groups: dict[Category, list[str]] = {c: [] for c in CATEGORY_ORDER}
    seen = set()
    for r in records:
        if r.scan_id in seen:
            raise ValueError(f"duplicate scan_id {r.scan_id!r}")
        seen.add(r.scan_id)
        if r.partition == "validation":
            folds[r.scan_id] = VALIDATION_FOLD
        elif r.partition == "train":
            if r.label is None:
                raise ValueError(f"training scan {r.scan_id!r} has no category")
            groups[Category(r.label)].append(r.scan_id)

    rng = np.random.default_rng(seed)
    for category in CATEGORY_ORDER:
        ids = sorted(groups[category])
        order = rng.permutation(len(ids))
        for k, idx in enumerate(order):
            folds[ids[idx]] = 1 + k % (NUM_FOLDS - 1)
    return folds


def fold_counts(folds: dict[str, int], records: Iterable[ScanRecord]) -> Counter:
    """Counter keyed by ``(category, fold)``."""
    return Counter((r.label, folds[r.scan_id]) for r in records if r.scan_id in folds)


def write_folds(folds: dict[str, int], path: PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scan_id", "fold"])
        for scan_id in sorted(folds):
            writer.writerow([scan_id, folds[scan_id]])


def read_folds(path: PathLike) -> dict[str, int]:
    folds = {}
    for lineno, row in read_table(path, ("scan_id", "fold")):
        try:
            fold = int(row["fold"])
        except ValueError:
            raise VolumeFormatError(f"{path}:{lineno}: fold {row['fold']!r} is not an integer") from None
        if not 0 <= fold < NUM_FOLDS:
            raise VolumeFormatError(f"{path}:{lineno}: fold {fold} out of range")
        if row["scan_id"] in folds:
            raise VolumeFormatError(f"{path}:{lineno}: duplicate scan_id {row['scan_id']!r}")
        folds[row["scan_id"]] = fold
    return folds
