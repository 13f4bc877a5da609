"""Decision rules, macro F1 and probability ensembling."""

from __future__ import annotations

import csv
import warnings
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .categories import SEVERITIES, Category
from .volume_io import PathLike, ScanRecord, VolumeFormatError, read_table

PredictionSet = dict  # scan_id -> probability vector

NEGATIVE, POSITIVE = "negative", "positive"
PRESENCE_CLASSES = (NEGATIVE, POSITIVE)
SEVERITY_CLASSES = tuple(c.label for c in SEVERITIES)


def presence_decision(p, threshold: float = 0.5) -> str:
    """``positive`` when the positive probability ``1 - p_0`` reaches ``threshold``."""
    p = np.asarray(p, dtype=np.float64)
    return POSITIVE if 1.0 - p[0] >= threshold else NEGATIVE


def severity_decision(p) -> str:
    """Most probable severity, ignoring the negative class; ties go to the milder one."""
    p = np.asarray(p, dtype=np.float64)
    # argmax returns the first maximum, i.e. the lowest severity
    return SEVERITIES[int(np.argmax(p[1:]))].label


def macro_f1(truth: Sequence[Hashable], pred: Sequence[Hashable],
             classes: Sequence[Hashable]) -> float:
    """Unweighted mean of per-class F1 over ``classes``.

    A class that never occurs in either sequence scores 0 and triggers a
    warning.
    """
    if len(truth) != len(pred):
        raise ValueError(f"length mismatch: {len(truth)} truth vs {len(pred)} predictions")
    if not classes:
        raise ValueError("class list is empty")
    index = {c: i for i, c in enumerate(classes)}
    if len(index) != len(classes):
        raise ValueError("class list has duplicates")
    for label in (*truth, *pred):
        if label not in index:
            raise ValueError(f"label {label!r} not in class list")

    n = len(classes)
    t = np.fromiter((index[x] for x in truth), dtype=np.intp, count=len(truth))
    q = np.fromiter((index[x] for x in pred), dtype=np.intp, count=len(pred))
    tp = np.bincount(t[t == q], minlength=n)
    denom = np.bincount(t, minlength=n) + np.bincount(q, minlength=n)  # 2TP + FP + FN

    scores = np.zeros(n)
    present = denom > 0
    scores[present] = 2 * tp[present] / denom[present]
    if not present.all():
        absent = [classes[i] for i in np.flatnonzero(~present)]
        warnings.warn(f"F1 undefined for classes with no true or predicted samples: {absent}; scored as 0")
    return float(scores.mean())


def ensemble_average(sets: Sequence[Mapping[str, np.ndarray]]) -> PredictionSet:
    """Element-wise mean of the probability vectors of several models."""
    if not sets:
        raise ValueError("no prediction sets to ensemble")
    keys = set(sets[0])
    for i, s in enumerate(sets[1:], start=1):
        if set(s) != keys:
            diff = sorted(keys.symmetric_difference(s))
            raise ValueError(f"prediction set {i} covers different scans, e.g. {diff[:3]}")
    return {
        k: np.mean([np.asarray(s[k], dtype=np.float64) for s in sets], axis=0)
        for k in sorted(keys)
    }


def is_probability_vector(p, tol: float = 1e-6) -> bool:
    p = np.asarray(p, dtype=np.float64)
    return bool(np.all(np.isfinite(p)) and np.all(p >= 0) and abs(p.sum() - 1.0) <= tol)


# --------------------------------------------------------------------------
# prediction files
# --------------------------------------------------------------------------

def write_predictions(preds: Mapping[str, np.ndarray], path: PathLike) -> None:
    """Write ``scan_id, p0..pN-1`` rows with 17 significant digits."""
    if not preds:
        raise ValueError("no predictions to write")
    n = len(next(iter(preds.values())))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scan_id", *(f"p{i}" for i in range(n))])
        for scan_id in sorted(preds):
            p = np.asarray(preds[scan_id], dtype=np.float64)
            if p.size != n:
                raise ValueError(f"{scan_id}: expected {n} probabilities, got {p.size}")
            writer.writerow([scan_id, *(format(float(x), ".17g") for x in p)])


def read_predictions(path: PathLike) -> PredictionSet:
    rows = read_table(path, ("scan_id", "p0"))
    preds: PredictionSet = {}
    for lineno, row in rows:
        cols = sorted((k for k in row if k[:1] == "p" and k[1:].isdigit()), key=lambda k: int(k[1:]))
        if [int(k[1:]) for k in cols] != list(range(len(cols))) or len(cols) < 2:
            raise VolumeFormatError(f"{path}:1: probability columns must be p0..pN-1")
        try:
            p = np.array([float(row[k]) for k in cols])
        except ValueError as err:
            raise VolumeFormatError(f"{path}:{lineno}: {err}") from None
        if not is_probability_vector(p):
            raise VolumeFormatError(f"{path}:{lineno}: not a probability vector: {p.tolist()}")
        if row["scan_id"] in preds:
            raise VolumeFormatError(f"{path}:{lineno}: duplicate scan_id {row['scan_id']!r}")
        preds[row["scan_id"]] = p
    return preds


# --------------------------------------------------------------------------
# task scoring
# --------------------------------------------------------------------------

def task_labels(records: Iterable[ScanRecord], preds: Mapping[str, np.ndarray], task: int,
                threshold: float = 0.5) -> tuple[list[str], list[str], tuple[str, ...]]:
    """Aligned truth/prediction label lists and the class list for a task.

    Task 1 scores every labeled scan as negative/positive.  Task 2 scores
    only scans with a severity annotation.
    """
    if task not in (1, 2):
        raise ValueError(f"task must be 1 or 2, got {task}")
    truth, pred = [], []
    for r in records:
        if r.label is None:
            continue
        if task == 2 and not Category(r.label).has_severity:
            continue
        if r.scan_id not in preds:
            raise ValueError(f"no prediction for scan {r.scan_id!r}")
        p = preds[r.scan_id]
        if task == 1:
            truth.append(POSITIVE if Category(r.label).is_positive else NEGATIVE)
            pred.append(presence_decision(p, threshold))
        else:
            truth.append(Category(r.label).label)
            pred.append(severity_decision(p))
    classes = PRESENCE_CLASSES if task == 1 else SEVERITY_CLASSES
    return truth, pred, classes


def score_task(records: Iterable[ScanRecord], preds: Mapping[str, np.ndarray], task: int) -> float:
    truth, pred, classes = task_labels(records, preds, task)
    if not truth:
        raise ValueError(f"no scans in the truth set are scored by task {task}")
    return macro_f1(truth, pred, classes)
