"""Command-line front end.

Every option can also be set through an environment variable named
``COV3D_PREP_<OPTION>`` (upper case, dashes as underscores), for example
``COV3D_PREP_JOBS=8``.  Command-line flags win over the environment.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import FIRST_COMPLETED, Future, ProcessPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .folds import fold_counts, make_folds, write_folds
from .loss import gradient_check
from .lungseg import DEFAULT_THRESHOLD, BoundingBox, SegmentationEmpty, crop, mask_bounding_box, segment_lungs
from .metrics import ensemble_average, read_predictions, score_task, write_predictions
from .resample import STANDARD_SIZES, resize
from .volume_io import IMAGE_SUFFIXES, VolumeFormatError, load_slice_stack, read_manifest, write_volume

log = logging.getLogger("cov3d_prep")

ENV_PREFIX = "COV3D_PREP_"
REPORT_NAME = "preprocess_report.json"


def env_default(name: str, default, cast=str):
    value = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if value is None:
        return default
    if cast is bool:
        return value.strip().lower() in ("1", "true", "yes", "on")
    return cast(value)


class CliError(Exception):
    """Fatal error reported to the user without a traceback."""


# --------------------------------------------------------------------------
# preprocess
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class JobConfig:
    input_root: Path
    output_root: Path
    size: str = "medium"
    threshold: float = DEFAULT_THRESHOLD
    min_component: float = 0.01
    closing_radius: int = 2
    margin: int = 2
    jobs: int = 1
    force: bool = False

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        if self.size not in STANDARD_SIZES:
            raise ValueError(f"unknown size {self.size!r}")


def find_scans(root: Path) -> list[tuple[str, Path]]:
    """``(scan_id, directory)`` for every directory under ``root`` holding slice images."""
    scans = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        if any(Path(f).suffix.lower() in IMAGE_SUFFIXES and not f.startswith(".") for f in filenames):
            rel = Path(dirpath).relative_to(root)
            scan_id = root.name if rel == Path(".") else rel.as_posix()
            scans.append((scan_id, Path(dirpath)))
    return sorted(scans)


def output_path(cfg: JobConfig, scan_id: str) -> Path:
    return cfg.output_root / f"{scan_id}.cvol"


def preprocess_scan(cfg: JobConfig, scan_id: str, scan_dir: Path) -> dict:
    """Run load, segment, crop, resize and write for one scan; never raises."""
    start = time.perf_counter()
    out = output_path(cfg, scan_id)
    entry = {"scan_id": scan_id, "output": str(out)}
    if out.exists() and not cfg.force:
        entry["status"] = "skipped"
        entry["seconds"] = 0.0
        return entry
    try:
        volume = load_slice_stack(scan_dir)
        entry["input_shape"] = list(volume.shape)
        try:
            mask = segment_lungs(volume, cfg.threshold, cfg.min_component, cfg.closing_radius)
            entry["mask_fraction"] = float(mask.mean())
            box = mask_bounding_box(mask, cfg.margin)
            entry["status"] = "ok"
        except SegmentationEmpty as err:
            entry["mask_fraction"] = err.fraction
            box = BoundingBox.full(volume.shape)
            entry["status"] = "fallback"
            entry["message"] = str(err)
        entry["box"] = box.as_list()
        result = resize(crop(volume, box), cfg.size).astype(np.float32)
        out.parent.mkdir(parents=True, exist_ok=True)
        tmp = out.with_name(out.name + ".part")
        write_volume(result, tmp)
        os.replace(tmp, out)
    except (VolumeFormatError, OSError, ValueError) as err:
        entry["status"] = "error"
        entry["message"] = str(err)
    entry["seconds"] = round(time.perf_counter() - start, 4)
    return entry


def _format_entry(e: dict) -> str:
    parts = [f"{e['status']:8s}", e["scan_id"]]
    if "mask_fraction" in e:
        parts.append(f"mask={e['mask_fraction']:.4f}")
    if "box" in e:
        parts.append("box=" + ",".join(map(str, e["box"])))
    parts.append(f"{e['seconds']:.2f}s")
    if "message" in e:
        parts.append(f"({e['message']})")
    return "  ".join(parts)


def run_preprocess(cfg: JobConfig, stream=None) -> dict:
    stream = stream or sys.stdout
    if not cfg.input_root.is_dir():
        raise CliError(f"input root {cfg.input_root} is not a directory")
    try:
        cfg.output_root.mkdir(parents=True, exist_ok=True)
        probe = cfg.output_root / ".write_test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as err:
        raise CliError(f"output root {cfg.output_root} is not writable: {err}") from err

    scans = find_scans(cfg.input_root)
    entries: list[dict] = []

    def record(entry: dict):
        entries.append(entry)
        print(_format_entry(entry), file=stream, flush=True)

    if cfg.jobs == 1 or len(scans) <= 1:
        for scan_id, scan_dir in scans:
            record(preprocess_scan(cfg, scan_id, scan_dir))
    else:
        # bounded queue: at most 2 * jobs scans submitted at once
        pending: set[Future] = set()
        todo = iter(scans)
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            while True:
                while len(pending) < 2 * cfg.jobs:
                    nxt = next(todo, None)
                    if nxt is None:
                        break
                    pending.add(pool.submit(preprocess_scan, cfg, *nxt))
                if not pending:
                    break
                done, pending = wait(pending, return_when=FIRST_COMPLETED)
                for fut in done:
                    record(fut.result())

    entries.sort(key=lambda e: e["scan_id"])
    counts = {s: sum(e["status"] == s for e in entries) for s in ("ok", "fallback", "skipped", "error")}
    report = {
        "size": cfg.size,
        "target_shape": list(STANDARD_SIZES[cfg.size].shape),
        "scans": len(entries),
        **counts,
        "entries": entries,
    }
    (cfg.output_root / REPORT_NAME).write_text(json.dumps(report, indent=2) + "\n")
    summary = {k: v for k, v in report.items() if k != "entries"}
    print("# summary " + json.dumps(summary, sort_keys=True), file=stream)
    return report


def cmd_preprocess(args) -> int:
    cfg = JobConfig(
        input_root=Path(args.input),
        output_root=Path(args.output),
        size=args.size,
        threshold=args.threshold,
        min_component=args.min_component,
        closing_radius=args.closing_radius,
        margin=args.margin,
        jobs=args.jobs,
        force=args.force,
    )
    run_preprocess(cfg)
    return 0


# --------------------------------------------------------------------------
# split / score / ensemble / losscheck
# --------------------------------------------------------------------------

def cmd_split(args) -> int:
    records = read_manifest(args.manifest)
    folds = make_folds(records, args.seed)
    write_folds(folds, args.out)
    counts = fold_counts(folds, records)
    labels = sorted({lab for lab, _ in counts}, key=lambda c: (c is None, c if c is not None else 0))
    print("category\t" + "\t".join(f"fold{i}" for i in range(5)))
    for lab in labels:
        name = "unlabeled" if lab is None else lab.label
        print(name + "\t" + "\t".join(str(counts[(lab, i)]) for i in range(5)))
    return 0


def cmd_score(args) -> int:
    records = read_manifest(args.truth)
    preds = read_predictions(args.pred)
    print(score_task(records, preds, args.task))
    return 0


def cmd_ensemble(args) -> int:
    sets = [read_predictions(p) for p in args.pred]
    write_predictions(ensemble_average(sets), args.out)
    return 0


def cmd_losscheck(args) -> int:
    start = time.perf_counter()
    report = gradient_check(args.trials, args.seed, args.tolerance)
    for t, err, z, y, cfg in report.failures[:20]:
        print(f"FAIL trial {t}: rel_err={err:.3e} z={np.round(z, 6).tolist()} y={y} {cfg}")
    status = "PASS" if report.passed else "FAIL"
    print(
        f"{status} {report.trials - len(report.failures)}/{report.trials} gradient checks, "
        f"max rel. error {report.max_error:.3e} (tolerance {report.tolerance:g}), "
        f"{time.perf_counter() - start:.2f}s"
    )
    return 0 if report.passed else 1


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cov3d-prep", description="CT preprocessing, fold splitting, scoring and loss checks.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="segment, crop and resize slice stacks to CVOL files")
    p.add_argument("--input", default=env_default("input", None), required=env_default("input", None) is None)
    p.add_argument("--output", default=env_default("output", None), required=env_default("output", None) is None)
    p.add_argument("--size", choices=sorted(STANDARD_SIZES), default=env_default("size", "medium"))
    p.add_argument("--threshold", type=float, default=env_default("threshold", DEFAULT_THRESHOLD, float))
    p.add_argument("--min-component", type=float, default=env_default("min_component", 0.01, float))
    p.add_argument("--closing-radius", type=int, default=env_default("closing_radius", 2, int))
    p.add_argument("--margin", type=int, default=env_default("margin", 2, int))
    p.add_argument("--jobs", type=int, default=env_default("jobs", 1, int))
    p.add_argument("--force", action="store_true", default=env_default("force", False, bool))
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("split", help="assign scans to cross-validation folds")
    p.add_argument("--manifest", default=env_default("manifest", None), required=env_default("manifest", None) is None)
    p.add_argument("--seed", type=int, default=env_default("seed", 0, int))
    p.add_argument("--out", default=env_default("out", None), required=env_default("out", None) is None)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("score", help="macro F1 of a prediction file")
    p.add_argument("--truth", default=env_default("truth", None), required=env_default("truth", None) is None)
    p.add_argument("--pred", default=env_default("pred", None), required=env_default("pred", None) is None)
    p.add_argument("--task", type=int, choices=(1, 2), default=env_default("task", None, int),
                   required=env_default("task", None) is None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("ensemble", help="average several prediction files")
    p.add_argument("--out", default=env_default("out", None), required=env_default("out", None) is None)
    p.add_argument("pred", nargs="+")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("losscheck", help="finite-difference check of the loss gradient")
    p.add_argument("--trials", type=int, default=env_default("trials", 1000, int))
    p.add_argument("--seed", type=int, default=env_default("seed", 0, int))
    p.add_argument("--tolerance", type=float, default=env_default("tolerance", 1e-5, float))
    p.set_defaults(func=cmd_losscheck)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, VolumeFormatError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
