"""Loading CT slice stacks, HU windowing and the CVOL binary volume format.

Volumes are plain ``numpy`` arrays of shape ``(depth, width, height)``:
depth runs along the longitudinal axis (one entry per slice), width along
the sagittal axis and height along the frontal axis.  A slice image's
columns map to the width axis and its rows to the height axis.
"""

from __future__ import annotations

import csv
import logging
import re
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .categories import Category

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff"}

# ITU-R BT.601 luma weights
REC601 = (0.299, 0.587, 0.114)

CVOL_MAGIC = b"CVOL"
CVOL_VERSION = 1
_HEADER = struct.Struct("<4sB3xIII")

PARTITIONS = ("train", "validation", "test")


class VolumeFormatError(ValueError):
    """A CVOL file or slice directory could not be interpreted."""


@dataclass(frozen=True)
class HuWindow:
    lo: float = -1150.0
    hi: float = 350.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"window lower bound {self.lo} must be below upper bound {self.hi}")

    @property
    def width(self) -> float:
        return self.hi - self.lo


DEFAULT_WINDOW = HuWindow()


def intensity_to_hu(v, window: HuWindow = DEFAULT_WINDOW):
    """Map normalized intensity to Hounsfield units (no clamping)."""
    return np.asarray(v, dtype=np.float64) * window.width + window.lo


def hu_to_intensity(h, window: HuWindow = DEFAULT_WINDOW):
    """Map Hounsfield units to normalized intensity, clamping to the window."""
    h = np.clip(np.asarray(h, dtype=np.float64), window.lo, window.hi)
    return (h - window.lo) / window.width


def check_volume(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    if v.ndim != 3 or min(v.shape) < 1:
        raise ValueError(f"expected a non-empty 3-D volume, got shape {v.shape}")
    return v


# --------------------------------------------------------------------------
# slice stacks
# --------------------------------------------------------------------------

_DIGITS = re.compile(r"(\d+)")


def natural_key(name: str) -> tuple:
    """Sort key treating digit runs as integers, so ``2.jpg`` < ``10.jpg``."""
    parts = _DIGITS.split(name)
    # (kind, value) pairs keep int/str comparisons well-typed
    return tuple((0, int(p)) if i % 2 else (1, p) for i, p in enumerate(parts))


def natural_sorted(names: Iterable[str]) -> list[str]:
    """Natural sort; raises if two names share a key (e.g. ``1.jpg`` and ``01.jpg``)."""
    names = sorted(names, key=lambda n: (natural_key(n), n))
    for a, b in zip(names, names[1:]):
        if natural_key(a) == natural_key(b):
            raise VolumeFormatError(f"ambiguous slice order: {a!r} and {b!r}")
    return names


def list_slice_files(dir_path: PathLike) -> list[Path]:
    dir_path = Path(dir_path)
    names = [
        p.name
        for p in dir_path.iterdir()
        if p.is_file() and not p.name.startswith(".") and p.suffix.lower() in IMAGE_SUFFIXES
    ]
    return [dir_path / n for n in natural_sorted(names)]


def _image_to_array(img: Image.Image) -> np.ndarray:
    """Return a 2-D float array in [0, 1] of shape (rows, cols)."""
    mode = img.mode
    if mode in ("I;16", "I;16B", "I;16L", "I;16N", "I"):
        return np.asarray(img, dtype=np.float64) / 65535.0
    if mode in ("1", "L"):
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    if mode == "LA":
        return np.asarray(img.getchannel("L"), dtype=np.float64) / 255.0
    if mode in ("P", "PA", "RGBA", "CMYK", "YCbCr"):
        img = img.convert("RGB")
        mode = "RGB"
    if mode == "RGB":
        rgb = np.asarray(img, dtype=np.float64)
        return (rgb @ np.asarray(REC601)) / 255.0
    raise VolumeFormatError(f"unsupported image mode {mode!r}")


def load_slice(path: PathLike) -> np.ndarray:
    """Load one slice as a ``(width, height)`` array in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            arr = _image_to_array(img)
    except (UnidentifiedImageError, OSError) as err:
        raise VolumeFormatError(f"{path.name}: cannot decode image ({err})") from err
    except VolumeFormatError as err:
        raise VolumeFormatError(f"{path.name}: {err}") from err
    return arr.T


def load_slice_stack(dir_path: PathLike, dtype=np.float32) -> np.ndarray:
    """Load a directory of transverse slice images into a normalized volume.

    Slices are ordered by natural filename sort.  8-bit images are scaled by
    1/255 and 16-bit images by 1/65535; colour images are reduced to luma.
    """
    dir_path = Path(dir_path)
    files = list_slice_files(dir_path)
    if not files:
        raise VolumeFormatError(f"{dir_path}: no slice images found")

    first = load_slice(files[0])
    volume = np.empty((len(files),) + first.shape, dtype=dtype)
    volume[0] = first
    for i, path in enumerate(files[1:], start=1):
        arr = load_slice(path)
        if arr.shape != first.shape:
            raise VolumeFormatError(
                f"{path.name}: slice size {arr.shape[::-1]} differs from "
                f"{files[0].name} size {first.shape[::-1]}"
            )
        volume[i] = arr
    return volume


# --------------------------------------------------------------------------
# CVOL binary format
# --------------------------------------------------------------------------

def write_volume(v: np.ndarray, path: PathLike) -> None:
    """Write a volume as CVOL: 20-byte header then little-endian float32 voxels."""
    v = check_volume(v)
    depth, width, height = v.shape
    payload = np.ascontiguousarray(v, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CVOL_MAGIC, CVOL_VERSION, depth, width, height))
        fh.write(payload.tobytes(order="C"))


def volume_bytes(v: np.ndarray) -> bytes:
    v = check_volume(v)
    header = _HEADER.pack(CVOL_MAGIC, CVOL_VERSION, *v.shape)
    return header + np.ascontiguousarray(v, dtype="<f4").tobytes(order="C")


def parse_volume(buf: bytes, name: str = "<bytes>") -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise VolumeFormatError(f"{name}: file too short for CVOL header ({len(buf)} bytes)")
    magic, version, depth, width, height = _HEADER.unpack_from(buf)
    if magic != CVOL_MAGIC:
        raise VolumeFormatError(f"{name}: bad magic {magic!r}")
    if version != CVOL_VERSION:
        raise VolumeFormatError(f"{name}: unsupported CVOL version {version}")
    if min(depth, width, height) < 1:
        raise VolumeFormatError(f"{name}: zero dimension in header {(depth, width, height)}")
    expected = depth * width * height * 4
    actual = len(buf) - _HEADER.size
    if actual != expected:
        raise VolumeFormatError(
            f"{name}: payload is {actual} bytes, header {depth}x{width}x{height} needs {expected}"
        )
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size)
    return data.reshape(depth, width, height).astype(np.float32)


def read_volume(path: PathLike) -> np.ndarray:
    path = Path(path)
    return parse_volume(path.read_bytes(), name=str(path))


# --------------------------------------------------------------------------
# dataset manifest
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanRecord:
    scan_id: str
    partition: str
    label: Optional[Category] = None  # None means unlabeled

    def __post_init__(self):
        if self.partition not in PARTITIONS:
            raise ValueError(f"unknown partition {self.partition!r}")


def _label_text(label: Optional[Category]) -> str:
    return "unlabeled" if label is None else label.label


def parse_label(text: str) -> Optional[Category]:
    text = text.strip().lower()
    if text in ("unlabeled", ""):
        return None
    return Category.parse(text)


def sniff_delimiter(first_line: str) -> str:
    return "\t" if "\t" in first_line else ","


def read_table(path: PathLike, required: tuple[str, ...]) -> list[tuple[int, dict]]:
    """Read a delimiter-separated table with a header row.

    Returns ``(line_number, row)`` pairs; blank lines are skipped.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines:
        raise VolumeFormatError(f"{path}: empty file")
    reader = csv.reader(lines, delimiter=sniff_delimiter(lines[0]))
    header = [h.strip() for h in next(reader)]
    missing = [c for c in required if c not in header]
    if missing:
        raise VolumeFormatError(f"{path}:1: missing column(s) {', '.join(missing)}")
    rows = []
    for lineno, fields in enumerate(reader, start=2):
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != len(header):
            raise VolumeFormatError(
                f"{path}:{lineno}: expected {len(header)} fields, found {len(fields)}"
            )
        rows.append((lineno, {k: v.strip() for k, v in zip(header, fields)}))
    return rows


def read_manifest(path: PathLike) -> list[ScanRecord]:
    """Read a ``scan_id, partition, label`` manifest.

    Repeated scan ids keep their first occurrence; later ones are dropped
    with a warning.
    """
    records: list[ScanRecord] = []
    seen: dict[str, int] = {}
    for lineno, row in read_table(path, ("scan_id", "partition", "label")):
        try:
            record = ScanRecord(row["scan_id"], row["partition"].lower(), parse_label(row["label"]))
        except ValueError as err:
            raise VolumeFormatError(f"{path}:{lineno}: {err}") from err
        if not record.scan_id:
            raise VolumeFormatError(f"{path}:{lineno}: empty scan_id")
        if record.scan_id in seen:
            warnings.warn(
                f"{path}:{lineno}: duplicate scan_id {record.scan_id!r} "
                f"(first on line {seen[record.scan_id]}) ignored"
            )
            continue
        seen[record.scan_id] = lineno
        records.append(record)
    return records


def write_manifest(records: Iterable[ScanRecord], path: PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scan_id", "partition", "label"])
        for r in records:
            writer.writerow([r.scan_id, r.partition, _label_text(r.label)])
