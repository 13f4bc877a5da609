"""Morphological lung segmentation and bounding-box cropping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume_io import check_volume, hu_to_intensity

#: -320 HU under the default window, about 0.5533
DEFAULT_THRESHOLD = float(hu_to_intensity(-320.0))

#: final masks smaller than this fraction of the volume are treated as failures
MIN_MASK_FRACTION = 1e-3

# face-connected neighbourhood
CONNECTIVITY_6 = ndimage.generate_binary_structure(3, 1)


class SegmentationEmpty(RuntimeError):
    """No plausible lung region was found."""

    def __init__(self, message: str, fraction: float = 0.0):
        super().__init__(message)
        self.fraction = fraction


def ball(radius: int) -> np.ndarray:
    """Discrete ball: voxels within Euclidean distance ``radius`` of the centre."""
    r = int(radius)
    if r < 0:
        raise ValueError("radius must be non-negative")
    grid = np.mgrid[-r : r + 1, -r : r + 1, -r : r + 1]
    return (grid**2).sum(axis=0) <= r * r


def border_labels(labels: np.ndarray) -> np.ndarray:
    """Labels of all components touching any face of the volume."""
    faces = [
        labels[0], labels[-1],
        labels[:, 0], labels[:, -1],
        labels[:, :, 0], labels[:, :, -1],
    ]
    found = np.unique(np.concatenate([f.ravel() for f in faces]))
    return found[found != 0]


def _close_component(component: np.ndarray, radius: int) -> np.ndarray:
    # pad so erosion never sees the array edge as background next to the shape
    pad = 2 * radius + 1
    padded = np.pad(component, pad)
    closed = ndimage.binary_closing(padded, structure=ball(radius))
    return closed[pad:-pad, pad:-pad, pad:-pad]


def segment_lungs(
    volume: np.ndarray,
    threshold: float = DEFAULT_THRESHOLD,
    min_component_fraction: float = 0.01,
    closing_radius: int = 2,
) -> np.ndarray:
    """Boolean lung mask for a normalized CT volume.

    Low-intensity voxels are grouped into 6-connected components.  Components
    touching a face of the volume (outside air, scanner bore) are dropped, as
    are components smaller than ``min_component_fraction`` of the volume.
    Each surviving component is closed with a ball of ``closing_radius`` and
    the result is their union.

    Raises:
        SegmentationEmpty: if the mask covers less than 0.1% of the volume.
    """
    volume = check_volume(volume)
    if closing_radius < 0:
        raise ValueError("closing_radius must be non-negative")

    air = volume < threshold
    labels, count = ndimage.label(air, structure=CONNECTIVITY_6)
    sizes = np.bincount(labels.ravel(), minlength=count + 1)
    sizes[0] = 0
    sizes[border_labels(labels)] = 0

    min_size = min_component_fraction * volume.size
    kept = [lab for lab in range(1, count + 1) if sizes[lab] > 0 and sizes[lab] >= min_size]

    mask = np.zeros(volume.shape, dtype=bool)
    if kept:
        boxes = ndimage.find_objects(labels)
        for lab in kept:
            box = boxes[lab - 1]
            if closing_radius == 0:
                mask[box] |= labels[box] == lab
                continue
            mask[box] |= _close_component(labels[box] == lab, closing_radius)

    fraction = float(mask.mean())
    if fraction < MIN_MASK_FRACTION:
        raise SegmentationEmpty(
            f"lung mask covers {fraction:.4%} of the volume ({len(kept)} components kept)",
            fraction,
        )
    return mask


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive voxel extent ``lo[i] .. hi[i]`` along depth, width, height."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        if len(self.lo) != 3 or len(self.hi) != 3:
            raise ValueError("bounding box needs three axes")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"inverted bounding box {self.lo}..{self.hi}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(a, b + 1) for a, b in zip(self.lo, self.hi))

    @classmethod
    def full(cls, shape) -> BoundingBox:
        return cls((0, 0, 0), tuple(int(n) - 1 for n in shape))

    def fits(self, shape) -> bool:
        return all(a >= 0 for a in self.lo) and all(b < n for b, n in zip(self.hi, shape))

    def as_list(self) -> list[int]:
        return [*self.lo, *self.hi]


def mask_bounding_box(mask: np.ndarray, margin: int = 2) -> BoundingBox:
    """Tightest box around the true voxels, grown by ``margin`` and clamped to the volume."""
    mask = check_volume(mask)
    if margin < 0:
        raise ValueError("margin must be non-negative")
    lo, hi = [], []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        hits = np.flatnonzero(mask.any(axis=other))
        if hits.size == 0:
            raise ValueError("mask has no true voxels")
        lo.append(max(int(hits[0]) - margin, 0))
        hi.append(min(int(hits[-1]) + margin, mask.shape[axis] - 1))
    return BoundingBox(tuple(lo), tuple(hi))


def crop(volume: np.ndarray, box: BoundingBox) -> np.ndarray:
    volume = check_volume(volume)
    if not box.fits(volume.shape):
        raise ValueError(f"bounding box {box.lo}..{box.hi} outside volume of shape {volume.shape}")
    return volume[box.slices].copy()
