"""Resizing volumes to the standard training sizes.

Resizing is separable and runs axis by axis in the order depth, width,
height.  Along each axis that shrinks by a factor ``s > 1`` the data is first
smoothed with a Gaussian of standard deviation ``(s - 1) / 2``; samples are
then taken by linear interpolation at pixel-centre coordinates
``(i + 0.5) * s - 0.5``, clamped to the source grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .volume_io import check_volume


@dataclass(frozen=True)
class StandardSize:
    name: str
    depth: int
    width: int
    height: int

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.depth, self.width, self.height)


STANDARD_SIZES = {
    "small": StandardSize("small", 64, 128, 128),
    "medium": StandardSize("medium", 256, 256, 176),
    "large": StandardSize("large", 320, 320, 224),
}

Target = Union[str, StandardSize, tuple]


def target_shape(target: Target) -> tuple[int, int, int]:
    if isinstance(target, str):
        try:
            return STANDARD_SIZES[target.lower()].shape
        except KeyError:
            raise ValueError(
                f"unknown size {target!r}; choose from {', '.join(STANDARD_SIZES)}"
            ) from None
    if isinstance(target, StandardSize):
        return target.shape
    shape = tuple(int(n) for n in target)
    if len(shape) != 3:
        raise ValueError(f"target needs three dimensions, got {shape}")
    if min(shape) < 1:
        raise ValueError(f"target dimensions must be positive, got {shape}")
    return shape


def antialias_sigma(n_in: int, n_out: int) -> float:
    scale = n_in / n_out
    return (scale - 1.0) / 2.0 if scale > 1.0 else 0.0


def sample_positions(n_in: int, n_out: int) -> np.ndarray:
    """Source coordinates of the output pixel centres, clamped to the grid."""
    scale = n_in / n_out
    x = (np.arange(n_out) + 0.5) * scale - 0.5
    return np.clip(x, 0.0, n_in - 1.0)


def resize_axis(a: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = a.shape[axis]
    if n_out == n_in:
        return a
    sigma = antialias_sigma(n_in, n_out)
    if sigma > 0:
        a = gaussian_filter1d(a, sigma, axis=axis, mode="nearest")

    x = sample_positions(n_in, n_out)
    i0 = np.floor(x).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w_shape = [1] * a.ndim
    w_shape[axis] = n_out
    w = (x - i0).reshape(w_shape)
    return np.take(a, i0, axis=axis) * (1.0 - w) + np.take(a, i1, axis=axis) * w


def resize(volume: np.ndarray, target: Target) -> np.ndarray:
    """Resize ``volume`` to a standard size name, :class:`StandardSize` or explicit dims.

    Computation is in float64 and the result is float64.
    """
    out = check_volume(volume).astype(np.float64)
    for axis, n_out in enumerate(target_shape(target)):
        out = resize_axis(out, n_out, axis)
    return out
