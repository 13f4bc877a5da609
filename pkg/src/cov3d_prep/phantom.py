"""Synthetic chest phantoms with known lung masks, for tests and demos."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .volume_io import PathLike

AIR = 0.1
TISSUE = 0.9


def ellipsoid(shape, center, semi_axes) -> np.ndarray:
    """Voxels whose index lies inside the ellipsoid."""
    grids = np.ogrid[tuple(slice(0, n) for n in shape)]
    r2 = sum(((g - c) / a) ** 2 for g, c, a in zip(grids, center, semi_axes))
    return r2 <= 1.0


def lung_phantom(shape=(96, 96, 96), air: float = AIR, tissue: float = TISSUE,
                 vessel_spacing: int = 0):
    """Tissue block in outside air, with two ellipsoidal air cavities as lungs.

    The block leaves a border of ``shape // 12`` voxels of air on every side;
    the cavities sit side by side along the width axis.  With
    ``vessel_spacing > 0`` single tissue voxels are scattered on a lattice of
    that pitch deep inside the cavities; they still count as lung in the
    returned mask.  Returns the volume and the true lung mask.
    """
    d, w, h = shape
    volume = np.full(shape, air, dtype=np.float64)
    pad = [max(n // 12, 1) for n in shape]
    volume[pad[0]:d - pad[0], pad[1]:w - pad[1], pad[2]:h - pad[2]] = tissue

    semi = (0.31 * d, 0.125 * w, 0.21 * h)
    left = ellipsoid(shape, (d / 2 - 0.5, 0.31 * w, h / 2 - 0.5), semi)
    right = ellipsoid(shape, (d / 2 - 0.5, 0.69 * w - 1, h / 2 - 0.5), semi)
    lungs = left | right
    volume[lungs] = air
    if vessel_spacing > 0:
        inner = ellipsoid(shape, (d / 2 - 0.5, 0.31 * w, h / 2 - 0.5), [0.6 * a for a in semi])
        inner |= ellipsoid(shape, (d / 2 - 0.5, 0.69 * w - 1, h / 2 - 0.5), [0.6 * a for a in semi])
        lattice = np.zeros(shape, dtype=bool)
        lattice[::vessel_spacing, ::vessel_spacing, ::vessel_spacing] = True
        volume[inner & lattice] = tissue
    return volume, lungs


def write_slice_stack(volume: np.ndarray, dir_path: PathLike, suffix: str = ".png") -> list[Path]:
    """Write a volume in [0, 1] as 8-bit slice images named ``1.png``, ``2.png``, ..."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    pixels = np.clip(np.rint(np.asarray(volume) * 255.0), 0, 255).astype(np.uint8)
    paths = []
    for i, sl in enumerate(pixels, start=1):
        path = dir_path / f"{i}{suffix}"
        # slice arrays are (width, height); images are (rows=height, cols=width)
        Image.fromarray(np.ascontiguousarray(sl.T), mode="L").save(path)
        paths.append(path)
    return paths
