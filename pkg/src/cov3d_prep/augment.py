"""Sagittal reflection, brightness/contrast jitter and test-time averaging."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume_io import check_volume

WIDTH_AXIS = 1


@dataclass(frozen=True)
class AugmentParams:
    sigma_b: float = 0.0
    sigma_c: float = 0.0
    seed: int = 0
    flip_probability: float = 0.5

    def __post_init__(self):
        if self.sigma_b < 0 or self.sigma_c < 0:
            raise ValueError("sigma_b and sigma_c must be non-negative")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip_probability must lie in [0, 1]")


def reflect_sagittal(v: np.ndarray) -> np.ndarray:
    """Mirror the volume left/right by reversing the width axis."""
    return np.flip(check_volume(v), axis=WIDTH_AXIS).copy()


def brightness_contrast(v, brightness: float, contrast: float) -> np.ndarray:
    """``contrast * (v - 0.5) + 0.5 + brightness``, without clamping."""
    if not contrast > 0:
        raise ValueError(f"contrast must be positive, got {contrast}")
    v = np.asarray(v)
    return contrast * (v - 0.5) + 0.5 + brightness


class AugmentSampler:
    """Seeded source of brightness/contrast draws.

    ``B ~ Normal(0, sigma_b)`` and ``C = exp(Normal(0, sigma_c))``, with both
    sigmas read as standard deviations.  Give each worker its own sampler
    (see :meth:`spawn`); instances are not meant to be shared.
    """

    def __init__(self, params: AugmentParams):
        self.params = params
        self._seq = np.random.SeedSequence(params.seed)
        self.rng = np.random.default_rng(self._seq)

    def sample(self) -> tuple[float, float]:
        b, c = self.sample_many(1)
        return float(b[0]), float(c[0])

    def sample_many(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        # draw both normals even when a sigma is zero so the stream layout is fixed
        normals = self.rng.standard_normal((n, 2))
        b = self.params.sigma_b * normals[:, 0] if self.params.sigma_b > 0 else np.zeros(n)
        c = np.exp(self.params.sigma_c * normals[:, 1]) if self.params.sigma_c > 0 else np.ones(n)
        return b, c

    def flip(self) -> bool:
        return bool(self.rng.random() < self.params.flip_probability)

    def spawn(self, n: int) -> list[AugmentSampler]:
        children = []
        for seq in self._seq.spawn(n):
            child = AugmentSampler.__new__(AugmentSampler)
            child.params = self.params
            child._seq = seq
            child.rng = np.random.default_rng(seq)
            children.append(child)
        return children


def sample_params(params: AugmentParams, draw: int = 0) -> tuple[float, float]:
    """The ``draw``-th (brightness, contrast) pair for ``params.seed``.

    Independent of any other draw, so workers can index into the stream.
    """
    rng = np.random.default_rng([params.seed, draw])
    z_b, z_c = rng.standard_normal(2)
    b = params.sigma_b * z_b if params.sigma_b > 0 else 0.0
    c = float(np.exp(params.sigma_c * z_c)) if params.sigma_c > 0 else 1.0
    return float(b), c


def augment(v: np.ndarray, sampler: AugmentSampler) -> np.ndarray:
    """Training-time augmentation: random reflection then brightness/contrast."""
    if sampler.flip():
        v = reflect_sagittal(v)
    b, c = sampler.sample()
    return brightness_contrast(v, b, c)


def tta_average(p_original, p_reflected) -> np.ndarray:
    """Average the predictions for a volume and its reflection."""
    p_original = np.asarray(p_original, dtype=np.float64)
    p_reflected = np.asarray(p_reflected, dtype=np.float64)
    if p_original.shape != p_reflected.shape:
        raise ValueError("prediction shapes differ")
    return (p_original + p_reflected) / 2.0
