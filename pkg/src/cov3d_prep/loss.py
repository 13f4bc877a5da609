"""Focal + Earth Mover's Distance loss over ordered COVID-19 categories.

Class 0 is COVID-19 negative and classes 1..N-1 are increasing severities.
A label is either a class index or ``POSITIVE_UNKNOWN`` (-1) for a positive
scan without a severity annotation; such scans only supervise ``1 - p_0``.

All functions work for any number of classes ``N >= 2``; the distance spec
then needs ``N - 1`` adjacent distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .categories import NUM_CLASSES, POSITIVE_UNKNOWN

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class DistanceSpec:
    """Distances between neighbouring categories plus the negative/positive gap."""

    adjacent: tuple[float, ...] = (1.0,) * (NUM_CLASSES - 1)
    d_negpos: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "adjacent", tuple(float(d) for d in self.adjacent))
        if len(self.adjacent) < 1:
            raise ValueError("need at least one adjacent distance")
        if any(d < 0 for d in self.adjacent) or self.d_negpos < 0:
            raise ValueError("distances must be non-negative")

    @property
    def num_classes(self) -> int:
        return len(self.adjacent) + 1


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    lam: float = 0.2
    distances: DistanceSpec = field(default_factory=DistanceSpec)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")


def _label(y, n: int) -> int:
    c = int(y)
    if c != POSITIVE_UNKNOWN and not 0 <= c < n:
        raise ValueError(f"label {y!r} out of range for {n} classes")
    return c


def softmax(z) -> np.ndarray:
    """Softmax over the last axis with max subtraction."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _rest(p: np.ndarray, c: int) -> float:
    # 1 - p_c summed from the other entries; stays accurate as p_c -> 1
    return float(p.sum() - p[c]) if p.size > 1 else 0.0


def focal_loss(p, y, gamma: float) -> float:
    """Focal loss of one probability vector.

    For a class label ``c``: ``-(1 - p_c)**gamma * log(p_c)``.
    For ``POSITIVE_UNKNOWN``: ``-p_0**gamma * log(1 - p_0)``.
    Log arguments are clamped below at 1e-12.
    """
    p = np.asarray(p, dtype=np.float64)
    c = _label(y, p.size)
    if c == POSITIVE_UNKNOWN:
        p0 = p[0]
        return float(-(p0**gamma) * np.log(max(_rest(p, 0), LOG_CLAMP)))
    return float(-(_rest(p, c) ** gamma) * np.log(max(p[c], LOG_CLAMP)))


def distance_matrix(d: DistanceSpec = DistanceSpec()) -> np.ndarray:
    """Symmetric chain distances: ``D[a, b]`` sums the adjacent gaps between a and b."""
    position = np.concatenate([[0.0], np.cumsum(d.adjacent)])
    return np.abs(position[:, None] - position[None, :])


def emd_loss(p, y, d: DistanceSpec = DistanceSpec()) -> float:
    """Expected distance from the predicted mass to the true category."""
    p = np.asarray(p, dtype=np.float64)
    if p.size != d.num_classes:
        raise ValueError(f"{p.size} probabilities but {d.num_classes} categories in distance spec")
    c = _label(y, p.size)
    if c == POSITIVE_UNKNOWN:
        return float(p[0] * d.d_negpos)
    return float(p @ distance_matrix(d)[:, c])


def combined_loss(z, y, cfg: LossConfig = LossConfig()) -> float:
    """``(1 - lam) * focal + lam * emd`` evaluated on ``softmax(z)``."""
    p = softmax(z)
    return (1.0 - cfg.lam) * focal_loss(p, y, cfg.gamma) + cfg.lam * emd_loss(p, y, cfg.distances)


def _focal_dz(p: np.ndarray, c: int, gamma: float) -> np.ndarray:
    n = p.size
    k = 0 if c == POSITIVE_UNKNOWN else c
    onehot = np.zeros(n)
    onehot[k] = 1.0
    if c == POSITIVE_UNKNOWN:
        # L = -p0^g log q, q = 1 - p0;  h = p0 * dL/dp0
        p0, q = p[0], _rest(p, 0)
        log_q = np.log(max(q, LOG_CLAMP))
        h = -gamma * p0**gamma * log_q
        if q > LOG_CLAMP:
            h += p0 ** (gamma + 1.0) / q
    else:
        # L = -q^g log pc, q = 1 - pc;  h = pc * dL/dpc
        pc, q = p[c], _rest(p, c)
        h = -(q**gamma) if pc > LOG_CLAMP else 0.0
        if gamma > 0 and q > 0:
            h += gamma * q ** (gamma - 1.0) * pc * np.log(max(pc, LOG_CLAMP))
    # softmax Jacobian applied to a gradient concentrated on one entry
    return h * (onehot - p)


def _emd_dz(p: np.ndarray, c: int, d: DistanceSpec) -> np.ndarray:
    if c == POSITIVE_UNKNOWN:
        onehot = np.zeros(p.size)
        onehot[0] = 1.0
        return d.d_negpos * p[0] * (onehot - p)
    g = distance_matrix(d)[:, c]
    return p * (g - p @ g)


def combined_loss_grad(z, y, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Analytic gradient of :func:`combined_loss` with respect to the logits."""
    p = softmax(z)
    if p.size != cfg.distances.num_classes:
        raise ValueError(
            f"{p.size} logits but {cfg.distances.num_classes} categories in distance spec"
        )
    c = _label(y, p.size)
    return (1.0 - cfg.lam) * _focal_dz(p, c, cfg.gamma) + cfg.lam * _emd_dz(p, c, cfg.distances)


def batch_loss(z, labels: Sequence, cfg: LossConfig = LossConfig()) -> float:
    """Mean combined loss over a batch of logits with shape ``(B, N)``."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if len(labels) != z.shape[0]:
        raise ValueError("one label per row of logits required")
    return float(np.mean([combined_loss(row, y, cfg) for row, y in zip(z, labels)]))


def batch_loss_grad(z, labels: Sequence, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Gradient of :func:`batch_loss`; same shape as ``z``."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if len(labels) != z.shape[0]:
        raise ValueError("one label per row of logits required")
    grads = [combined_loss_grad(row, y, cfg) for row, y in zip(z, labels)]
    return np.stack(grads) / z.shape[0]


# --------------------------------------------------------------------------
# finite-difference gradient check
# --------------------------------------------------------------------------

def numeric_grad(z, y, cfg: LossConfig, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of :func:`combined_loss`."""
    z = np.asarray(z, dtype=np.float64)
    grad = np.empty_like(z)
    for j in range(z.size):
        hi, lo = z.copy(), z.copy()
        hi[j] += step
        lo[j] -= step
        grad[j] = (combined_loss(hi, y, cfg) - combined_loss(lo, y, cfg)) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)`` in the Euclidean norm."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


@dataclass
class GradCheckReport:
    trials: int
    tolerance: float
    failures: list = field(default_factory=list)
    max_error: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures


def random_case(rng: np.random.Generator, num_classes: int = NUM_CLASSES):
    """Random logits, label and config in the ranges used by the gradient check."""
    z = rng.uniform(-4.0, 4.0, size=num_classes)
    y = int(rng.integers(-1, num_classes))
    cfg = LossConfig(
        gamma=float(rng.uniform(0.0, 3.0)),
        lam=float(rng.uniform(0.0, 1.0)),
        distances=DistanceSpec(
            tuple(rng.uniform(0.1, 2.0, size=num_classes - 1)),
            float(rng.uniform(0.1, 2.0)),
        ),
    )
    return z, y, cfg


def gradient_check(trials: int = 1000, seed: int = 0, tolerance: float = 1e-5,
                   step: float = 1e-6) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    report = GradCheckReport(trials, tolerance)
    for t in range(trials):
        z, y, cfg = random_case(rng)
        err = relative_error(combined_loss_grad(z, y, cfg), numeric_grad(z, y, cfg, step))
        report.max_error = max(report.max_error, err)
        if not err < tolerance:
            report.failures.append((t, err, z, y, cfg))
    return report
