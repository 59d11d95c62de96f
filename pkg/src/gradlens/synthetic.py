"""Seeded synthetic image classification data.

Each image is a brightness offset, a smooth random low-frequency field and a
class motif. Pixel means are stratified over [0.2, 0.8]: in a draw of ``count``
images each one owns its own slice of that interval, which keeps means
distinct and spread out. The first six classes are radial (bright or dark disc, ring,
outer band), so labels survive rotations by any angle; all motifs are
symmetric under quarter turns and flips. The random field
keeps individual images far from rotation-invariant.
"""
from __future__ import annotations

import numpy as np

from .defense import LabeledBatch
from .errors import ContractViolation
from .imaging import Image


def _motifs(h: int, w: int) -> list[np.ndarray]:
    r, c = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    rad = np.hypot(r, c)
    disc = (rad < 0.45).astype(float)
    ring = ((rad >= 0.45) & (rad < 0.85)).astype(float)
    outer = (rad >= 0.85).astype(float)
    band = 0.35
    plus = ((np.abs(r) < band) | (np.abs(c) < band)).astype(float)
    cross = ((np.abs(r - c) < band) | (np.abs(r + c) < band)).astype(float)
    frame = (np.maximum(np.abs(r), np.abs(c)) > 0.7).astype(float)
    out = []
    for m in (disc, ring, outer, plus, cross, frame):
        m = m - m.mean()
        out += [m, -m]
    return out


def _field(rng: np.random.Generator, h: int, w: int, channels: int, amplitude: float) -> np.ndarray:
    r, c = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    out = np.zeros((h, w, channels))
    for ch in range(channels):
        for _ in range(3):
            fu, fv = rng.integers(-1, 2, size=2)
            if fu == 0 and fv == 0:
                fu = 1
            phase = rng.uniform(0, 2 * np.pi)
            out[:, :, ch] += rng.uniform(0.5, 1.0) * np.cos(2 * np.pi * (fu * r + fv * c) + phase)
    return amplitude * out / 3.0 * 2.0


def gen_synthetic(
    seed: int,
    count: int,
    shape: tuple[int, int, int] = (8, 8, 3),
    class_count: int = 4,
    *,
    motif_contrast: float = 0.3,
    field_amplitude: float = 0.2,
) -> LabeledBatch:
    """``count`` labelled images; classes are balanced and shuffled."""
    h, w, ch = shape
    motifs = _motifs(h, w)
    if not 1 <= class_count <= len(motifs):
        raise ContractViolation(f"class_count must be in [1, {len(motifs)}]")
    if count < class_count:
        raise ContractViolation("count must be >= class_count")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % class_count)
    # one target mean per stratum of [0.2, 0.8], strata assigned in random order
    strata = rng.permutation(count)
    images = []
    for y, slot in zip(labels, strata):
        target = 0.2 + 0.6 * (slot + rng.uniform(0.05, 0.95)) / count
        tint = rng.uniform(-0.05, 0.05, size=ch)
        rest = tint - tint.mean() + _field(rng, h, w, ch, field_amplitude) + motif_contrast * motifs[y][:, :, None]
        images.append(Image(_with_mean(rest, target)))
    return LabeledBatch(images, labels.tolist())


def _with_mean(rest: np.ndarray, target: float) -> np.ndarray:
    """``clip(level + rest)`` with ``level`` bisected so the mean equals ``target``."""
    lo, hi = -2.0, 3.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.clip(mid + rest, 0.0, 1.0).mean() < target:
            lo = mid
        else:
            hi = mid
    return np.clip(0.5 * (lo + hi) + rest, 0.0, 1.0)
