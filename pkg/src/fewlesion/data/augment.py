"""Training-time augmentation and resizing."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .sample import LesionSample


def vflip(sample: LesionSample) -> LesionSample:
    return replace(sample, image=sample.image[::-1].copy(), mask=sample.mask[::-1].copy())


def hflip(sample: LesionSample) -> LesionSample:
    return replace(sample, image=sample.image[:, ::-1].copy(), mask=sample.mask[:, ::-1].copy())


def augment(sample: LesionSample, rng: np.random.Generator, flip_p: float = 0.5,
            jitter: tuple[float, float] = (0.9, 1.1)) -> LesionSample:
    """Independent vertical/horizontal flips (image and mask together), then per-channel gain on the image.

    Draw order is fixed: vertical flip, horizontal flip, three channel gains.
    """
    do_v = rng.uniform() < flip_p
    do_h = rng.uniform() < flip_p
    gains = rng.uniform(jitter[0], jitter[1], size=3)
    out = sample
    if do_v:
        out = vflip(out)
    if do_h:
        out = hflip(out)
    return replace(out, image=np.clip(out.image * gains[None, None, :], 0.0, 1.0))


def nearest_indices(source: int, target: int) -> np.ndarray:
    """Source row/column sampled for each target pixel centre."""
    idx = np.floor((np.arange(target) + 0.5) * source / target).astype(np.int64)
    return np.minimum(idx, source - 1)


def resize_normalize(sample: LesionSample, side: int) -> LesionSample:
    if side < 8:
        raise ValueError(f"target side must be >= 8, got {side}")
    rows = nearest_indices(sample.image.shape[0], side)
    cols = nearest_indices(sample.image.shape[1], side)
    image = np.clip(sample.image[np.ix_(rows, cols)], 0.0, 1.0)
    mask = (sample.mask[np.ix_(rows, cols)] > 0).astype(np.uint8)
    return replace(sample, image=image, mask=mask)
