from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LesionSample:
    """An RGB image in [0, 1] (S, S, 3), its binary lesion mask (S, S) and class label."""

    image: np.ndarray
    mask: np.ndarray
    label: int
    sample_id: str

    def validate(self) -> "LesionSample":
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"{self.sample_id}: image must be (S, S, 3), got {self.image.shape}")
        if self.mask.shape != self.image.shape[:2]:
            raise ValueError(f"{self.sample_id}: mask {self.mask.shape} does not match image {self.image.shape}")
        if not np.all(np.isfinite(self.image)):
            raise ValueError(f"{self.sample_id}: image has non-finite values")
        if not np.isin(self.mask, (0, 1)).all():
            raise ValueError(f"{self.sample_id}: mask is not binary")
        return self

    @property
    def mask_fraction(self) -> float:
        return float(np.mean(self.mask))


def stack_images(samples) -> np.ndarray:
    """(B, 3, S, S) float64 batch."""
    return np.ascontiguousarray(np.stack([s.image for s in samples]).transpose(0, 3, 1, 2), dtype=np.float64)


def stack_masks(samples) -> np.ndarray:
    """(B, 1, S, S) float64 batch."""
    return np.stack([s.mask for s in samples]).astype(np.float64)[:, None]
