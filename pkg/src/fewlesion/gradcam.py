"""Grad-CAM saliency at the encoder's last conv stage."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fewshot, nets
from . import tensor_core as tc
from .data import netpbm, stack_images
from .data.sample import LesionSample
from .fusion import apply_mask
from .nets import ParamRegistry
from .tensor_core import Tensor


@dataclass
class SaliencyMap:
    heatmap: np.ndarray  # (S, S) in [0, 1]
    sample_id: str
    target: int
    in_mask_fraction: float


def in_mask_fraction(heatmap: np.ndarray, mask: np.ndarray) -> float:
    """Share of total saliency inside the mask; 0 for an all-zero map."""
    total = float(heatmap.sum())
    return float((heatmap * mask).sum()) / total if total > 0 else 0.0


def _network_input(seg_params, sample: LesionSample, use_fusion: bool) -> Tensor:
    images = Tensor(stack_images([sample]))
    if not use_fusion:
        return images
    with tc.no_grad():
        return apply_mask(images, nets.segnet_forward(seg_params, images)).detach()


def gradcam(seg_params: ParamRegistry, enc_params: ParamRegistry, sample: LesionSample, target: int,
            prototypes, use_fusion: bool = True, metric: str = "cosine") -> SaliencyMap:
    """Saliency of ``sample`` for the class ``target`` against fixed ``prototypes`` (k, D).

    The score is the class probability; channel weights are the spatial mean
    of its gradient at the last conv activation.
    """
    protos = prototypes.vectors.data if isinstance(prototypes, fewshot.PrototypeSet) else np.asarray(
        prototypes.data if isinstance(prototypes, Tensor) else prototypes
    )
    if not 0 <= target < protos.shape[0]:
        raise ValueError(f"target class {target} out of range for {protos.shape[0]} prototypes")
    x = _network_input(seg_params, sample, use_fusion)
    with tc.no_grad():
        features = nets.encoder_features(enc_params, x)
    if features.shape[1] == 0:
        raise ValueError("encoder's last conv stage has no channels")
    act = Tensor(features.data, requires_grad=True)
    emb = nets.encoder_head(enc_params, act)
    probs = fewshot.classify_queries(emb, Tensor(protos), metric)
    tc.backward(tc.index(probs, (0, target)))
    enc_params.zero_grad()

    a = act.data[0]
    weights = act.grad[0].mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, a, axes=(0, 0)), 0.0)
    side = sample.image.shape[0]
    factor = side // cam.shape[0]
    cam = np.repeat(np.repeat(cam, factor, axis=0), factor, axis=1)
    peak = cam.max()
    heatmap = cam / peak if peak > 0 else np.zeros_like(cam)
    return SaliencyMap(heatmap, sample.sample_id, int(target), in_mask_fraction(heatmap, sample.mask))


def sample_prototypes(seg_params, enc_params, samples_by_class: list[list[LesionSample]],
                      use_fusion: bool = True) -> np.ndarray:
    """(k, D) prototypes from the given per-class support lists."""
    rows = []
    with tc.no_grad():
        for support in samples_by_class:
            images = Tensor(stack_images(support))
            if use_fusion:
                images = apply_mask(images, nets.segnet_forward(seg_params, images))
            rows.append(nets.encoder_forward(enc_params, images).data.mean(axis=0))
    return np.stack(rows)


def export_heatmap(saliency: SaliencyMap, path) -> None:
    export_gray(saliency.heatmap, path)


def export_mask(mask, path) -> None:
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    export_gray(np.squeeze(m), path)


def export_gray(values: np.ndarray, path) -> None:
    """8-bit P5 file with ``round(255 * v)`` (halves up)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-d map, got shape {values.shape}")
    path = Path(path)
    if not path.parent.is_dir():
        raise OSError(f"cannot write {path}: directory does not exist")
    netpbm.write(path, netpbm.to_bytes(values))
