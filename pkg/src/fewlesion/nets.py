"""Embedding encoder and skip-connected segmenter built on ``tensor_core``."""
from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor_core as tc
from .tensor_core import Tensor

BIAS_INIT = 0.01
MASK_LO = float(np.finfo(np.float64).tiny)
MASK_HI = float(np.nextafter(1.0, 0.0))


class ParamRegistry:
    """Ordered ``name -> (Tensor, trainable)`` map.

    Names are dotted, ``<net>.<group>.<layer>.<w|b>``; the second component is
    the freezing group (``stage0``, ``fc``, ``down1``, ``head`` ...).
    """

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name '{name}'")
        t = Tensor(value, requires_grad=trainable)
        self._params[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def trainable_items(self) -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self._params.items() if self._trainable[n])

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, flag: bool) -> None:
        self._trainable[name] = flag
        self._params[name].requires_grad = flag

    def groups(self) -> list[str]:
        seen = []
        for name in self._params:
            g = group_of(name)
            if g not in seen:
                seen.append(g)
        return seen

    def count(self, trainable_only: bool = False) -> int:
        return sum(t.size for n, t in self._params.items() if self._trainable[n] or not trainable_only)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy values in by name; every registry parameter must be present with a matching shape."""
        for name, t in self._params.items():
            if name not in state:
                raise ValueError(f"checkpoint is missing parameter '{name}'")
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ValueError(f"parameter '{name}': checkpoint shape {value.shape} != model shape {t.shape}")
            t.data = value.copy()

    def copy(self) -> "ParamRegistry":
        other = ParamRegistry()
        for name, t in self._params.items():
            other.add(name, t.data.copy(), self._trainable[name])
        return other

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self._params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None


def group_of(name: str) -> str:
    parts = name.split(".")
    return parts[1] if len(parts) > 2 else parts[0]


def freeze_all(params: ParamRegistry) -> ParamRegistry:
    for name in params.names():
        params.set_trainable(name, False)
    return params


def freeze_groups(params: ParamRegistry, trainable_groups) -> ParamRegistry:
    """Make exactly the parameters of ``trainable_groups`` trainable."""
    wanted = set(trainable_groups)
    unknown = wanted - set(params.groups())
    if unknown:
        raise ValueError(f"unknown parameter groups {sorted(unknown)}; have {params.groups()}")
    for name in params.names():
        params.set_trainable(name, group_of(name) in wanted)
    return params


def freeze_all_but_head(params: ParamRegistry) -> ParamRegistry:
    if "head" not in params.groups():
        raise ValueError("registry has no 'head' parameter group")
    return freeze_groups(params, ["head"])


def _he(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _conv_params(reg: ParamRegistry, prefix: str, rng, c_in: int, c_out: int, k: int) -> None:
    reg.add(f"{prefix}.w", _he(rng, (c_out, c_in, k, k), c_in * k * k))
    reg.add(f"{prefix}.b", np.full(c_out, BIAS_INIT))


# -- encoder --------------------------------------------------------------

@dataclass(frozen=True)
class EncoderConfig:
    side: int = 64
    widths: tuple[int, ...] = (8, 16, 32)
    embed_dim: int = 64
    in_channels: int = 3

    def __post_init__(self):
        if not self.widths:
            raise ValueError("encoder needs at least one stage")
        if self.side % (2 ** len(self.widths)):
            raise ValueError(f"input side {self.side} is not divisible by 2^{len(self.widths)}")
        if self.embed_dim < 2:
            raise ValueError(f"embedding dimension must be >= 2, got {self.embed_dim}")


def encoder_param_count(config: EncoderConfig) -> int:
    total, c = 0, config.in_channels
    for w in config.widths:
        total += c * 9 * w + w
        c = w
    return total + c * config.embed_dim + config.embed_dim


def build_encoder(config: EncoderConfig, rng: np.random.Generator) -> ParamRegistry:
    reg = ParamRegistry()
    c = config.in_channels
    for i, w in enumerate(config.widths):
        _conv_params(reg, f"enc.stage{i}.conv", rng, c, w, 3)
        c = w
    reg.add("enc.fc.w", _he(rng, (c, config.embed_dim), c))
    reg.add("enc.fc.b", np.full(config.embed_dim, BIAS_INIT))
    return reg


def _stage_count(params: ParamRegistry, prefix: str) -> int:
    n = 0
    while f"{prefix}{n}.conv.w" in params:
        n += 1
    return n


def _check_images(images: Tensor, params: ParamRegistry, first_conv: str) -> None:
    if images.ndim != 4:
        raise ValueError(f"expected images of shape (B, C, S, S), got {images.shape}")
    c_in = params[first_conv].shape[1]
    if images.shape[1] != c_in:
        raise ValueError(f"images have {images.shape[1]} channels, network expects {c_in}")


def encoder_features(params: ParamRegistry, images: Tensor) -> Tensor:
    """Conv stages up to the last conv activation (post-ReLU, before its pooling)."""
    _check_images(images, params, "enc.stage0.conv.w")
    stages = _stage_count(params, "enc.stage")
    side = images.shape[2]
    if images.shape[3] != side or side % (2**stages):
        raise ValueError(f"image size {images.shape[2:]} must be square and divisible by 2^{stages}")
    x = images
    for i in range(stages):
        if i:
            x = tc.max_pool2d(x)
        x = tc.relu(tc.conv2d(x, params[f"enc.stage{i}.conv.w"], params[f"enc.stage{i}.conv.b"], 1, 1))
    return x


def encoder_head(params: ParamRegistry, features: Tensor) -> Tensor:
    x = tc.global_avg_pool(tc.max_pool2d(features))
    return tc.linear(x, params["enc.fc.w"], params["enc.fc.b"])


def encoder_forward(params: ParamRegistry, images: Tensor) -> Tensor:
    """(B, 3, S, S) images in [0, 1] -> (B, D) embeddings."""
    return encoder_head(params, encoder_features(params, images))


# -- segmenter ------------------------------------------------------------

@dataclass(frozen=True)
class SegNetConfig:
    side: int = 64
    widths: tuple[int, ...] = (8, 16)
    skip: bool = True
    in_channels: int = 3

    def __post_init__(self):
        if not self.widths:
            raise ValueError("segmenter needs at least one stage")
        if self.side % (2 ** len(self.widths)):
            raise ValueError(f"input side {self.side} is not divisible by 2^{len(self.widths)}")


def segnet_param_count(config: SegNetConfig) -> int:
    total, c = 0, config.in_channels
    for w in config.widths:
        total += c * 9 * w + w
        c = w
    for w in reversed(config.widths):
        c_in = c + (w if config.skip else 0)
        total += c_in * 9 * w + w
        c = w
    return total + c + 1


def build_segnet(config: SegNetConfig, rng: np.random.Generator) -> ParamRegistry:
    reg = ParamRegistry()
    c = config.in_channels
    for i, w in enumerate(config.widths):
        _conv_params(reg, f"seg.down{i}.conv", rng, c, w, 3)
        c = w
    for i in reversed(range(len(config.widths))):
        w = config.widths[i]
        _conv_params(reg, f"seg.up{i}.conv", rng, c + (w if config.skip else 0), w, 3)
        c = w
    _conv_params(reg, "seg.head", rng, c, 1, 1)
    return reg


def segnet_logits(params: ParamRegistry, images: Tensor) -> Tensor:
    _check_images(images, params, "seg.down0.conv.w")
    stages = _stage_count(params, "seg.down")
    side = images.shape[2]
    if images.shape[3] != side or side % (2**stages):
        raise ValueError(f"image size {images.shape[2:]} must be square and divisible by 2^{stages}")
    skips = []
    x = images
    for i in range(stages):
        x = tc.relu(tc.conv2d(x, params[f"seg.down{i}.conv.w"], params[f"seg.down{i}.conv.b"], 1, 1))
        skips.append(x)
        x = tc.max_pool2d(x)
    for i in reversed(range(stages)):
        x = tc.upsample_nearest(x)
        # skip wiring is read off the decoder kernel's input width
        if params[f"seg.up{i}.conv.w"].shape[1] != x.shape[1]:
            x = tc.concat([x, skips[i]], axis=1)
        x = tc.relu(tc.conv2d(x, params[f"seg.up{i}.conv.w"], params[f"seg.up{i}.conv.b"], 1, 1))
    return tc.conv2d(x, params["seg.head.w"], params["seg.head.b"])


def segnet_forward(params: ParamRegistry, images: Tensor) -> Tensor:
    """(B, 3, S, S) images -> (B, 1, S, S) soft lesion mask in (0, 1)."""
    # float64 sigmoid rounds to exactly 0 or 1 for |logit| beyond ~37 / ~745;
    # pull those back to the nearest interior values so the range stays open
    return tc.clamp(tc.sigmoid(segnet_logits(params, images)), MASK_LO, MASK_HI)
