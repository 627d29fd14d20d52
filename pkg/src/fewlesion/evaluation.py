"""Episodic evaluation on unseen classes and normal-approximation margins."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import fewshot, nets
from . import tensor_core as tc
from .data import stack_images
from .fewshot import ClassSplit
from .fusion import apply_mask
from .nets import ParamRegistry
from .tensor_core import Tensor

# two-sided normal quantiles
Z_SCORES = {75: 1.1503, 90: 1.6449, 95: 1.9600}
LEVELS = (75, 90, 95)


def confidence_margin(accuracies: Sequence[float], level: int) -> float:
    """Half-width ``z * s / sqrt(T)`` with the sample standard deviation ``s``."""
    if level not in Z_SCORES:
        raise ValueError(f"confidence level must be one of {sorted(Z_SCORES)}, got {level}")
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.size < 2:
        raise ValueError(f"need at least 2 episode accuracies, got {acc.size}")
    return float(Z_SCORES[level] * acc.std(ddof=1) / np.sqrt(acc.size))


@dataclass
class EvalReport:
    accuracies: np.ndarray
    mean: float
    margins: dict[int, float]
    config: dict = field(default_factory=dict)

    @classmethod
    def from_accuracies(cls, accuracies, config: dict | None = None) -> "EvalReport":
        acc = np.asarray(accuracies, dtype=np.float64)
        margins = {lv: confidence_margin(acc, lv) for lv in LEVELS} if acc.size >= 2 else {}
        # fixed left-to-right reduction keeps the mean independent of numpy's pairwise summation
        total = 0.0
        for a in acc:
            total += float(a)
        return cls(acc, total / acc.size, margins, dict(config or {}))

    def summary(self) -> str:
        parts = [f"mean={self.mean!r}"] + [f"margin{lv}={m!r}" for lv, m in self.margins.items()]
        parts += [f"{k}={v}" for k, v in self.config.items()]
        return " ".join(parts)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("episode,accuracy\n")
        for i, a in enumerate(self.accuracies):
            buf.write(f"{i},{a!r}\n")
        buf.write(f"# {self.summary()}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


Encoder = Callable[[Tensor], Tensor]
Segmenter = Callable[[Tensor], Tensor]


def embed_samples(samples: Sequence, seg_params: ParamRegistry | None, enc_params: ParamRegistry | None,
                  use_fusion: bool = True, encoder: Encoder | None = None, segmenter: Segmenter | None = None,
                  batch: int = 32) -> np.ndarray:
    """Embeddings of (optionally mask-gated) images, computed without recording gradients."""
    rows = []
    with tc.no_grad():
        for start in range(0, len(samples), batch):
            images = Tensor(stack_images(samples[start : start + batch]))
            if use_fusion:
                masks = segmenter(images) if segmenter is not None else nets.segnet_forward(seg_params, images)
                images = apply_mask(images, masks)
            emb = encoder(images) if encoder is not None else nets.encoder_forward(enc_params, images)
            rows.append(emb.data)
    return np.concatenate(rows) if rows else np.zeros((0, 0))


def episode_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 4]))


def evaluate(seg_params: ParamRegistry | None, enc_params: ParamRegistry | None, dataset: Sequence,
             split: ClassSplit, k: int = 2, n: int = 5, q: int = 15, metric: str = "cosine",
             episodes: int = 100, seed: int = 0, side: str = "unseen", use_fusion: bool = True,
             encoder: Encoder | None = None, segmenter: Segmenter | None = None) -> EvalReport:
    """Mean query accuracy over ``episodes`` episodes drawn from the unseen classes.

    The model is frozen and has no cross-sample state, so each sample's
    embedding is computed once and reused by every episode that draws it.
    """
    pool = set(split.side(side))
    members = [s for s in dataset if s.label in pool]
    by_class = fewshot.index_by_class(members)
    rng = episode_rng(seed)
    drawn = [fewshot.sample_episode(members, split, side, k, n, q, rng, by_class) for _ in range(episodes)]

    row_of = {id(s): i for i, s in enumerate(members)}
    table = embed_samples(members, seg_params, enc_params, use_fusion, encoder, segmenter)
    accs = []
    with tc.no_grad():
        for ep in drawn:
            support = Tensor(table[[row_of[id(s)] for s in ep.support]])
            query = Tensor(table[[row_of[id(s)] for s in ep.query]])
            protos = fewshot.compute_prototypes(support, ep.support_labels, ep.k)
            probs = fewshot.classify_queries(query, protos, metric)
            accs.append(fewshot.episode_accuracy(probs, ep.query_labels))
    return EvalReport.from_accuracies(
        accs, {"k": k, "n": n, "q": q, "metric": metric, "episodes": episodes, "seed": seed}
    )
