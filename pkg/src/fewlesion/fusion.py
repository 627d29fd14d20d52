"""Mask-gated prototypical classification and the joint training loop."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import fewshot, nets
from . import tensor_core as tc
from .data import augment, stack_images, stack_masks
from .fewshot import ClassSplit, Episode
from .nets import EncoderConfig, ParamRegistry, SegNetConfig
from .tensor_core import Tensor

log = logging.getLogger(__name__)

MODES = ("E1", "E2")


@dataclass
class FusionConfig:
    mode: str = "E2"
    lam: float = 2.0
    metric: str = "cosine"
    k: int = 2
    n: int = 5
    q: int = 15
    epochs: int = 10
    tasks_per_epoch: int = 100
    seg_lr: float = 1e-3
    cls_lr: float = 1e-6
    seed: int = 0
    # segmenter warm-up on BCE alone before the fused schedule; 0 disables it
    seg_pretrain_steps: int = 0
    seg_pretrain_batch: int = 8
    augment: bool = True
    jitter_lo: float = 0.9
    jitter_hi: float = 1.1
    side: int = 64
    enc_widths: tuple[int, ...] = (8, 16, 32)
    embed_dim: int = 64
    seg_widths: tuple[int, ...] = (8, 16)
    seg_skip: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.metric not in fewshot.METRICS:
            raise ValueError(f"metric must be one of {fewshot.METRICS}, got {self.metric!r}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.epochs < 1 or self.tasks_per_epoch < 1:
            raise ValueError("epochs and tasks_per_epoch must be >= 1")
        if min(self.k, self.n, self.q) < 1:
            raise ValueError("k, n and q must be >= 1")
        self.enc_widths = tuple(self.enc_widths)
        self.seg_widths = tuple(self.seg_widths)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(side=self.side, widths=self.enc_widths, embed_dim=self.embed_dim)

    def segnet_config(self) -> SegNetConfig:
        return SegNetConfig(side=self.side, widths=self.seg_widths, skip=self.seg_skip)


@dataclass
class TrainRecord:
    epoch: int
    task: int
    seg_loss: float
    cls_loss: float
    total_loss: float
    accuracy: float


@dataclass
class TrainLog:
    records: list[TrainRecord] = field(default_factory=list)
    pretrain_losses: list[float] = field(default_factory=list)

    def epoch_accuracy(self, epoch: int) -> float:
        accs = [r.accuracy for r in self.records if r.epoch == epoch]
        return float(np.mean(accs)) if accs else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "task", "L_s", "L_c", "L_total", "accuracy"])
        for r in self.records:
            writer.writerow([r.epoch, r.task, repr(r.seg_loss), repr(r.cls_loss), repr(r.total_loss), repr(r.accuracy)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "TrainLog":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls([
            TrainRecord(int(r["epoch"]), int(r["task"]), float(r["L_s"]), float(r["L_c"]),
                        float(r["L_total"]), float(r["accuracy"]))
            for r in rows
        ])


class TrainingAborted(RuntimeError):
    def __init__(self, epoch: int, task: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, task {task}")
        self.epoch = epoch
        self.task = task


class FusedOutput(NamedTuple):
    seg_loss: Tensor
    cls_loss: Tensor
    probabilities: Tensor
    masks: Tensor


def apply_mask(images, mask) -> Tensor:
    """Gate every channel of ``images`` (B, C, S, S) by ``mask`` (B, 1, S, S)."""
    images, mask = tc.as_tensor(images), tc.as_tensor(mask)
    if images.ndim != 4 or mask.ndim != 4 or mask.shape[1] != 1 or images.shape[0] != mask.shape[0] \
            or images.shape[2:] != mask.shape[2:]:
        raise ValueError(f"apply_mask: image batch {images.shape} and mask batch {mask.shape} do not match")
    return tc.mul(images, mask)


def total_loss(seg_loss, cls_loss, lam: float) -> Tensor:
    return tc.add(seg_loss, tc.mul(cls_loss, float(lam)))


Segmenter = Callable[[Tensor], Tensor]
Encoder = Callable[[Tensor], Tensor]


def forward_fused(episode: Episode, seg_params: ParamRegistry, enc_params: ParamRegistry, config: FusionConfig,
                  segmenter: Segmenter | None = None, encoder: Encoder | None = None) -> FusedOutput:
    """Segment, score masks against ground truth, gate, embed, and score queries against prototypes.

    ``segmenter``/``encoder`` replace the parameterized networks when given
    (oracle and stub models in tests).
    """
    samples = episode.samples()
    if any(s.mask is None for s in samples):
        missing = [s.sample_id for s in samples if s.mask is None]
        raise ValueError(f"samples without ground-truth masks: {missing}")
    images = Tensor(stack_images(samples))
    truth = stack_masks(samples)
    masks = segmenter(images) if segmenter is not None else nets.segnet_forward(seg_params, images)
    seg_loss = tc.bce_loss(masks, truth)
    gated = apply_mask(images, masks)
    embeddings = encoder(gated) if encoder is not None else nets.encoder_forward(enc_params, gated)
    n_support = episode.k * episode.n
    support = tc.index(embeddings, slice(0, n_support))
    query = tc.index(embeddings, slice(n_support, None))
    prototypes = fewshot.compute_prototypes(support, episode.support_labels, episode.k)
    log_probs = fewshot.class_log_probabilities(query, prototypes, config.metric)
    cls_loss = tc.nll_loss(log_probs, episode.query_labels)
    return FusedOutput(seg_loss, cls_loss, tc.exp(log_probs), masks)


def build_models(config: FusionConfig) -> tuple[ParamRegistry, ParamRegistry]:
    """Seeded segmenter and encoder registries (segmenter drawn first)."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    seg = nets.build_segnet(config.segnet_config(), rng)
    enc = nets.build_encoder(config.encoder_config(), rng)
    return seg, enc


def pretrain_segmenter(seg_params: ParamRegistry, samples: Sequence, steps: int, batch: int, lr: float,
                       rng: np.random.Generator, augment_samples: bool = True) -> list[float]:
    """Fit the whole segmenter to ground-truth masks by BCE; returns the per-step losses."""
    for name in seg_params.names():
        seg_params.set_trainable(name, True)
    opt = tc.Adam(seg_params, lr=lr)
    losses = []
    for _ in range(steps):
        picks = rng.choice(len(samples), size=min(batch, len(samples)), replace=False)
        chosen = [samples[i] for i in picks]
        if augment_samples:
            chosen = [augment(s, rng) for s in chosen]
        opt.zero_grad()
        loss = tc.bce_loss(nets.segnet_forward(seg_params, Tensor(stack_images(chosen))), stack_masks(chosen))
        tc.backward(loss)
        opt.step()
        losses.append(loss.item())
    opt.zero_grad()
    return losses


def pretrain_stage(dataset: Sequence, split: ClassSplit, config: FusionConfig,
                   seg_params: ParamRegistry) -> list[float]:
    """Warm up the whole segmenter on the seen classes for ``config.seg_pretrain_steps`` steps."""
    if config.seg_pretrain_steps <= 0:
        return []
    seen = [s for s in dataset if s.label in set(split.seen)]
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))
    return pretrain_segmenter(seg_params, seen, config.seg_pretrain_steps, config.seg_pretrain_batch,
                              config.seg_lr, rng, config.augment)


def prepare_and_train(dataset: Sequence, split: ClassSplit, config: FusionConfig, checkpoint_dir=None,
                      progress: Callable[[TrainRecord], None] | None = None):
    """Fresh models, segmenter warm-up, then the fused schedule."""
    seg, enc = build_models(config)
    losses = pretrain_stage(dataset, split, config, seg)
    seg, enc, trainlog = train(dataset, split, config, seg, enc, checkpoint_dir, progress)
    trainlog.pretrain_losses = losses
    return seg, enc, trainlog


def configure_segmenter(seg_params: ParamRegistry, mode: str) -> ParamRegistry:
    """E1: nothing trainable. E2: only the terminal head trainable."""
    if mode == "E1":
        return nets.freeze_all(seg_params)
    return nets.freeze_all_but_head(seg_params)


def train(dataset: Sequence, split: ClassSplit, config: FusionConfig, seg_params: ParamRegistry | None = None,
          enc_params: ParamRegistry | None = None, checkpoint_dir=None,
          progress: Callable[[TrainRecord], None] | None = None) -> tuple[ParamRegistry, ParamRegistry, TrainLog]:
    """Episodic joint training on the seen classes; deterministic given ``config.seed``.

    Segmenter warm-up is a separate stage (``pretrain_stage``); this loop only
    ever updates what ``config.mode`` leaves trainable.
    """
    if seg_params is None or enc_params is None:
        fresh_seg, fresh_enc = build_models(config)
        seg_params = fresh_seg if seg_params is None else seg_params
        enc_params = fresh_enc if enc_params is None else enc_params
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    by_class = fewshot.index_by_class(dataset)
    trainlog = TrainLog()

    configure_segmenter(seg_params, config.mode)
    for name in enc_params.names():
        enc_params.set_trainable(name, True)
    seg_opt = tc.Adam(seg_params, lr=config.seg_lr)
    enc_opt = tc.Adam(enc_params, lr=config.cls_lr)
    jitter = (config.jitter_lo, config.jitter_hi)

    for epoch in range(1, config.epochs + 1):
        for task in range(1, config.tasks_per_epoch + 1):
            episode = fewshot.sample_episode(dataset, split, "seen", config.k, config.n, config.q, rng, by_class)
            if config.augment:
                episode.support = [augment(s, rng, jitter=jitter) for s in episode.support]
                episode.query = [augment(s, rng, jitter=jitter) for s in episode.query]
            out = forward_fused(episode, seg_params, enc_params, config)
            loss = total_loss(out.seg_loss, out.cls_loss, config.lam)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingAborted(epoch, task, value)
            seg_opt.zero_grad()
            enc_opt.zero_grad()
            if loss.requires_grad:
                tc.backward(loss)
                seg_opt.step()
                enc_opt.step()
            record = TrainRecord(
                epoch, task, out.seg_loss.item(), out.cls_loss.item(), value,
                fewshot.episode_accuracy(out.probabilities, episode.query_labels),
            )
            trainlog.records.append(record)
            if progress is not None:
                progress(record)
        log.info("epoch %d: mean episode accuracy %.4f", epoch, trainlog.epoch_accuracy(epoch))
        if checkpoint_dir is not None:
            save_checkpoint(Path(checkpoint_dir) / f"epoch_{epoch:02d}.pfv1", seg_params, enc_params)
    seg_opt.zero_grad()
    enc_opt.zero_grad()
    return seg_params, enc_params, trainlog


def save_checkpoint(path, seg_params: ParamRegistry, enc_params: ParamRegistry) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tc.checkpoint.save(path, {**seg_params.state_dict(), **enc_params.state_dict()})


def load_checkpoint(path, config: FusionConfig) -> tuple[ParamRegistry, ParamRegistry]:
    """Rebuild registries shaped by ``config`` and fill them from ``path``."""
    state = tc.checkpoint.load(path)
    seg, enc = build_models(config)
    seg.load_state_dict(state)
    enc.load_state_dict(state)
    return seg, enc


def mean_bce(seg_params: ParamRegistry, samples: Sequence, batch: int = 32) -> float:
    """Pixel-mean BCE of the segmenter over ``samples``."""
    total, count = 0.0, 0
    with tc.no_grad():
        for start in range(0, len(samples), batch):
            chunk = samples[start : start + batch]
            loss = tc.bce_loss(nets.segnet_forward(seg_params, Tensor(stack_images(chunk))), stack_masks(chunk))
            total += loss.item() * len(chunk)
            count += len(chunk)
    return total / count


@dataclass
class AblationRow:
    lam: float
    accuracy: float
    margin95: float


def ablate_lambda(dataset: Sequence, split: ClassSplit, base_config: FusionConfig, lambdas: Sequence[float],
                  eval_episodes: int = 100, eval_seed: int = 0, csv_path=None) -> list[AblationRow]:
    """One full train + evaluate cycle per lambda, all at the base seed."""
    from .evaluation import evaluate

    if any(not lam > 0 for lam in lambdas):
        raise ValueError(f"lambda values must be positive, got {list(lambdas)}")
    rows = []
    for lam in lambdas:
        config = FusionConfig(**{**asdict(base_config), "lam": float(lam)})
        seg, enc, _ = prepare_and_train(dataset, split, config)
        report = evaluate(seg, enc, dataset, split, k=config.k, n=config.n, q=config.q, metric=config.metric,
                          episodes=eval_episodes, seed=eval_seed)
        rows.append(AblationRow(float(lam), report.mean, report.margins[95]))
    if csv_path is not None:
        write_ablation_csv(rows, csv_path)
    return rows


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["lambda", "accuracy_pct", "margin95_pct"])
    for r in rows:
        writer.writerow([repr(r.lam), f"{100 * r.accuracy:.4f}", f"{100 * r.margin95:.4f}"])
    return buf.getvalue()


def write_ablation_csv(rows: Sequence[AblationRow], path) -> None:
    Path(path).write_text(ablation_csv(rows))


def config_fields() -> list[str]:
    return [f.name for f in fields(FusionConfig)]
