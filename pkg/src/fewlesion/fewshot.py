"""Episode sampling, prototypes, metrics and the prototypical loss."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor_core as tc
from .tensor_core import Tensor, as_tensor

# "cosine_similarity" feeds the raw similarity in as a score, i.e. d = -cos.
# It differs from "cosine" (d = 1 - cos) by a constant per row, so the
# probabilities coincide; it is kept to make that reading runnable.
METRICS = ("euclidean", "cosine", "cosine_similarity")
NORM_FLOOR = 1e-12
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ClassSplit:
    """Disjoint seen (training) and unseen (testing) class sets."""

    seen: tuple[int, ...]
    unseen: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "seen", tuple(sorted(int(c) for c in self.seen)))
        object.__setattr__(self, "unseen", tuple(sorted(int(c) for c in self.unseen)))
        if not self.seen or not self.unseen:
            raise ValueError("both seen and unseen class sets must be non-empty")
        overlap = set(self.seen) & set(self.unseen)
        if overlap:
            raise ValueError(f"seen and unseen classes must be disjoint; shared: {sorted(overlap)}")

    def side(self, name: str) -> tuple[int, ...]:
        if name == "seen":
            return self.seen
        if name == "unseen":
            return self.unseen
        raise ValueError(f"split side must be 'seen' or 'unseen', got {name!r}")


@dataclass
class Episode:
    k: int
    n: int
    q: int
    classes: tuple[int, ...]  # dataset labels; position = episode-local label
    support: list = field(default_factory=list)
    query: list = field(default_factory=list)

    @property
    def support_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.k), self.n)

    @property
    def query_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.k), self.q)

    def samples(self) -> list:
        return list(self.support) + list(self.query)

    def manifest(self) -> str:
        """One ``role<TAB>sample_id<TAB>dataset_label<TAB>episode_label`` record per line."""
        lines = []
        for role, items, labels in (
            ("support", self.support, self.support_labels),
            ("query", self.query, self.query_labels),
        ):
            for s, local in zip(items, labels):
                lines.append(f"{role}\t{s.sample_id}\t{s.label}\t{local}")
        return "\n".join(lines) + "\n"

    def write_manifest(self, path) -> None:
        Path(path).write_text(self.manifest())


@dataclass
class PrototypeSet:
    vectors: Tensor  # (k, D)

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def index_by_class(dataset: Sequence) -> dict[int, list[int]]:
    by_class: dict[int, list[int]] = defaultdict(list)
    for i, s in enumerate(dataset):
        by_class[int(s.label)].append(i)
    return by_class


def sample_episode(dataset: Sequence, split: ClassSplit, side: str, k: int, n: int, q: int,
                   rng: np.random.Generator, by_class: dict[int, list[int]] | None = None) -> Episode:
    """Draw a k-way n-shot episode with q queries per class from one side of ``split``."""
    if k < 1 or n < 1 or q < 1:
        raise ValueError(f"k, n and q must be positive, got k={k}, n={n}, q={q}")
    by_class = index_by_class(dataset) if by_class is None else by_class
    pool = split.side(side)
    counts = {c: len(by_class.get(c, ())) for c in pool}
    eligible = [c for c in pool if counts[c] >= n + q]
    if len(eligible) < k:
        raise ValueError(
            f"cannot draw a {k}-way episode needing {n + q} samples per class from the {side} side: "
            f"only {len(eligible)} eligible classes (per-class counts {counts})"
        )
    classes = tuple(int(c) for c in rng.choice(eligible, size=k, replace=False))
    support, query = [], []
    for c in classes:
        picks = rng.choice(by_class[c], size=n + q, replace=False)
        support.extend(dataset[i] for i in picks[:n])
        query.extend(dataset[i] for i in picks[n:])
    return Episode(k=k, n=n, q=q, classes=classes, support=support, query=query)


def compute_prototypes(embeddings: Tensor, labels, k: int | None = None) -> PrototypeSet:
    """Per-class mean of support embeddings; every class must have the same row count."""
    embeddings = as_tensor(embeddings)
    labels = np.asarray(labels, dtype=np.int64)
    if embeddings.ndim != 2 or labels.shape != (embeddings.shape[0],):
        raise ValueError(f"embeddings {embeddings.shape} and labels {labels.shape} do not align")
    k = int(labels.max()) + 1 if k is None else k
    counts = np.bincount(labels, minlength=k)
    missing = [c for c in range(k) if counts[c] == 0]
    if missing:
        raise ValueError(f"no support embeddings for episode classes {missing}")
    if len(counts) > k or np.any(counts != counts[0]):
        raise ValueError(f"support classes must have equal counts within 0..{k - 1}, got {counts.tolist()}")
    order = [np.flatnonzero(labels == c) for c in range(k)]
    shot = int(counts[0])
    data = np.stack([embeddings.data[rows].mean(axis=0) for rows in order])

    def back(g):
        full = np.zeros(embeddings.shape)
        for c, rows in enumerate(order):
            full[rows] = g[c] / shot
        return (full,)

    return PrototypeSet(Tensor.from_op(data, (embeddings,), back, "prototype_mean"))


def _as_rows(t) -> Tensor:
    t = as_tensor(t)
    return tc.reshape(t, (1, -1)) if t.ndim == 1 else t


def pairwise_distances(queries: Tensor, prototypes: Tensor, metric: str) -> Tensor:
    """(Q, D) x (k, D) -> (Q, k) distance matrix."""
    queries, prototypes = _as_rows(queries), _as_rows(prototypes)
    if queries.shape[1] != prototypes.shape[1]:
        raise ValueError(f"dimension mismatch: queries {queries.shape} vs prototypes {prototypes.shape}")
    if metric == "euclidean":
        q3 = tc.reshape(queries, (queries.shape[0], 1, queries.shape[1]))
        p3 = tc.reshape(prototypes, (1,) + prototypes.shape)
        diff = tc.sub(q3, p3)
        return tc.sqrt(tc.sum(tc.mul(diff, diff), axis=-1))
    if metric in ("cosine", "cosine_similarity"):
        qn = tc.sqrt(tc.sum(tc.mul(queries, queries), axis=1, keepdims=True))
        pn = tc.sqrt(tc.sum(tc.mul(prototypes, prototypes), axis=1, keepdims=True))
        if qn.data.min() <= NORM_FLOOR or pn.data.min() <= NORM_FLOOR:
            raise ValueError("cosine distance is undefined for near-zero-norm vectors")
        sim = tc.div(tc.matmul(queries, tc.transpose(prototypes)), tc.matmul(qn, tc.transpose(pn)))
        return tc.sub(1.0, sim) if metric == "cosine" else tc.neg(sim)
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def euclidean_distance(query, prototype) -> Tensor:
    return tc.reshape(pairwise_distances(query, prototype, "euclidean"), ())


def cosine_distance(query, prototype) -> Tensor:
    """``1 - cos(angle)``, in [0, 2]; smaller means closer."""
    return tc.reshape(pairwise_distances(query, prototype, "cosine"), ())


def class_log_probabilities(query_embeddings: Tensor, prototypes, metric: str) -> Tensor:
    protos = prototypes.vectors if isinstance(prototypes, PrototypeSet) else as_tensor(prototypes)
    return tc.log_softmax(tc.neg(pairwise_distances(query_embeddings, protos, metric)))


def classify_queries(query_embeddings: Tensor, prototypes, metric: str) -> Tensor:
    """Row j: softmax over classes of the negative distance to each prototype."""
    return tc.exp(class_log_probabilities(query_embeddings, prototypes, metric))


def classification_loss(probabilities: Tensor, true_labels) -> Tensor:
    """Mean negative log-probability of the true class (probabilities floored at 1e-12)."""
    probabilities = as_tensor(probabilities)
    return tc.nll_loss(tc.log(tc.clamp(probabilities, PROB_FLOOR, 1.0)), true_labels)


def episode_accuracy(probabilities, true_labels) -> float:
    p = probabilities.data if isinstance(probabilities, Tensor) else np.asarray(probabilities)
    labels = np.asarray(true_labels)
    if labels.size == 0:
        return 0.0
    # np.argmax returns the first maximum, i.e. ties go to the lower class index
    return float(np.mean(np.argmax(p, axis=1) == labels))
