"""Standard finite-difference suite over every differentiable building block.

Each case is small enough to perturb element by element; the whole suite
runs in well under a minute on one core.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fewshot, nets
from . import tensor_core as tc
from .fusion import apply_mask
from .tensor_core import GradCheckReport, Tensor

TOLERANCE = 1e-4


@dataclass
class CaseResult:
    name: str
    ops: tuple[str, ...]
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed


@dataclass
class SuiteReport:
    results: list[CaseResult]

    @property
    def worst(self) -> float:
        return max(r.report.worst for r in self.results)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def operations(self) -> list[str]:
        seen: list[str] = []
        for r in self.results:
            seen += [op for op in r.ops if op not in seen]
        return seen

    def lines(self) -> list[str]:
        out = [
            f"{'PASS' if r.passed else 'FAIL'} {r.name}: worst={r.report.worst:.3e} "
            f"checked={r.report.checked} ops={','.join(r.ops)}"
            for r in self.results
        ]
        out.append(f"operations checked: {', '.join(self.operations())}")
        out.append(f"worst relative error: {self.worst:.3e} (tolerance {TOLERANCE:g})")
        return out


def _p(rng, shape, scale=0.5):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _weighted_sum(out: Tensor, rng) -> Tensor:
    # fixed random projection so every output element carries a distinct weight
    return Tensor(rng.standard_normal(out.shape))


Case = tuple[str, tuple[str, ...], dict, Callable]


def _cases(ops) -> list[Case]:
    """(name, ops exercised, input spec, builder). ``ops`` is the op namespace."""

    def elementwise(rng, inputs):
        x, y = inputs["x"], inputs["y"]
        f = lambda: ops.add(ops.mul(ops.sigmoid(x), ops.relu(y)), ops.sub(x, ops.div(y, ops.add(ops.mul(x, x), Tensor(1.0)))))
        w = _weighted_sum(f(), rng)
        return {}, lambda: ops.sum(ops.mul(f(), w))

    def conv(stride, padding):
        def build(rng, inputs):
            k, b = _p(rng, (3, 2, 3, 3)), _p(rng, (3,), 0.1)
            f = lambda: ops.conv2d(inputs["x"], k, b, stride, padding)
            w = _weighted_sum(f(), rng)
            return {"kernel": k, "bias": b}, lambda: ops.sum(ops.mul(f(), w))

        return build

    def pool(rng, inputs):
        f = lambda: ops.max_pool2d(inputs["x"])
        w = _weighted_sum(f(), rng)
        return {}, lambda: ops.sum(ops.mul(f(), w))

    def upsample(rng, inputs):
        f = lambda: ops.upsample_nearest(inputs["x"])
        w = _weighted_sum(f(), rng)
        return {}, lambda: ops.sum(ops.mul(f(), w))

    def linear(rng, inputs):
        wt, b = _p(rng, (5, 4)), _p(rng, (4,), 0.1)
        f = lambda: ops.linear(inputs["x"], wt, b)
        w = _weighted_sum(f(), rng)
        return {"weight": wt, "bias": b}, lambda: ops.sum(ops.mul(f(), w))

    def gap_flatten(rng, inputs):
        f = lambda: ops.concat([ops.global_avg_pool(inputs["x"]), ops.flatten(ops.avg_pool2d(inputs["x"]))], axis=1)
        w = _weighted_sum(f(), rng)
        return {}, lambda: ops.sum(ops.mul(f(), w))

    def bce(rng, inputs):
        y = (rng.uniform(size=(2, 1, 4, 4)) > 0.5).astype(np.float64)
        return {}, lambda: ops.bce_loss(ops.sigmoid(inputs["z"]), y)

    def log_softmax(rng, inputs):
        return {}, lambda: ops.nll_loss(ops.log_softmax(inputs["x"]), [0, 2, 1])

    def masking(rng, inputs):
        f = lambda: apply_mask(inputs["img"], ops.sigmoid(inputs["logit"]))
        w = _weighted_sum(f(), rng)
        return {}, lambda: ops.sum(ops.mul(f(), w))

    def conv_pool_linear_softmax(rng, inputs):
        k, b = _p(rng, (3, 2, 3, 3), 0.4), _p(rng, (3,), 0.1)
        wt, bt = _p(rng, (12, 3), 0.4), _p(rng, (3,), 0.1)

        def loss():
            h = ops.max_pool2d(ops.relu(ops.conv2d(inputs["x"], k, b, 1, 1)))
            return ops.nll_loss(ops.log_softmax(ops.linear(ops.flatten(h), wt, bt)), [2, 0])

        return {"conv.w": k, "conv.b": b, "fc.w": wt, "fc.b": bt}, loss

    def segnet_bce(rng, inputs):
        seg = nets.build_segnet(nets.SegNetConfig(side=4, widths=(2,), skip=True), rng)
        y = (rng.uniform(size=(1, 1, 4, 4)) > 0.5).astype(np.float64)
        return dict(seg.items()), lambda: ops.bce_loss(nets.segnet_forward(seg, inputs["x"]), y)

    def prototypes(metric):
        def build(rng, inputs):
            enc = nets.build_encoder(nets.EncoderConfig(side=4, widths=(2,), embed_dim=3), rng)

            def loss():
                emb = nets.encoder_forward(enc, inputs["x"])
                protos = fewshot.compute_prototypes(ops.index(emb, slice(0, 4)), [0, 0, 1, 1], 2)
                probs = fewshot.classify_queries(ops.index(emb, slice(4, None)), protos, metric)
                return fewshot.classification_loss(probs, [0, 1])

            return dict(enc.items()), loss

        return build

    return [
        ("elementwise", ("add", "sub", "mul", "div", "sigmoid", "relu"), {"x": (3, 4), "y": (3, 4)}, elementwise),
        ("conv2d stride 1 pad 1", ("conv2d",), {"x": (2, 2, 5, 5)}, conv(1, 1)),
        ("conv2d stride 2 pad 1", ("conv2d",), {"x": (1, 2, 6, 6)}, conv(2, 1)),
        ("max_pool2d", ("max_pool2d",), {"x": (2, 2, 4, 6)}, pool),
        ("upsample_nearest", ("upsample_nearest",), {"x": (1, 2, 3, 3)}, upsample),
        ("linear", ("linear",), {"x": (3, 5)}, linear),
        ("pooling and flatten", ("global_avg_pool", "avg_pool2d", "flatten", "concat"), {"x": (2, 3, 4, 4)}, gap_flatten),
        ("bce_loss", ("bce_loss", "sigmoid"), {"z": (2, 1, 4, 4)}, bce),
        ("log_softmax + nll", ("log_softmax", "nll_loss"), {"x": (3, 4)}, log_softmax),
        ("apply_mask", ("apply_mask",), {"img": (2, 3, 3, 3), "logit": (2, 1, 3, 3)}, masking),
        ("conv-relu-pool-linear-log_softmax", ("conv2d", "relu", "max_pool2d", "flatten", "linear", "log_softmax", "nll_loss"),
         {"x": (2, 2, 4, 4)}, conv_pool_linear_softmax),
        ("segmenter + bce", ("conv2d", "relu", "max_pool2d", "upsample_nearest", "concat", "sigmoid", "clamp", "bce_loss"),
         {"x": ((1, 3, 4, 4), (0.0, 1.0))}, segnet_bce),
        ("encoder + prototypes + cosine loss", ("conv2d", "global_avg_pool", "prototype_mean", "cosine", "log_softmax", "clamp", "log"),
         {"x": ((6, 3, 4, 4), (0.0, 1.0))}, prototypes("cosine")),
        ("encoder + prototypes + euclidean loss", ("prototype_mean", "euclidean", "sqrt", "exp"),
         {"x": ((6, 3, 4, 4), (0.0, 1.0))}, prototypes("euclidean")),
    ]


def run_suite(ops=tc, seed: int = 0, tolerance: float = TOLERANCE) -> SuiteReport:
    """Run every case; ``ops`` may be swapped for a namespace with a faulty op (self-test of the checker)."""
    results = []
    for i, (name, used, spec, builder) in enumerate(_cases(ops)):
        report = tc.grad_check(builder, spec, tolerance=tolerance, seed=seed + i)
        results.append(CaseResult(name, used, report))
    return SuiteReport(results)
