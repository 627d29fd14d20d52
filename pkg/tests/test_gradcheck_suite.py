import types

import numpy as np

from fewlesion import gradcheck_suite
from fewlesion import tensor_core as tc
from fewlesion.tensor_core import Tensor


def wrong_sign_relu(a):
    active = a.data > 0
    return Tensor.from_op(np.where(active, a.data, 0.0), (a,), lambda g: (-g * active,), "relu")


def test_suite_passes_and_lists_ops():
    report = gradcheck_suite.run_suite()
    assert report.passed and report.worst < gradcheck_suite.TOLERANCE
    ops = report.operations()
    for name in ("conv2d", "max_pool2d", "upsample_nearest", "linear", "sigmoid", "relu", "bce_loss",
                 "log_softmax", "apply_mask", "cosine", "euclidean", "concat", "global_avg_pool"):
        assert name in ops
    lines = report.lines()
    assert all(line.startswith("PASS") for line in lines[:-2])
    assert lines[-2].startswith("operations checked:") and lines[-1].startswith("worst relative error:")


def test_injected_fault_is_reported():
    faulty = types.SimpleNamespace(**{n: getattr(tc, n) for n in dir(tc) if not n.startswith("_")})
    faulty.relu = wrong_sign_relu
    report = gradcheck_suite.run_suite(ops=faulty)
    assert not report.passed
    failed = [r.name for r in report.results if not r.passed]
    assert "elementwise" in failed
    assert any(line.startswith("FAIL elementwise") for line in report.lines())
