"""Segmentation-gated prototypical few-shot lesion classification on a small numpy autodiff engine."""

__version__ = "0.1.0"
