from .sample import LesionSample, stack_images, stack_masks
from .synthetic import (
    ClassStyle,
    SyntheticSpec,
    clean_spec,
    default_styles,
    generate_dataset,
    high_artifact_spec,
    read_spec,
    render_sample,
    write_spec,
)
from .augment import augment, hflip, nearest_indices, resize_normalize, vflip
from .loader import export_dataset, load_directory_dataset
from . import netpbm

__all__ = [
    "LesionSample", "stack_images", "stack_masks", "ClassStyle", "SyntheticSpec", "clean_spec",
    "default_styles", "generate_dataset", "high_artifact_spec", "read_spec", "render_sample",
    "write_spec", "augment", "hflip", "nearest_indices", "resize_normalize", "vflip",
    "export_dataset", "load_directory_dataset", "netpbm",
]
