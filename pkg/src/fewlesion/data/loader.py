"""Directory datasets: images/<id>.ppm, masks/<id>.pgm, labels.csv (id,label)."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

import numpy as np

from . import netpbm
from .sample import LesionSample


def load_directory_dataset(root) -> list[LesionSample]:
    root = Path(root)
    labels_path = root / "labels.csv"
    if not labels_path.exists():
        raise FileNotFoundError(f"{labels_path} not found")
    labels: dict[str, int] = {}
    with labels_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and [h.strip() for h in header] != ["id", "label"]:
            raise ValueError(f"{labels_path}: header must be 'id,label', got {header}")
        for row in reader:
            if not row:
                continue
            labels[row[0].strip()] = int(row[1])

    image_dir, mask_dir = root / "images", root / "masks"
    ids = sorted(p.stem for p in image_dir.glob("*.ppm")) if image_dir.is_dir() else []
    for sample_id in sorted(labels):
        if sample_id not in ids:
            raise ValueError(f"label for '{sample_id}' has no image images/{sample_id}.ppm")

    samples = []
    for sample_id in ids:
        if sample_id not in labels:
            raise ValueError(f"image '{sample_id}' has no entry in labels.csv")
        mask_path = mask_dir / f"{sample_id}.pgm"
        if not mask_path.exists():
            raise ValueError(f"image '{sample_id}' has no mask masks/{sample_id}.pgm")
        pixels, maxval = netpbm.read(image_dir / f"{sample_id}.ppm")
        if pixels.ndim != 3:
            raise ValueError(f"images/{sample_id}.ppm is not an RGB image")
        mpix, mmax = netpbm.read(mask_path)
        if mpix.ndim != 2:
            raise ValueError(f"masks/{sample_id}.pgm is not a greyscale image")
        if mpix.shape != pixels.shape[:2]:
            raise ValueError(f"'{sample_id}': mask {mpix.shape} does not match image {pixels.shape[:2]}")
        samples.append(
            LesionSample(
                image=pixels.astype(np.float64) / maxval,
                mask=(mpix >= 0.5 * mmax).astype(np.uint8),
                label=labels[sample_id],
                sample_id=sample_id,
            )
        )
    return samples


def export_dataset(samples: Iterable[LesionSample], root) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for s in samples:
        netpbm.write(root / "images" / f"{s.sample_id}.ppm", netpbm.to_bytes(s.image))
        netpbm.write(root / "masks" / f"{s.sample_id}.pgm", (s.mask > 0).astype(np.uint8) * 255)
        rows.append((s.sample_id, s.label))
    with (root / "labels.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"])
        writer.writerows(rows)
