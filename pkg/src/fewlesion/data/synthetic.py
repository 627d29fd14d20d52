"""Procedural lesion images with exact ground-truth masks.

Each sample is a skin-toned background with one textured, filled ellipse
(the lesion). Hair strokes, ruler marks and contrast loss are painted on top
of the image only; the mask is the ellipse's pixel set and nothing else.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .sample import LesionSample

MIN_AREA, MAX_AREA = 0.02, 0.60
MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class ClassStyle:
    hue: tuple[float, float]
    eccentricity: tuple[float, float]
    fade: float  # width of the boundary blend as a fraction of the ellipse radius
    texture: float  # stripe frequency, cycles per image side


@dataclass(frozen=True)
class SyntheticSpec:
    side: int = 64
    n_classes: int = 7
    samples_per_class: int = 40
    seed: int = 0
    artifacts: bool = True
    hair_min: int = 0
    hair_max: int = 3
    ruler_prob: float = 0.3
    contrast_min: float = 0.0
    contrast_max: float = 0.2
    styles: tuple[ClassStyle, ...] = field(default=())

    def __post_init__(self):
        if self.side < 8:
            raise ValueError(f"image side must be >= 8, got {self.side}")
        if self.n_classes < 1:
            raise ValueError("need at least one class")
        if self.samples_per_class < 1:
            raise ValueError(f"samples_per_class must be positive, got {self.samples_per_class}")
        if not 0 <= self.hair_min <= self.hair_max:
            raise ValueError(f"bad hair count range ({self.hair_min}, {self.hair_max})")
        if not 0.0 <= self.ruler_prob <= 1.0:
            raise ValueError(f"ruler_prob must lie in [0, 1], got {self.ruler_prob}")
        if not 0.0 <= self.contrast_min <= self.contrast_max < 1.0:
            raise ValueError(f"bad contrast reduction range ({self.contrast_min}, {self.contrast_max})")
        if not self.styles:
            object.__setattr__(self, "styles", default_styles(self.n_classes))
        if len(self.styles) != self.n_classes:
            raise ValueError(f"{len(self.styles)} class styles for {self.n_classes} classes")
        for a in range(self.n_classes):
            for b in range(a + 1, self.n_classes):
                if not _distinct(self.styles[a], self.styles[b]):
                    raise ValueError(f"classes {a} and {b} have overlapping parameters on every axis")

    # -- key=value serialization ------------------------------------------
    def to_text(self) -> str:
        lines = [f"{f.name}={_fmt(getattr(self, f.name))}" for f in fields(self) if f.name != "styles"]
        for c, st in enumerate(self.styles):
            lines += [
                f"class{c}.hue={st.hue[0]!r},{st.hue[1]!r}",
                f"class{c}.eccentricity={st.eccentricity[0]!r},{st.eccentricity[1]!r}",
                f"class{c}.fade={st.fade!r}",
                f"class{c}.texture={st.texture!r}",
            ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SyntheticSpec":
        scalars: dict[str, str] = {}
        per_class: dict[int, dict[str, str]] = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key.startswith("class") and "." in key:
                head, attr = key.split(".", 1)
                per_class.setdefault(int(head[5:]), {})[attr] = value
            else:
                scalars[key] = value
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, value in scalars.items():
            if key not in types or key == "styles":
                raise ValueError(f"unknown synthetic spec key {key!r}")
            kwargs[key] = _parse(value, getattr(cls, key) if hasattr(cls, key) else None)
        spec = cls(**kwargs)
        if per_class:
            styles = list(spec.styles)
            for c, attrs in per_class.items():
                if not 0 <= c < spec.n_classes:
                    raise ValueError(f"class index {c} out of range")
                st = styles[c]
                for attr, value in attrs.items():
                    if attr in ("hue", "eccentricity"):
                        lo, hi = (float(v) for v in value.split(","))
                        st = replace(st, **{attr: (lo, hi)})
                    elif attr in ("fade", "texture"):
                        st = replace(st, **{attr: float(value)})
                    else:
                        raise ValueError(f"unknown class attribute {attr!r}")
                styles[c] = st
            spec = replace(spec, styles=tuple(styles))
        return spec


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse(value: str, default):
    if isinstance(default, bool):
        if value.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"expected a boolean, got {value!r}")
        return value.lower() in ("true", "1")
    if isinstance(default, int):
        return int(value)
    return float(value)


def _distinct(a: ClassStyle, b: ClassStyle) -> bool:
    def apart(r1, r2):
        return r1[1] < r2[0] or r2[1] < r1[0]

    return apart(a.hue, b.hue) or apart(a.eccentricity, b.eccentricity) or a.fade != b.fade or a.texture != b.texture


def default_styles(n_classes: int) -> tuple[ClassStyle, ...]:
    """Evenly spaced hues; shape, fade and texture cycle so neighbours also differ in form."""
    eccs = [(0.0, 0.45), (0.55, 0.8), (0.3, 0.65)]
    styles = []
    width = min(0.03, 0.4 / n_classes)
    for c in range(n_classes):
        centre = c / n_classes
        styles.append(
            ClassStyle(
                hue=(centre - width, centre + width),
                eccentricity=eccs[c % len(eccs)],
                fade=0.15 + 0.1 * (c % 2),
                texture=2.0 + 1.5 * (c % 4),
            )
        )
    return tuple(styles)


def clean_spec(**overrides) -> SyntheticSpec:
    return SyntheticSpec(**{"artifacts": False, **overrides})


def high_artifact_spec(**overrides) -> SyntheticSpec:
    base = dict(hair_min=4, hair_max=10, ruler_prob=0.8, contrast_min=0.2, contrast_max=0.5)
    return SyntheticSpec(**{**base, **overrides})


# -- rendering ------------------------------------------------------------

def _skin(rng: np.random.Generator, side: int, yy, xx) -> np.ndarray:
    base = np.array([0.88, 0.72, 0.60]) + rng.uniform(-0.06, 0.06, size=3)
    fx, fy, ph = rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5), rng.uniform(0, 2 * np.pi)
    shade = 0.03 * np.sin(2 * np.pi * (fx * xx + fy * yy) / side + ph)
    img = base[None, None, :] + shade[..., None] + rng.normal(0.0, 0.015, size=(side, side, 3))
    return img


def _ellipse(rng: np.random.Generator, style: ClassStyle, side: int, yy, xx):
    for _ in range(MAX_ATTEMPTS):
        a = rng.uniform(0.12, 0.38) * side
        ecc = rng.uniform(*style.eccentricity)
        b = a * np.sqrt(1.0 - ecc**2)
        cy, cx = rng.uniform(0.3, 0.7, size=2) * side
        theta = rng.uniform(0.0, np.pi)
        dy, dx = yy + 0.5 - cy, xx + 0.5 - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        r = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        frac = float(np.mean(r <= 1.0))
        if MIN_AREA <= frac <= MAX_AREA:
            return r, theta
    raise ValueError(
        f"could not place a lesion covering {MIN_AREA:.0%}-{MAX_AREA:.0%} of the image in {MAX_ATTEMPTS} attempts"
    )


def _paint(img: np.ndarray, coverage: np.ndarray, color) -> None:
    img *= 1.0 - coverage[..., None]
    img += coverage[..., None] * np.asarray(color)[None, None, :]


def _hair(rng: np.random.Generator, img: np.ndarray, side: int, yy, xx) -> None:
    p0, p1, p2 = rng.uniform(-0.1, 1.1, size=(3, 2)) * side
    t = np.linspace(0.0, 1.0, 3 * side)[:, None]
    pts = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2
    thickness = rng.uniform(0.5, 1.1)
    d2 = (yy.reshape(-1, 1) + 0.5 - pts[None, :, 0]) ** 2 + (xx.reshape(-1, 1) + 0.5 - pts[None, :, 1]) ** 2
    dist = np.sqrt(d2.min(axis=1)).reshape(side, side)
    coverage = np.clip(thickness + 0.5 - dist, 0.0, 1.0) * 0.9
    shade = rng.uniform(0.05, 0.2)
    _paint(img, coverage, (shade * 1.3, shade, shade * 0.8))


def _ruler(rng: np.random.Generator, img: np.ndarray, side: int) -> None:
    coverage = np.zeros((side, side))
    offset = int(rng.integers(2, max(3, side // 10)))
    period = int(rng.integers(3, 6))
    coverage[offset, :] = 1.0
    for x in range(0, side, period):
        length = 4 if (x // period) % 2 else 2
        coverage[max(0, offset - length) : offset, x] = 1.0
    coverage = np.rot90(coverage, int(rng.integers(0, 4)))
    _paint(img, coverage * 0.85, (0.2, 0.2, 0.22))


def render_sample(spec: SyntheticSpec, label: int, index: int) -> LesionSample:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, label, index]))
    side = spec.side
    style = spec.styles[label]
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)

    img = _skin(rng, side, yy, xx)
    r, theta = _ellipse(rng, style, side, yy, xx)
    mask = (r <= 1.0).astype(np.uint8)

    hue = rng.uniform(*style.hue) % 1.0
    color = np.array(colorsys.hsv_to_rgb(hue, rng.uniform(0.55, 0.85), rng.uniform(0.35, 0.6)))
    phase = rng.uniform(0.0, 2 * np.pi)
    stripe_dir = theta + rng.uniform(-0.3, 0.3)
    stripes = np.sin(2 * np.pi * style.texture * (xx * np.cos(stripe_dir) + yy * np.sin(stripe_dir)) / side + phase)
    lesion = color[None, None, :] * (1.0 + 0.18 * stripes[..., None])
    alpha = np.where(mask == 1, 0.35 + 0.65 * np.clip((1.0 - r) / style.fade, 0.0, 1.0), 0.0)
    img = img * (1.0 - alpha[..., None]) + lesion * alpha[..., None]

    if spec.artifacts:
        for _ in range(int(rng.integers(spec.hair_min, spec.hair_max + 1))):
            _hair(rng, img, side, yy, xx)
        if rng.uniform() < spec.ruler_prob:
            _ruler(rng, img, side)
        reduction = rng.uniform(spec.contrast_min, spec.contrast_max)
        m = img.mean()
        img = m + (img - m) * (1.0 - reduction)

    return LesionSample(
        image=np.clip(img, 0.0, 1.0), mask=mask, label=int(label), sample_id=f"c{label}_{index:04d}"
    )


def generate_dataset(spec: SyntheticSpec) -> list[LesionSample]:
    """All samples, ordered by class then index; fully determined by ``spec``."""
    return [render_sample(spec, c, i) for c in range(spec.n_classes) for i in range(spec.samples_per_class)]


def write_spec(spec: SyntheticSpec, path) -> None:
    Path(path).write_text(spec.to_text())


def read_spec(path) -> SyntheticSpec:
    return SyntheticSpec.from_text(Path(path).read_text())
