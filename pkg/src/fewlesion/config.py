"""Flat ``key=value`` run configuration shared by every CLI command.

Training keys are the ``FusionConfig`` field names. Dataset keys carry a
``data.`` prefix and follow ``SyntheticSpec`` (plus ``data.preset``).
Evaluation, split and Grad-CAM keys are listed in ``EXTRA_DEFAULTS``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import SyntheticSpec, clean_spec, high_artifact_spec
from .fewshot import ClassSplit
from .fusion import FusionConfig

PRESETS = {"default": SyntheticSpec, "clean": clean_spec, "high_artifact": high_artifact_spec}

EXTRA_DEFAULTS: dict[str, object] = {
    "seen": (0, 1, 2, 3),
    "unseen": (4, 5, 6),
    "episodes": 100,
    "eval_seed": 0,
    "shots": (),  # empty: evaluate at n only
    "eval_fusion": True,
    "gradcam_support": 5,
}

RESOLVED_NAME = "config.resolved.txt"


class ConfigError(ValueError):
    pass


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for key '{key}'") from None


@dataclass
class RunConfig:
    fusion: FusionConfig = field(default_factory=FusionConfig)
    data_preset: str = "default"
    data_keys: dict[str, str] = field(default_factory=dict)
    seen: tuple[int, ...] = (0, 1, 2, 3)
    unseen: tuple[int, ...] = (4, 5, 6)
    episodes: int = 100
    eval_seed: int = 0
    shots: tuple[int, ...] = ()
    eval_fusion: bool = True
    gradcam_support: int = 5

    # -- derived views ------------------------------------------------------
    def split(self) -> ClassSplit:
        try:
            return ClassSplit(self.seen, self.unseen)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def synthetic_spec(self) -> SyntheticSpec:
        if self.data_preset not in PRESETS:
            raise ConfigError(f"unknown data.preset {self.data_preset!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[self.data_preset]()
        text = base.to_text() + "".join(f"{k}={v}\n" for k, v in self.data_keys.items())
        try:
            return SyntheticSpec.from_text(text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid data spec: {exc}") from None

    def shot_list(self) -> tuple[int, ...]:
        return self.shots or (self.fusion.n,)

    # -- serialization --------------------------------------------------------
    def to_text(self) -> str:
        lines = [f"{k}={_format(v)}" for k, v in asdict(self.fusion).items()]
        lines.append(f"data.preset={self.data_preset}")
        lines += [f"data.{k}={v}" for k, v in self.data_keys.items()]
        for key in EXTRA_DEFAULTS:
            lines.append(f"{key}={_format(getattr(self, key))}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / RESOLVED_NAME
        path.write_text(self.to_text())
        return path


def parse_pairs(lines) -> list[tuple[str, str]]:
    pairs = []
    for n, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {raw.rstrip()!r}")
        key, _, value = line.partition("=")
        pairs.append((key.strip(), value.strip()))
    return pairs


def build(pairs) -> RunConfig:
    """Resolve ``(key, value)`` pairs in order over the defaults; later pairs win."""
    fusion_defaults = asdict(FusionConfig())
    spec_fields = {f.name for f in fields(SyntheticSpec)} - {"styles"}
    fusion_values: dict[str, object] = {}
    extras: dict[str, object] = {}
    data_keys: dict[str, str] = {}
    preset = "default"
    for key, value in pairs:
        if key in fusion_defaults:
            fusion_values[key] = _coerce(key, value, fusion_defaults[key])
        elif key in EXTRA_DEFAULTS:
            extras[key] = _coerce(key, value, EXTRA_DEFAULTS[key])
        elif key == "data.preset":
            preset = value
        elif key.startswith("data."):
            sub = key[5:]
            if sub not in spec_fields and not (sub.startswith("class") and "." in sub):
                raise ConfigError(f"unknown config key '{key}'")
            data_keys[sub] = value
        else:
            raise ConfigError(f"unknown config key '{key}'")
    try:
        fusion = FusionConfig(**{**fusion_defaults, **fusion_values})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig(fusion=fusion, data_preset=preset, data_keys=data_keys, **extras)
    if cfg.episodes < 1:
        raise ConfigError(f"episodes must be >= 1, got {cfg.episodes}")
    if any(n < 1 for n in cfg.shots):
        raise ConfigError(f"shots must be positive, got {cfg.shots}")
    cfg.split()
    cfg.synthetic_spec()
    return cfg


def load(path=None, overrides=()) -> RunConfig:
    """Config file (optional) then ``key=value`` override strings."""
    pairs = []
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        pairs += parse_pairs(p.read_text().splitlines())
    pairs += parse_pairs(overrides)
    return build(pairs)
