"""Run configuration: frozen dataclass sections and a flat ``section.key=value`` form.

Resolution order (later wins): dataclass defaults, config file, environment
(``DUALMEM_<SECTION>__<KEY>``), ``--set section.key=value`` overrides, then
dedicated CLI flags. Unknown keys are errors, never ignored.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Tuple

from .errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "DUALMEM_"

ABLATION_VARIANTS = ("full", "no_stage2", "no_relpose", "no_tdm", "no_psm", "no_tca", "unified")


@dataclass(frozen=True)
class ModelConfig:
    image_height: int = 48
    image_width: int = 64
    patch: int = 8
    dim: int = 64
    head_dim: int = 16
    rope_base: float = 100.0
    encoder_layers: int = 2
    mlp_ratio: int = 4
    dtype: str = "float64"


@dataclass(frozen=True)
class TcaConfig:
    window: int = 5
    layers: int = 4


@dataclass(frozen=True)
class TdmConfig:
    window: int = 2
    levels: int = 3
    channels: int = 64
    layers: int = 4
    scale_correlation: bool = True


@dataclass(frozen=True)
class PsmConfig:
    capacity: int = 16
    channels: int = 64
    layers: int = 4


@dataclass(frozen=True)
class DecoderConfig:
    stages: int = 4
    fov_max_deg: float = 120.0


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.2
    beta: float = 0.1
    w_conf: float = 1.0
    w_abspose: float = 0.1
    w_relpose: float = 0.1
    reduction: str = "mean"


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    steps: int = 200
    stage2_steps: int = 100
    lr: float = 5e-4
    warmup_frac: float = 0.05
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    batch_size: int = 1
    stage1_length: int = 5
    stage2_min: int = 5
    stage2_max: int = 16
    workers: int = 1
    nan_patience: int = 3
    log_every: int = 10
    variant: str = "full"


@dataclass(frozen=True)
class SceneConfig:
    width: int = 64
    height: int = 48
    frames: int = 16
    fov_y_deg: float = 60.0
    dynamic_objects: int = 1
    static_boxes: int = 2
    spheres: int = 1
    camera_speed: float = 0.08
    object_speed: float = 0.05
    room_size: float = 6.0


@dataclass(frozen=True)
class EvalConfig:
    keyframe_stride: int = 1
    rpe_delta: int = 1
    depth_alignment: str = "scale"
    recon_views: int = 4
    conf_threshold: float = 1.0
    holdout: int = 2


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    tca: TcaConfig = field(default_factory=TcaConfig)
    tdm: TdmConfig = field(default_factory=TdmConfig)
    psm: PsmConfig = field(default_factory=PsmConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        m = self.model
        if m.image_height % m.patch or m.image_width % m.patch:
            raise ConfigError(f"image {m.image_height}x{m.image_width} not divisible by patch {m.patch}")
        if m.patch & (m.patch - 1):
            raise ConfigError(f"patch size must be a power of two, got {m.patch}")
        if m.dim % m.head_dim:
            raise ConfigError(f"dim {m.dim} not divisible by head_dim {m.head_dim}")
        if m.head_dim < 6:
            raise ConfigError(f"head_dim {m.head_dim} leaves no channels for rotary positions")
        for name, c in (("tdm.channels", self.tdm.channels), ("psm.channels", self.psm.channels)):
            if c % m.head_dim:
                raise ConfigError(f"{name}={c} not divisible by head_dim {m.head_dim}")
        if m.dtype not in ("float64", "float32"):
            raise ConfigError(f"unsupported dtype {m.dtype!r}")
        if self.tca.window < 1:
            raise ConfigError(f"history window must be >= 1, got {self.tca.window}")
        if self.tdm.window < 0:
            raise ConfigError(f"dynamics memory window must be >= 0, got {self.tdm.window}")
        if self.tdm.levels < 1:
            raise ConfigError(f"correlation pyramid needs >= 1 level, got {self.tdm.levels}")
        if self.psm.capacity < 1:
            raise ConfigError(f"structure memory capacity must be >= 1, got {self.psm.capacity}")
        if self.decoder.stages < 1:
            raise ConfigError(f"readout needs >= 1 stage, got {self.decoder.stages}")
        if not 0.0 < self.decoder.fov_max_deg < 180.0:
            raise ConfigError(f"fov_max_deg must be in (0, 180), got {self.decoder.fov_max_deg}")
        if self.loss.reduction not in ("mean", "sum"):
            raise ConfigError(f"loss reduction must be 'mean' or 'sum', got {self.loss.reduction!r}")
        t = self.train
        if t.stage not in (1, 2):
            raise ConfigError(f"training stage must be 1 or 2, got {t.stage}")
        if not 1 <= t.stage2_min <= t.stage2_max:
            raise ConfigError(f"bad stage-2 length range [{t.stage2_min}, {t.stage2_max}]")
        if t.batch_size < 1 or t.workers < 1 or t.stage1_length < 1:
            raise ConfigError("batch_size, workers and stage1_length must be >= 1")
        if t.variant not in ABLATION_VARIANTS:
            raise ConfigError(f"unknown variant {t.variant!r}; expected one of {ABLATION_VARIANTS}")
        if self.eval.depth_alignment not in ("scale", "scale_shift", "metric"):
            raise ConfigError(f"unknown depth alignment {self.eval.depth_alignment!r}")
        if self.eval.keyframe_stride < 1 or self.eval.rpe_delta < 1:
            raise ConfigError("keyframe_stride and rpe_delta must be >= 1")
        return self


# ----------------------------
# Flat key=value form
# ----------------------------

def _sections() -> Dict[str, type]:
    hints = typing.get_type_hints(RunConfig)
    return {f.name: hints[f.name] for f in dataclasses.fields(RunConfig) if f.name != "seed"}


def _coerce(raw: str, annotation, key: str):
    raw = raw.strip()
    try:
        if annotation is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if annotation is int:
            return int(raw)
        if annotation is float:
            return float(raw)
        if annotation is str:
            return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {annotation.__name__}") from exc
    raise ConfigError(f"{key}: unsupported field type {annotation!r}")


def to_flat(config: RunConfig) -> Dict[str, str]:
    out = {"seed": str(config.seed)}
    for name in _sections():
        for f in dataclasses.fields(getattr(config, name)):
            out[f"{name}.{f.name}"] = str(getattr(getattr(config, name), f.name))
    return out


def apply_overrides(config: RunConfig, values: Mapping[str, str], source: str = "override") -> RunConfig:
    sections = _sections()
    updates: Dict[str, Dict[str, object]] = {}
    seed = config.seed
    for key, raw in values.items():
        key = key.strip()
        if key == "seed":
            seed = _coerce(raw, int, key)
            continue
        section, _, name = key.partition(".")
        if section not in sections:
            raise ConfigError(f"{source}: unknown config section in {key!r}")
        hints = typing.get_type_hints(sections[section])
        if name not in hints:
            raise ConfigError(f"{source}: unknown config key {key!r}")
        updates.setdefault(section, {})[name] = _coerce(raw, hints[name], key)
    replaced = {s: dataclasses.replace(getattr(config, s), **kv) for s, kv in updates.items()}
    return dataclasses.replace(config, seed=seed, **replaced)


def parse_lines(lines: Iterable[str], source: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def env_overrides(environ: Mapping[str, str]) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, sep, key = rest.partition("__")
        values[f"{section}.{key}" if sep else section] = raw
    return values


def load_config(
    path: Optional[Path] = None,
    environ: Optional[Mapping[str, str]] = None,
    overrides: Iterable[str] = (),
) -> RunConfig:
    config = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        config = apply_overrides(config, parse_lines(path.read_text().splitlines(), str(path)), str(path))
    env = os.environ if environ is None else environ
    config = apply_overrides(config, env_overrides(env), "environment")
    config = apply_overrides(config, parse_lines(overrides, "--set"), "--set")
    return config.validate()


def write_resolved(config: RunConfig, path: Path) -> None:
    """Echo the fully resolved configuration next to run outputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k}={v}\n" for k, v in to_flat(config).items()))
    logger.info("resolved config written to %s", path)


def variant_config(config: RunConfig, variant: str) -> RunConfig:
    """Configuration for one ablation variant; only the named wiring changes."""
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {ABLATION_VARIANTS}")
    loss = config.loss
    if variant == "no_relpose":
        loss = dataclasses.replace(loss, w_relpose=0.0)
    train = dataclasses.replace(config.train, variant=variant)
    return dataclasses.replace(config, loss=loss, train=train)


def stage_window(config: RunConfig) -> Tuple[int, int]:
    t = config.train
    if t.stage == 1:
        return t.stage1_length, t.stage1_length
    return t.stage2_min, t.stage2_max
