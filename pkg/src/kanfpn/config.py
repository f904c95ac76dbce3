"""Plain `key = value` experiment configuration.

Lines hold one assignment each; `#` starts a comment; unknown keys are
rejected. All knobs have desk-scale defaults, so a config file only needs
the keys it changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InvalidSpec
from .harness import TrainConfig
from .data import SceneSpec
from .pose import PoseModelConfig
from .stem import StemConfig, StemVariant

__all__ = ["ExperimentConfig", "parse_config_text", "load_config", "CONFIG_KEYS"]


@dataclass
class ExperimentConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    pose: PoseModelConfig = field(default_factory=PoseModelConfig)
    stem: StemConfig = field(default_factory=StemConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_samples: int = 64
    eval_samples: int = 16
    out_dir: str = "runs"

    def finalize(self) -> "ExperimentConfig":
        self.pose.input_extent = self.scene.extent
        self.stem.embed_dim = self.pose.embed_dim
        self.pose.validate()
        self.train.validate()
        self.scene.validate()
        return self


def _int_tuple(text: str) -> tuple:
    return tuple(int(v.strip()) for v in text.split(",") if v.strip())


def _set_extent_h(cfg, v):
    cfg.scene.extent = (int(v), cfg.scene.extent[1])


def _set_extent_w(cfg, v):
    cfg.scene.extent = (cfg.scene.extent[0], int(v))


def _set_scale_min(cfg, v):
    cfg.scene.scale_range = (float(v), cfg.scene.scale_range[1])


def _set_scale_max(cfg, v):
    cfg.scene.scale_range = (cfg.scene.scale_range[0], float(v))


CONFIG_KEYS = {
    "data.height": _set_extent_h,
    "data.width": _set_extent_w,
    "data.scale_min": _set_scale_min,
    "data.scale_max": _set_scale_max,
    "data.rotation_deg": lambda c, v: setattr(c.scene, "rotation_deg", float(v)),
    "data.noise": lambda c, v: setattr(c.scene, "noise", float(v)),
    "data.seed": lambda c, v: setattr(c.scene, "seed", int(v)),
    "data.train_samples": lambda c, v: setattr(c, "train_samples", int(v)),
    "data.eval_samples": lambda c, v: setattr(c, "eval_samples", int(v)),
    "model.embed_dim": lambda c, v: setattr(c.pose, "embed_dim", int(v)),
    "model.depth": lambda c, v: setattr(c.pose, "depth", int(v)),
    "model.heads": lambda c, v: setattr(c.pose, "heads", int(v)),
    "model.mlp_ratio": lambda c, v: setattr(c.pose, "mlp_ratio", int(v)),
    "model.sigma": lambda c, v: setattr(c.pose, "sigma", float(v)),
    "stem.variant": lambda c, v: setattr(c.stem, "variant", StemVariant.from_key(v)),
    "stem.widths": lambda c, v: setattr(c.stem.backbone, "widths", _int_tuple(v)),
    "stem.blocks": lambda c, v: setattr(c.stem.backbone, "blocks", _int_tuple(v)),
    "stem.fpn_width": lambda c, v: setattr(c.stem, "fpn_width", int(v)),
    "stem.kagn_degree": lambda c, v: setattr(c.stem, "kagn_degree", int(v)),
    "stem.kagn_bottleneck": lambda c, v: setattr(c.stem, "kagn_bottleneck", int(v)),
    "stem.cbam_reduction": lambda c, v: setattr(c.stem, "cbam_reduction", int(v)),
    "stem.cbam_spatial_kernel": lambda c, v: setattr(c.stem, "cbam_spatial_kernel", int(v)),
    "train.base_lr": lambda c, v: setattr(c.train, "base_lr", float(v)),
    "train.warmup_iters": lambda c, v: setattr(c.train, "warmup_iters", int(v)),
    "train.milestones": lambda c, v: setattr(c.train, "milestones", _int_tuple(v)),
    "train.total_epochs": lambda c, v: setattr(c.train, "total_epochs", int(v)),
    "train.batch_size": lambda c, v: setattr(c.train, "batch_size", int(v)),
    "train.lr_decay": lambda c, v: setattr(c.train, "lr_decay", float(v)),
    "train.eval_every": lambda c, v: setattr(c.train, "eval_every", int(v)),
    "train.seed": lambda c, v: setattr(c.train, "seed", int(v)),
    "out.dir": lambda c, v: setattr(c, "out_dir", v),
}


def parse_config_text(text: str, cfg: ExperimentConfig = None) -> ExperimentConfig:
    cfg = cfg or ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidSpec(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise InvalidSpec(f"config line {lineno}: unknown key {key!r}")
        try:
            CONFIG_KEYS[key](cfg, value)
        except (ValueError, InvalidSpec) as exc:
            raise InvalidSpec(f"config line {lineno}: bad value for {key}: {exc}") from None
    return cfg.finalize()


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())
