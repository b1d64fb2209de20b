"""Flat ``key=value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment. Lists are comma
separated. Every key can be overridden on the command line with
``--key value``.
"""

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Optional, Tuple

from .backbone import BackboneConfig
from .data.iterate import ResolutionSetting
from .distill import DistillConfig
from .training import Schedule

TASKS = ("digit_classification", "face_verification", "identification")


class ConfigError(ValueError):
    pass


def _tuple_int(v) -> Tuple[int, ...]:
    if isinstance(v, (tuple, list)):
        return tuple(int(x) for x in v)
    v = str(v).strip()
    return tuple(int(x) for x in v.split(",") if x.strip()) if v else ()


@dataclass
class RunConfig:
    task: str = "digit_classification"
    preset: str = "desk"
    # backbone
    widths: Tuple[int, ...] = (16, 32, 64)
    blocks_per_stage: int = 2
    embedding_dim: int = 128
    input_size: int = 32
    # head
    scale: float = 64.0
    margin: float = 0.35
    # distillation
    distill: str = "fskd"
    lambda_distill: float = 5.0
    flatten_mode: str = "whole_map"
    # resolution
    resolution_mode: str = "single"
    ratios: Tuple[int, ...] = (4,)
    eval_ratio: int = 4
    # optimizer schedule
    lr: float = 0.05
    milestones: Tuple[int, ...] = (12, 17)
    decay: float = 0.1
    epochs: int = 20
    schedule_unit: str = "epoch"
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    # paths
    train_set: str = ""
    eval_set: str = ""
    dataset_format: str = "auto"
    pairs: str = ""
    gallery_set: str = ""
    probe_set: str = ""
    teacher: str = ""
    student: str = ""
    checkpoint: str = ""
    resume: str = ""
    run_name: str = ""
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"
    verification_folds: int = 1
    n_images: int = 1000

    _INT = ("blocks_per_stage", "embedding_dim", "input_size", "eval_ratio", "epochs", "batch_size", "seed",
            "verification_folds", "n_images")
    _FLOAT = ("scale", "margin", "lambda_distill", "lr", "decay", "momentum", "weight_decay")
    _TUPLE = ("widths", "ratios", "milestones")

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, values: Dict[str, str], base: Optional["RunConfig"] = None) -> "RunConfig":
        cfg = base if base is not None else cls()
        cfg = cls(**asdict(cfg))
        if "preset" in values:
            cfg = apply_preset(cfg, values["preset"])
        known = set(cls.keys())
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                if key in cls._INT:
                    val = int(raw)
                elif key in cls._FLOAT:
                    val = float(raw)
                elif key in cls._TUPLE:
                    val = _tuple_int(raw)
                else:
                    val = str(raw).strip()
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
            setattr(cfg, key, val)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.schedule_unit not in ("epoch", "step"):
            raise ConfigError("schedule_unit must be 'epoch' or 'step'")
        try:
            self.backbone_config()
            self.schedule()
            self.resolution()
            self.distill_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.scale <= 0 or not 0 <= self.margin < 1:
            raise ConfigError("scale must be positive and margin in [0, 1)")

    def backbone_config(self, in_channels: int = 3) -> BackboneConfig:
        return BackboneConfig(self.widths, self.blocks_per_stage, self.embedding_dim, self.input_size, in_channels)

    def schedule(self) -> Schedule:
        return Schedule(
            self.lr, self.milestones, self.decay, self.epochs, self.batch_size, self.momentum, self.weight_decay,
            self.schedule_unit,
        )

    def resolution(self) -> ResolutionSetting:
        return ResolutionSetting(self.resolution_mode, self.ratios)

    def distill_config(self) -> DistillConfig:
        return DistillConfig(self.distill, self.lambda_distill, self.flatten_mode)

    def dumps(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


PRESETS = {
    "desk": {},
    # digit recipe: epochs, lr 0.01, x0.1 at 30/60/80, batch 64, 90 epochs
    "full_digit": {"lr": 0.01, "milestones": (30, 60, 80), "decay": 0.1, "epochs": 90, "batch_size": 64,
                    "schedule_unit": "epoch"},
    # face recipe is counted in iterations: lr 0.1, x0.1 at 18K/28K/36K/44K, 47K total, batch 256
    "full_face": {"lr": 0.1, "milestones": (18000, 28000, 36000, 44000), "decay": 0.1, "epochs": 47000,
                   "batch_size": 256, "schedule_unit": "step"},
}


def apply_preset(cfg: RunConfig, name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    for k, v in PRESETS[name].items():
        setattr(cfg, k, v)
    cfg.preset = name
    return cfg


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values


def load_config(path=None, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    values: Dict[str, str] = {}
    if path:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        values.update(parse_config_text(text, str(p)))
    values.update(overrides or {})
    return RunConfig.from_dict(values)
