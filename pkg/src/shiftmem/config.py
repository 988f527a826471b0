"""Run configuration: one strict, documented structure for every command.

Sections mirror the pipeline stages. Unknown keys anywhere are rejected
before any work starts.
"""
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .corpus import GeneratorParams
from .errors import ConfigError
from .model import EncoderConfig
from .views import AugmentConfig


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    warmup_epochs: int = 3
    base_lr: float = 1.5e-3
    lr_reference_batch: int | None = 256  # peak lr = base_lr * batch_size / this; None uses base_lr as is
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.95)
    momentum: float = 0.999
    temperature: float = 0.2
    lam: float = 2.0
    mask_ratio: float = 0.6
    seed: int = 0
    entropy_bins: int = 256
    same_image_negatives: bool = False
    grad_clip: float | None = None
    checkpoint_every: int = 0
    dtype: str = "float32"
    corpus_path: str | None = None
    output_dir: str | None = None

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"warmup_epochs ({self.warmup_epochs}) must be in [0, epochs={self.epochs})")
        if self.base_lr <= 0 or self.weight_decay < 0 or self.temperature <= 0:
            raise ConfigError("base_lr and temperature must be positive, weight_decay non-negative")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError(f"betas must be two numbers in [0, 1), got {self.betas}")
        if not 0 <= self.momentum <= 1:
            raise ConfigError(f"momentum must be in [0, 1], got {self.momentum}")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if not 0 <= self.mask_ratio < 1:
            raise ConfigError(f"mask_ratio must be in [0, 1), got {self.mask_ratio}")
        if self.lr_reference_batch is not None and self.lr_reference_batch < 1:
            raise ConfigError("lr_reference_batch must be positive or null")
        if self.entropy_bins < 2:
            raise ConfigError("entropy_bins must be >= 2")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive or null")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def peak_lr(self):
        """Learning rate at the end of warmup (linear scaling rule)."""
        if self.lr_reference_batch is None:
            return self.base_lr
        return self.base_lr * self.batch_size / self.lr_reference_batch


MEM_TARGETS = ("entropy", "pixels")


@dataclass
class AblationConfig:
    shifted_patchify_on: bool = True
    patch_wise_loss_on: bool = True
    mem_on: bool = True
    mem_target: str = "entropy"

    def __post_init__(self):
        if self.mem_target not in MEM_TARGETS:
            raise ConfigError(f"mem_target must be one of {MEM_TARGETS}, got {self.mem_target!r}")


PROBE_FEATURES = ("whiten", "standardize", "raw")

# rows (a)-(f): shifted patchify, patch-wise loss, masked entropy modeling
ABLATIONS = {
    "a": (False, False, False),
    "b": (True, False, False),
    "c": (False, True, False),
    "d": (False, False, True),
    "e": (True, True, False),
    "f": (True, True, True),
}


@dataclass
class ProbeConfig:
    epochs: int = 30
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    features: str = "whiten"  # whiten | standardize | raw, fitted on the train split
    split: tuple = (0.75, 0.0, 0.25)
    seed: int = 0

    def __post_init__(self):
        self.split = tuple(float(f) for f in self.split)
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("probe epochs, batch_size and lr must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("probe momentum must be in [0, 1) and weight_decay >= 0")
        if self.features not in PROBE_FEATURES:
            raise ConfigError(f"probe features must be one of {PROBE_FEATURES}, got {self.features!r}")


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    generator: GeneratorParams = field(default_factory=GeneratorParams)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        if self.generator.image_size != self.encoder.image_size:
            raise ConfigError(
                f"generator image_size {self.generator.image_size} != encoder patch_size*grid_side "
                f"{self.encoder.image_size}"
            )
        if self.generator.patch_size != self.encoder.patch_size:
            raise ConfigError("generator and encoder patch sizes differ")
        self.augment.resolved_max_shift(self.encoder.patch_size)

    def to_dict(self, portable=False):
        d = _plain(dataclasses.asdict(self))
        if portable:
            d["train"].pop("corpus_path")
            d["train"].pop("output_dir")
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for f in dataclasses.fields(cls):
            sub = f.default_factory
            values = d.get(f.name)
            kwargs[f.name] = _build(sub, {} if values is None else values, f.name)
        return cls(**kwargs)

    def with_ablation(self, row):
        """Copy with the shifted patchify / patch-wise loss / MEM flags of ablation row a-f."""
        if row not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {sorted(ABLATIONS)}, got {row!r}")
        sp, pw, mem = ABLATIONS[row]
        return self.replace(ablation={"shifted_patchify_on": sp, "patch_wise_loss_on": pw, "mem_on": mem})

    def replace(self, **sections):
        """Copy with some section keys overridden, e.g. ``replace(train={"epochs": 2})``."""
        d = self.to_dict()
        for name, updates in sections.items():
            if name not in d:
                raise ConfigError(f"unknown config section {name!r}")
            d[name].update(updates)
        return RunConfig.from_dict(d)


def _build(cls, values, section):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"section {section!r}: {e}") from e


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def load_config(path=None):
    if path is None:
        return RunConfig()
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return RunConfig.from_dict(doc)


def dump_config(cfg, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
