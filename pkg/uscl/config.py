"""
Run configuration.

A run is configured by an optional UTF-8 ``key = value`` file (``#`` comments
allowed, parsed with python-dotenv, no interpolation) plus ``--key-name value``
flags. Every key in ``CONFIG_KEYS`` can appear in both places.

Precedence: flag > config file > ``MUSCL_OUTPUT_DIR`` (output_dir only) >
built-in default.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Callable, Mapping

from django.conf import settings
from dotenv import dotenv_values

from .data import SynthConfig
from .exceptions import ConfigError
from .nets import ArchConfig
from .pairgen import AugmentConfig, PairGenConfig, PairStrategy
from .services.training import OptimConfig, TrainMode

SYNTHETIC = "synthetic"


def parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_channels(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def format_value(value: Any) -> str:
    """Canonical text form of a config value (inverse of the key's parser)."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ConfigKey:
    name: str
    parse: Callable[[str], Any]
    help: str


@dataclass(frozen=True)
class RunConfig:
    """Every setting of one run, flat, one field per config key."""

    # Corpus
    corpus: str = SYNTHETIC
    n_videos: int = 60
    frames_per_video: int = 60
    fps: float = 23.0
    image_size: int = 32
    n_classes: int = 2
    noise_level: float = 0.05
    drift_speed: float = 0.3
    class_separation: float = 0.25
    corrupt_fraction: float = 0.0
    samples_per_second: float = 3.0
    # Pairs
    strategy: str = PairStrategy.S3.value
    mode: str = TrainMode.META.value
    beta_alpha: float = 2.0
    beta_beta: float = 2.0
    crop_min_ratio: float = 0.85
    flip_prob: float = 0.5
    jitter_strength: float = 0.6
    blur_enabled: bool = False
    allow_fallback: bool = True
    # Architecture
    conv_channels: tuple[int, ...] = (8, 16, 32)
    repr_dim: int = 64
    proj_dim: int = 32
    cmw_hidden: int = 100
    # Optimizer
    alpha1: float = 0.1
    alpha2: float = 6e-5
    adam_lr: float = 1e-3
    weight_decay: float = 1e-4
    tau: float = 0.5
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # Run
    epochs: int = 5
    steps_per_epoch: int = 0
    split_ratio: float = 0.8
    seed: int = 0
    output_dir: str = "runs"
    probe_epochs: int = 100
    probe_lr: float = 0.01
    test_ratio: float = 0.2
    export_metrics: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.steps_per_epoch < 0:
            raise ConfigError(f"steps_per_epoch must be >= 0, got {self.steps_per_epoch}")
        for name in ("split_ratio", "test_ratio"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {value}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.probe_epochs < 0 or not self.probe_lr > 0:
            raise ConfigError("probe_epochs must be >= 0 and probe_lr > 0")
        if self.strategy not in {s.value for s in PairStrategy}:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.mode not in {m.value for m in TrainMode}:
            raise ConfigError(f"unknown mode {self.mode!r}")
        # Build every sub-config once so invalid values fail here.
        self.synth_config()
        self.pair_config()
        self.arch_config()
        self.optim_config()

    @property
    def is_synthetic(self) -> bool:
        return self.corpus == SYNTHETIC

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            n_videos=self.n_videos,
            frames_per_video=self.frames_per_video,
            fps=self.fps,
            image_size=self.image_size,
            n_classes=self.n_classes,
            noise_level=self.noise_level,
            drift_speed=self.drift_speed,
            class_separation=self.class_separation,
            corrupt_fraction=self.corrupt_fraction,
            seed=self.seed,
        )

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            crop_min_ratio=self.crop_min_ratio,
            flip_prob=self.flip_prob,
            jitter_strength=self.jitter_strength,
            blur_enabled=self.blur_enabled,
        )

    def pair_config(self) -> PairGenConfig:
        return PairGenConfig(
            strategy=PairStrategy(self.strategy),
            beta_alpha=self.beta_alpha,
            beta_beta=self.beta_beta,
            augment=self.augment_config(),
            allow_fallback=self.allow_fallback,
        )

    def arch_config(self) -> ArchConfig:
        return ArchConfig(
            conv_channels=self.conv_channels,
            repr_dim=self.repr_dim,
            proj_dim=self.proj_dim,
            cmw_hidden=self.cmw_hidden,
        )

    def optim_config(self) -> OptimConfig:
        return OptimConfig(
            mode=TrainMode(self.mode),
            alpha1=self.alpha1,
            alpha2=self.alpha2,
            adam_lr=self.adam_lr,
            weight_decay=self.weight_decay,
            tau=self.tau,
            batch_size=self.batch_size,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
        )

    def with_values(self, **changes: Any) -> RunConfig:
        values = asdict(self)
        values.update(changes)
        return RunConfig(**values)

    def to_dict(self) -> dict[str, str]:
        """Canonical ``key -> text`` echo, in registry order."""
        return {f.name: format_value(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw: Mapping[str, str]) -> RunConfig:
        """Inverse of ``to_dict``; unknown keys are rejected, missing keys default."""
        return cls(**parse_values(raw))


_HELP = {
    "corpus": "'synthetic' or a directory in the on-disk corpus layout",
    "n_videos": "synthetic corpus: number of videos",
    "frames_per_video": "synthetic corpus: frames per video",
    "fps": "synthetic corpus: frame rate",
    "image_size": "synthetic corpus: square frame side in pixels",
    "n_classes": "synthetic corpus: number of latent classes",
    "noise_level": "synthetic corpus: per-frame speckle noise std",
    "drift_speed": "synthetic corpus: lesion/probe motion amplitude",
    "class_separation": "synthetic corpus: class texture offset, 0 (none) to 1 (strong)",
    "corrupt_fraction": "synthetic corpus: share of spliced two-class videos",
    "samples_per_second": "frame-set extraction rate",
    "strategy": "pair strategy: simclr, s1, s2 or s3",
    "mode": "meta (weighting net, bi-level SGD) or plain (AdamW)",
    "beta_alpha": "Beta(alpha, beta) for the interpolation coefficients",
    "beta_beta": "Beta(alpha, beta) for the interpolation coefficients",
    "crop_min_ratio": "minimum random crop area ratio",
    "flip_prob": "horizontal flip probability",
    "jitter_strength": "brightness/contrast jitter strength",
    "blur_enabled": "apply a 3x3 Gaussian blur",
    "allow_fallback": "degrade s3 -> s2 -> s1 for short frame sets",
    "conv_channels": "comma-separated encoder conv widths",
    "repr_dim": "representation dimension D",
    "proj_dim": "projection dimension d",
    "cmw_hidden": "weighting-net hidden width",
    "alpha1": "meta mode: model SGD learning rate",
    "alpha2": "meta mode: weighting-net SGD learning rate",
    "adam_lr": "plain mode: Adam learning rate",
    "weight_decay": "plain mode: decoupled weight decay",
    "tau": "InfoNCE temperature",
    "batch_size": "pairs per batch N",
    "adam_beta1": "Adam beta1",
    "adam_beta2": "Adam beta2",
    "adam_eps": "Adam epsilon",
    "epochs": "training epochs",
    "steps_per_epoch": "steps per epoch (0 = one pass over the train videos)",
    "split_ratio": "train share of the video-level train/valid split",
    "seed": "master seed",
    "output_dir": "output directory",
    "probe_epochs": "probe/fine-tune epochs",
    "probe_lr": "probe/fine-tune Adam learning rate",
    "test_ratio": "held-out video share for probing",
    "export_metrics": "write Prometheus metrics to <output_dir>/metrics.prom",
}

_PARSERS: dict[type, Callable[[str], Any]] = {
    int: int,
    float: float,
    str: str,
    bool: parse_bool,
}


def _parser_for(name: str) -> Callable[[str], Any]:
    if name == "conv_channels":
        return parse_channels
    default = RunConfig.__dataclass_fields__[name].default
    return _PARSERS[type(default)]


CONFIG_KEYS: dict[str, ConfigKey] = {
    f.name: ConfigKey(f.name, _parser_for(f.name), _HELP[f.name]) for f in fields(RunConfig)
}


def parse_values(raw: Mapping[str, str | None]) -> dict[str, Any]:
    """Typed values for a ``key -> text`` mapping; rejects unknown keys."""
    typed: dict[str, Any] = {}
    for key, text in raw.items():
        entry = CONFIG_KEYS.get(key)
        if entry is None:
            raise ConfigError(f"unknown config key {key!r}")
        if text is None:
            raise ConfigError(f"config key {key!r} has no value")
        try:
            typed[key] = entry.parse(text)
        except ValueError as e:
            raise ConfigError(f"bad value {text!r} for {key!r}: {e}") from e
    return typed


def read_config_file(path: str | Path) -> dict[str, str | None]:
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {config_path}")
    return dict(dotenv_values(config_path, interpolate=False, encoding="utf-8"))


def build_run_config(
    config_path: str | Path | None = None,
    overrides: Mapping[str, str | None] | None = None,
    base: RunConfig | None = None,
) -> RunConfig:
    """
    Merge defaults, the environment's output dir, the config file and flags.

    Args:
        config_path: optional key=value file
        overrides: ``key -> text`` from command-line flags; ``None`` values are ignored
        base: start from this config (a checkpoint's run echo) instead of the defaults

    Raises:
        ConfigError: unknown key, missing file or invalid value
    """
    values: dict[str, Any] = {}
    if base is None:
        values["output_dir"] = settings.DEFAULT_OUTPUT_DIR
    if config_path is not None:
        values.update(parse_values(read_config_file(config_path)))
    if overrides:
        values.update(parse_values({k: v for k, v in overrides.items() if v is not None}))
    if base is not None:
        return base.with_values(**values)
    return RunConfig(**values)
