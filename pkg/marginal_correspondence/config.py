"""Configuration management for the correspondence experiments."""

import math
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from dotenv import find_dotenv, load_dotenv

from .errors import ConfigError

ENV_PREFIX = "MCL_"

TASKS = ("mosaic", "shapes")
TASK_ALIASES = {"gradient-shapes": "shapes"}
LOSSES = ("mcl", "infonce", "none")


@dataclass
class ContrastiveConfig:
    """Hyperparameters of the contrastive losses.

    Attributes:
        margin_m: Additive angular margin on the positive pair, in radians
        scale_s: Radius of the feature hypersphere, multiplies every logit
        temperature_tau: Temperature of the plain InfoNCE baseline
    """

    margin_m: float = 0.4
    scale_s: float = 10.0
    temperature_tau: float = 0.1

    def validate(self) -> bool:
        if not 0.0 <= self.margin_m < math.pi / 2:
            raise ConfigError(f"margin must lie in [0, pi/2), got {self.margin_m}")
        if self.scale_s <= 0:
            raise ConfigError(f"scale must be positive, got {self.scale_s}")
        if self.temperature_tau <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature_tau}")
        return True

    @classmethod
    def from_experiment(cls, config: "ExperimentConfig") -> "ContrastiveConfig":
        return cls(
            margin_m=config.margin,
            scale_s=config.scale,
            temperature_tau=config.temperature,
        )


@dataclass
class LossWeights:
    """Weights of the correspondence objective.

    Attributes:
        cyc: Cycle-consistency loss
        fcst: Feature consistency loss
        contrastive: Marginal contrastive (or InfoNCE) loss
        pse: Pseudo pair loss
    """

    cyc: float = 1.0
    fcst: float = 1.0
    contrastive: float = 1.0
    pse: float = 1.0

    def validate(self) -> bool:
        for name, value in self.as_dict().items():
            if value < 0 or not math.isfinite(value):
                raise ConfigError(f"loss weight '{name}' must be a finite value >= 0, got {value}")
        return True

    def as_dict(self) -> Dict[str, float]:
        return {"cyc": self.cyc, "fcst": self.fcst, "contrastive": self.contrastive, "pse": self.pse}


@dataclass
class ExperimentConfig:
    """Configuration of one training / evaluation run.

    Attributes:
        task: Synthetic task, ``mosaic`` or ``shapes`` (alias ``gradient-shapes``)
        image_size: Side of the square input images in pixels
        in_channels: Channels of the condition and image inputs
        permute: Rearrange exemplar cells with a random permutation
        jitter: Apply photometric jitter to exemplars and pseudo exemplars
        pseudo_permute: Rearrange the cells of the pseudo exemplar Y' with a
            random permutation; contrastive positives are then taken from Y'
        jitter_gain: Per-channel gain is drawn from [1 - gain, 1 + gain]
        jitter_noise: Standard deviation of the additive Gaussian noise
        shape_count: Number of label regions in the ``shapes`` task
        kernel_size: Convolution kernel side of both encoders
        encoder_channels: Output channels of each conv layer
        encoder_strides: Stride of each conv layer
        leaky_slope: Negative slope of the leaky ReLU between layers
        scm: Augment features with projected self-correlation maps
        scm_dim: Output dimension of the SCM projection
        loss: Contrastive term, ``mcl``, ``infonce`` or ``none`` (baseline)
        margin: Angular margin of the marginal contrastive loss (radians)
        scale: Hypersphere radius s
        temperature: InfoNCE temperature tau
        bidirectional: Sum the x->y and y->x directions of the contrastive loss
        sharpness: Softmax sharpness turning similarities into T
        normalize_eps: Norm floor used by row normalization
        lambda_cyc / lambda_fcst / lambda_contrastive / lambda_pse: Loss weights
        learning_rate, beta1, beta2, adam_eps: Adam hyperparameters
        seed: Seed of parameter init and training data
        steps: Optimizer steps
        batch_size: Image pairs per step
        log_every: Steps between evaluation rows in the metrics CSV
        eval_pairs: Held-out pairs scored at every evaluation row
    """

    # Data
    task: str = "mosaic"
    image_size: int = 64
    in_channels: int = 3
    permute: bool = True
    jitter: bool = True
    pseudo_permute: bool = True
    jitter_gain: float = 0.2
    jitter_noise: float = 0.02
    shape_count: int = 5

    # Encoders
    kernel_size: int = 3
    encoder_channels: Tuple[int, ...] = (16, 16, 16)
    encoder_strides: Tuple[int, ...] = (2, 2, 1)
    leaky_slope: float = 0.2

    # Self-correlation maps
    scm: bool = False
    scm_dim: int = 32

    # Contrastive loss
    loss: str = "mcl"
    margin: float = 0.4
    scale: float = 10.0
    temperature: float = 0.1
    bidirectional: bool = True

    # Correspondence
    sharpness: float = 100.0
    normalize_eps: float = 1e-12

    # Loss weights
    lambda_cyc: float = 1.0
    lambda_fcst: float = 1.0
    lambda_contrastive: float = 1.0
    lambda_pse: float = 1.0

    # Optimizer
    learning_rate: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.999
    adam_eps: float = 1e-8

    # Run control
    seed: int = 1
    steps: int = 2000
    batch_size: int = 4
    log_every: int = 200
    eval_pairs: int = 4

    @property
    def total_stride(self) -> int:
        return math.prod(self.encoder_strides)

    @property
    def grid_size(self) -> int:
        """Side of the feature grid on which correspondence is built."""
        return self.image_size // self.total_stride

    @property
    def num_positions(self) -> int:
        return self.grid_size * self.grid_size

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(
            cyc=self.lambda_cyc,
            fcst=self.lambda_fcst,
            contrastive=self.lambda_contrastive,
            pse=self.lambda_pse,
        )

    @property
    def contrastive(self) -> ContrastiveConfig:
        return ContrastiveConfig.from_experiment(self)

    @property
    def run_id(self) -> str:
        scm = "scm" if self.scm else "noscm"
        return f"{self.task}-{self.loss}-m{self.margin:g}-{scm}-s{self.seed}"

    @classmethod
    def full_scale_preset(cls, **overrides) -> "ExperimentConfig":
        """Full-scale variant: 64x64 correspondence grid from 256x256 images."""
        preset = cls(image_size=256, scm_dim=256)
        return preset.with_overrides(**overrides)

    @classmethod
    def from_env(cls, **overrides) -> "ExperimentConfig":
        """Create configuration from environment variables.

        A ``.env`` file found from the working directory is loaded first.
        Every field can be set with ``MCL_<FIELD>`` (upper case), e.g.
        ``MCL_STEPS=500`` or ``MCL_SCM=on``.

        Args:
            **overrides: Override any configuration values

        Returns:
            ExperimentConfig instance
        """
        load_dotenv(find_dotenv(usecwd=True) or None)

        values: Dict[str, Any] = {}
        for f in fields(cls):
            raw = os.getenv(ENV_PREFIX + f.name.upper())
            if raw is not None:
                values[f.name] = _parse_value(f.name, raw, f.default)

        config = cls(**values)
        return config.with_overrides(**overrides)

    @classmethod
    def from_file(
        cls,
        path: Union[str, Path],
        base: Optional["ExperimentConfig"] = None,
        **overrides,
    ) -> "ExperimentConfig":
        """Load a flat ``key = value`` config file.

        Blank lines and lines starting with ``#`` are ignored. Unknown or
        repeated keys are errors so typos never pass silently.

        Args:
            path: UTF-8 text file
            base: Config whose values the file overrides (defaults if None)
            **overrides: Applied after the file

        Raises:
            ConfigError: On unknown keys, duplicates or unparsable values
        """
        text = Path(path).read_text(encoding="utf-8")
        return cls.from_lines(text.splitlines(), base=base, source=str(path)).with_overrides(**overrides)

    @classmethod
    def from_lines(
        cls,
        lines: List[str],
        base: Optional["ExperimentConfig"] = None,
        source: str = "<config>",
    ) -> "ExperimentConfig":
        defaults = {f.name: f.default for f in fields(cls)}
        seen: Dict[str, int] = {}
        values: Dict[str, Any] = {}

        for lineno, line in enumerate(lines, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in defaults:
                raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
            if key in seen:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen[key]})")
            seen[key] = lineno
            try:
                values[key] = _parse_value(key, raw, defaults[key])
            except ConfigError as e:
                raise ConfigError(f"{source}:{lineno}: {e}") from None

        return replace(base or cls(), **values)

    def to_lines(self) -> List[str]:
        """Serialize to the ``key = value`` format read by ``from_lines``."""
        return [f"{f.name} = {_format_value(getattr(self, f.name))}" for f in fields(self)]

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        known = {f.name for f in fields(self)}
        unknown = sorted(k for k in overrides if k not in known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = {k: v for k, v in overrides.items() if v is not None}
        if "task" in values:
            values["task"] = TASK_ALIASES.get(values["task"], values["task"])
        if "encoder_channels" in values:
            values["encoder_channels"] = tuple(values["encoder_channels"])
        if "encoder_strides" in values:
            values["encoder_strides"] = tuple(values["encoder_strides"])
        return replace(self, **values)

    def validate(self) -> bool:
        """Validate configuration.

        Returns:
            True if configuration is valid

        Raises:
            ConfigError: If configuration is invalid
        """
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")

        for name in ("image_size", "in_channels", "kernel_size", "scm_dim", "batch_size", "log_every", "eval_pairs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd so padding keeps the grid aligned")
        if self.shape_count < 1:
            raise ConfigError("shape_count must be positive")

        if not self.encoder_channels or len(self.encoder_channels) != len(self.encoder_strides):
            raise ConfigError("encoder_channels and encoder_strides must be non-empty and of equal length")
        if any(c < 1 for c in self.encoder_channels) or any(s < 1 for s in self.encoder_strides):
            raise ConfigError("encoder channels and strides must be positive")
        if self.image_size % self.total_stride != 0:
            raise ConfigError(
                f"image_size {self.image_size} is not divisible by the total encoder stride {self.total_stride}"
            )

        if not 0.0 <= self.jitter_gain < 1.0:
            raise ConfigError("jitter_gain must lie in [0, 1)")
        if self.jitter_noise < 0:
            raise ConfigError("jitter_noise must be >= 0")
        if self.leaky_slope < 0:
            raise ConfigError("leaky_slope must be >= 0")

        self.contrastive.validate()
        if self.sharpness <= 0:
            raise ConfigError("sharpness must be positive")
        if self.normalize_eps <= 0:
            raise ConfigError("normalize_eps must be positive")
        self.loss_weights.validate()

        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be positive")

        return True


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_value(key: str, raw: str, default: Any) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"invalid value for {key!r}: {raw!r}") from None
    if key == "task":
        return TASK_ALIASES.get(raw, raw)
    return raw


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)
