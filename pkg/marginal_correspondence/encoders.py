"""Condition / image encoders, the parameter store and the Adam optimizer."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import ExperimentConfig
from .errors import DimensionError, DivergenceError
from .feature_core import (
    FeatureGrid,
    Tape,
    Tensor,
    add_channel_bias,
    conv2d,
    leaky_relu,
    make_rng,
    normalize_rows,
    reshape,
)
from .scm import ScmProjection

logger = logging.getLogger(__name__)

CONDITION_ENCODER = "ex"
IMAGE_ENCODER = "ez"
CONDITION_PROJECTION = "scm_x"
IMAGE_PROJECTION = "scm_z"


@dataclass
class EncoderParams:
    """A stack of 'same'-padded strided conv layers with leaky ReLU in between.

    ``kernels[i]`` has shape (k, k, C_in, C_out); no activation follows the
    last layer, whose output rows are L2-normalized.
    """

    prefix: str
    kernels: List[Tensor]
    biases: List[Tensor]
    strides: List[int]
    leaky_slope: float = 0.2

    def __post_init__(self):
        if not (len(self.kernels) == len(self.biases) == len(self.strides)) or not self.kernels:
            raise DimensionError("kernels, biases and strides must be non-empty and of equal length")
        for i, (kernel, bias) in enumerate(zip(self.kernels, self.biases)):
            if kernel.ndim != 4 or bias.shape != (kernel.shape[3],):
                raise DimensionError(f"layer {i}: kernel {kernel.shape} and bias {bias.shape} disagree")
            if i > 0 and kernel.shape[2] != self.kernels[i - 1].shape[3]:
                raise DimensionError(f"layer {i} expects {kernel.shape[2]} channels, previous layer gives "
                                     f"{self.kernels[i - 1].shape[3]}")

    @property
    def in_channels(self) -> int:
        return self.kernels[0].shape[2]

    @property
    def out_channels(self) -> int:
        return self.kernels[-1].shape[3]

    @property
    def total_stride(self) -> int:
        return int(np.prod(self.strides))

    def named_tensors(self) -> Dict[str, Tensor]:
        named: Dict[str, Tensor] = {}
        for i, (kernel, bias) in enumerate(zip(self.kernels, self.biases)):
            named[f"{self.prefix}.{i}.kernel"] = kernel
            named[f"{self.prefix}.{i}.bias"] = bias
        return named

    @classmethod
    def from_named(
        cls, prefix: str, tensors: Dict[str, Tensor], strides: Sequence[int], leaky_slope: float
    ) -> "EncoderParams":
        try:
            kernels = [tensors[f"{prefix}.{i}.kernel"] for i in range(len(strides))]
            biases = [tensors[f"{prefix}.{i}.bias"] for i in range(len(strides))]
        except KeyError as e:
            raise DimensionError(f"missing encoder tensor {e.args[0]!r}") from None
        return cls(prefix, kernels, biases, list(strides), leaky_slope)


@dataclass
class ModelParams:
    """All trainable tensors: both encoders and, with SCM, both projections."""

    condition: EncoderParams
    image: EncoderParams
    scm_condition: Optional[ScmProjection] = None
    scm_image: Optional[ScmProjection] = None

    @property
    def uses_scm(self) -> bool:
        return self.scm_condition is not None

    def named_tensors(self) -> Dict[str, Tensor]:
        """Ordered name -> array view; arrays are shared, not copied."""
        named = {**self.condition.named_tensors(), **self.image.named_tensors()}
        if self.scm_condition is not None:
            named.update(self.scm_condition.named_tensors(CONDITION_PROJECTION))
        if self.scm_image is not None:
            named.update(self.scm_image.named_tensors(IMAGE_PROJECTION))
        return named

    def copy(self) -> "ModelParams":
        return ModelParams.from_named(
            {k: v.copy() for k, v in self.named_tensors().items()},
            self.condition.strides,
            self.condition.leaky_slope,
        )

    @classmethod
    def from_named(
        cls, tensors: Dict[str, Tensor], strides: Sequence[int], leaky_slope: float
    ) -> "ModelParams":
        condition = EncoderParams.from_named(CONDITION_ENCODER, tensors, strides, leaky_slope)
        image = EncoderParams.from_named(IMAGE_ENCODER, tensors, strides, leaky_slope)
        scm_condition = scm_image = None
        if f"{CONDITION_PROJECTION}.weight" in tensors:
            scm_condition = ScmProjection.from_named(CONDITION_PROJECTION, tensors)
            scm_image = ScmProjection.from_named(IMAGE_PROJECTION, tensors)
        return cls(condition, image, scm_condition, scm_image)


def _init_encoder(prefix: str, config: ExperimentConfig, rng: np.random.Generator) -> EncoderParams:
    kernels, biases = [], []
    c_in = config.in_channels
    k = config.kernel_size
    for c_out in config.encoder_channels:
        fan_in = k * k * c_in
        bound = np.sqrt(6.0 / fan_in)
        kernels.append(rng.uniform(-bound, bound, size=(k, k, c_in, c_out)))
        biases.append(np.zeros(c_out))
        c_in = c_out
    return EncoderParams(prefix, kernels, biases, list(config.encoder_strides), config.leaky_slope)


def init_params(config: ExperimentConfig, seed: int) -> ModelParams:
    """Kaiming-style uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.

    Tensors are drawn in a fixed order from one PCG64 stream, so the same
    seed gives bit-identical parameters.
    """
    rng = make_rng(seed, purpose=0)
    condition = _init_encoder(CONDITION_ENCODER, config, rng)
    image = _init_encoder(IMAGE_ENCODER, config, rng)
    scm_condition = scm_image = None
    if config.scm:
        scm_condition = ScmProjection.initialize(config.num_positions, config.scm_dim, rng)
        scm_image = ScmProjection.initialize(config.num_positions, config.scm_dim, rng)
    params = ModelParams(condition, image, scm_condition, scm_image)
    logger.debug("initialized %d tensors from seed %d", len(params.named_tensors()), seed)
    return params


def encode(params: EncoderParams, image: Tensor, tape: Tape, epsilon: float = 1e-12) -> FeatureGrid:
    """Run the conv stack on an H x W x C_in image and L2-normalize the output rows.

    The image may also be passed as a tape node to differentiate through it.

    Raises:
        DimensionError: If the image shape does not fit the encoder
    """
    x = image if not isinstance(image, np.ndarray) else tape.constant(image)
    if x.value.ndim != 3 or x.shape[2] != params.in_channels:
        raise DimensionError(f"encoder {params.prefix!r} expects H x W x {params.in_channels}, got {x.shape}")
    if x.shape[0] % params.total_stride or x.shape[1] % params.total_stride:
        raise DimensionError(f"image {x.shape[:2]} is not divisible by the total stride {params.total_stride}")

    last = len(params.kernels) - 1
    for i, (kernel, bias, stride) in enumerate(zip(params.kernels, params.biases, params.strides)):
        k = tape.parameter(f"{params.prefix}.{i}.kernel", kernel)
        b = tape.parameter(f"{params.prefix}.{i}.bias", bias)
        x = add_channel_bias(conv2d(x, k, stride), b)
        if i < last:
            x = leaky_relu(x, params.leaky_slope)

    height, width, channels = x.shape
    rows = normalize_rows(reshape(x, (height * width, channels)), epsilon)
    return FeatureGrid(height, width, channels, rows)


@dataclass
class AdamState:
    """Adam moments and hyperparameters; moments are keyed by parameter name."""

    learning_rate: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Dict[str, Tensor] = field(default_factory=dict)
    v: Dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "AdamState":
        return cls(
            learning_rate=config.learning_rate,
            beta1=config.beta1,
            beta2=config.beta2,
            epsilon=config.adam_eps,
        )


def adam_step(state: AdamState, params: Dict[str, Tensor], grads: Dict[str, Tensor]) -> AdamState:
    """Bias-corrected Adam update, in place on ``params``.

    Every gradient is checked before any parameter moves, so a NaN leaves
    both parameters and state untouched.

    Raises:
        DimensionError: If a gradient is missing or misshaped
        DivergenceError: If any gradient is not finite
    """
    for name, value in params.items():
        g = grads.get(name)
        if g is None or g.shape != value.shape:
            raise DimensionError(f"gradient for {name!r} missing or misshaped")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name!r} at step {state.step + 1}")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step

    for name, value in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        value -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)

    return state
