"""Synthetic image pairs with exactly known cell-level correspondence.

Every image is a grid of ``cell_size`` x ``cell_size`` pixel cells, one cell
per feature-grid position. The condition is a colour-coded label map (the
analogue of a segmentation map), the ground truth renders each label with a
fixed appearance transform plus texture, and the exemplar is the ground
truth with whole cells moved by a known permutation and photometrically
jittered.

Tasks:
    mosaic: every cell has its own label, so matching is unique.
    shapes: a few rectangular label regions with an intensity ramp; cells
        on the same ramp level look alike and only layout tells them apart.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import ExperimentConfig, TASK_ALIASES, TASKS
from .errors import ConfigError, DimensionError
from .feature_core import Tensor, make_rng

# purpose keys for make_rng
LAYOUT_STREAM = 1
JITTER_STREAM = 2
PSEUDO_STREAM = 3
PSEUDO_LAYOUT_STREAM = 4

# rows sum to 1 so mixed codes stay inside [0.1, 0.9]
APPEARANCE_MIX = np.array(
    [
        [0.1, 0.2, 0.7],
        [0.6, 0.3, 0.1],
        [0.2, 0.7, 0.1],
    ]
)
TEXTURE_AMPLITUDE = 0.06
TEXTURE_PATTERNS = 4


@dataclass(frozen=True)
class SyntheticPair:
    """Condition, ground truth and exemplar images, all H x W x C in [0, 1].

    ``true_permutation[i]`` is the exemplar cell holding the content of
    ground-truth cell ``i``.
    """

    condition: Tensor
    ground_truth: Tensor
    exemplar: Tensor
    true_permutation: Tensor
    cell_size: int
    task: str

    @property
    def grid_size(self) -> int:
        return self.condition.shape[0] // self.cell_size

    @property
    def n(self) -> int:
        return self.grid_size * self.grid_size


def to_blocks(image: Tensor, cell: int) -> Tensor:
    """(H, W, C) -> (N, cell * cell * C), cells in row-major grid order."""
    height, width, channels = image.shape
    if height % cell or width % cell:
        raise DimensionError(f"image {height}x{width} is not divisible into {cell}x{cell} cells")
    gh, gw = height // cell, width // cell
    blocks = image.reshape(gh, cell, gw, cell, channels).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(gh * gw, cell * cell * channels)


def from_blocks(blocks: Tensor, grid: int, cell: int, channels: int) -> Tensor:
    """Inverse of :func:`to_blocks` for a square ``grid`` x ``grid`` layout."""
    tiles = blocks.reshape(grid, grid, cell, cell, channels).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(grid * cell, grid * cell, channels)


def block_means(image: Tensor, cell: int) -> Tensor:
    """Mean colour of each cell: (N, C)."""
    channels = image.shape[2]
    return to_blocks(image, cell).reshape(-1, cell * cell, channels).mean(axis=1)


def nearest_upsample(grid_image: Tensor, cell: int) -> Tensor:
    """(h, w, C) -> (h * cell, w * cell, C) by repeating every value."""
    return np.repeat(np.repeat(grid_image, cell, axis=0), cell, axis=1)


def rearrange_cells(image: Tensor, permutation: Tensor, cell: int) -> Tensor:
    """Move cell ``i`` of ``image`` to cell ``permutation[i]``."""
    blocks = to_blocks(image, cell)
    moved = np.empty_like(blocks)
    moved[permutation] = blocks
    return from_blocks(moved, image.shape[0] // cell, cell, image.shape[2])


def photometric_jitter(image: Tensor, rng: np.random.Generator, gain: float = 0.2, noise: float = 0.02) -> Tensor:
    """Per-channel gain in [1 - gain, 1 + gain] plus Gaussian noise, clipped to [0, 1]."""
    gains = rng.uniform(1.0 - gain, 1.0 + gain, size=image.shape[-1])
    noisy = image * gains + rng.normal(0.0, noise, size=image.shape)
    return np.clip(noisy, 0.0, 1.0)


def _label_codes(count: int, channels: int, rng: np.random.Generator) -> Tensor:
    """``count`` distinct colours drawn from a regular lattice in [0.1, 0.9]^C."""
    levels = math.ceil(count ** (1.0 / channels) - 1e-9) + 1
    chosen = rng.choice(levels**channels, size=count, replace=False)
    digits = np.stack([(chosen // levels**c) % levels for c in range(channels)], axis=1)
    return 0.1 + 0.8 * digits / (levels - 1)


def _appearance(codes: Tensor) -> Tensor:
    if codes.shape[1] == APPEARANCE_MIX.shape[0]:
        return codes @ APPEARANCE_MIX.T
    return 1.0 - codes


def _texture_bank(cell: int) -> Tensor:
    rows, cols = np.indices((cell, cell))
    flat = np.zeros((cell, cell))
    horizontal = np.where(rows % 2 == 0, 1.0, -1.0)
    vertical = np.where(cols % 2 == 0, 1.0, -1.0)
    checker = np.where((rows + cols) % 2 == 0, 1.0, -1.0)
    return TEXTURE_AMPLITUDE * np.stack([flat, horizontal, vertical, checker])


def _paint(colors: Tensor, patterns: Tensor, grid: int, cell: int) -> Tensor:
    """Cells of flat ``colors`` (N, C) plus per-cell texture ``patterns`` (N, cell, cell)."""
    channels = colors.shape[1]
    blocks = colors[:, None, None, :] + patterns[:, :, :, None]
    return from_blocks(blocks.reshape(grid * grid, -1), grid, cell, channels)


def _mosaic_layout(grid: int, channels: int, rng: np.random.Generator):
    n = grid * grid
    labels = np.arange(n)
    codes = _label_codes(n, channels, rng)
    brightness = np.ones(n)
    return labels, codes, brightness


def _shapes_layout(grid: int, channels: int, shape_count: int, rng: np.random.Generator):
    labels = np.zeros((grid, grid), dtype=np.int64)
    max_side = max(2, grid // 2)
    for label in range(1, shape_count + 1):
        h = int(rng.integers(2, max_side + 1))
        w = int(rng.integers(2, max_side + 1))
        top = int(rng.integers(0, grid - h + 1))
        left = int(rng.integers(0, grid - w + 1))
        labels[top : top + h, left : left + w] = label

    brightness = np.ones((grid, grid))
    rows, cols = np.indices((grid, grid))
    for label in np.unique(labels):
        mask = labels == label
        r, c = rows[mask], cols[mask]
        ramp = (r - r.min()) + (c - c.min())
        ramp = ramp / max(1, ramp.max())
        if label % 2:
            ramp = 1.0 - ramp
        brightness[mask] = 0.55 + 0.45 * ramp

    codes = _label_codes(shape_count + 1, channels, rng)
    return labels.ravel(), codes, brightness.ravel()


def generate_pair(
    seed: int,
    task: str = "mosaic",
    size: int = 64,
    cell_size: int = 4,
    channels: int = 3,
    permute: bool = True,
    jitter: bool = True,
    jitter_gain: float = 0.2,
    jitter_noise: float = 0.02,
    shape_count: int = 5,
) -> SyntheticPair:
    """Build one deterministic (condition, ground truth, exemplar) triple.

    Args:
        seed: Determines layout, label colours, permutation and jitter
        task: ``mosaic`` or ``shapes`` (``gradient-shapes`` accepted)
        size: Image side in pixels, divisible by ``cell_size``
        cell_size: Pixels per feature-grid cell side (the encoder stride)
        channels: Image channels
        permute: False gives the identity permutation
        jitter: False leaves the exemplar an exact rearrangement

    Raises:
        ConfigError: On unknown task
        DimensionError: If ``size`` is not divisible by ``cell_size``
    """
    task = TASK_ALIASES.get(task, task)
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    if size < cell_size or size % cell_size:
        raise DimensionError(f"image size {size} is not divisible by cell size {cell_size}")

    grid = size // cell_size
    n = grid * grid
    rng = make_rng(seed, LAYOUT_STREAM)

    if task == "mosaic":
        labels, codes, brightness = _mosaic_layout(grid, channels, rng)
    else:
        labels, codes, brightness = _shapes_layout(grid, channels, shape_count, rng)

    bank = _texture_bank(cell_size)
    patterns = bank[labels % TEXTURE_PATTERNS]
    condition = _paint(codes[labels], np.zeros_like(patterns), grid, cell_size)
    appearance = _appearance(codes)[labels] * brightness[:, None]
    ground_truth = np.clip(_paint(appearance, patterns, grid, cell_size), 0.0, 1.0)

    permutation = rng.permutation(n) if permute else np.arange(n)
    exemplar = rearrange_cells(ground_truth, permutation, cell_size)
    if jitter:
        exemplar = photometric_jitter(exemplar, make_rng(seed, JITTER_STREAM), jitter_gain, jitter_noise)

    return SyntheticPair(condition, ground_truth, exemplar, permutation, cell_size, task)


def pair_from_config(config: ExperimentConfig, seed: int) -> SyntheticPair:
    return generate_pair(
        seed,
        task=config.task,
        size=config.image_size,
        cell_size=config.total_stride,
        channels=config.in_channels,
        permute=config.permute,
        jitter=config.jitter,
        jitter_gain=config.jitter_gain,
        jitter_noise=config.jitter_noise,
        shape_count=config.shape_count,
    )


@dataclass(frozen=True)
class PseudoExemplar:
    """Augmented ground truth Y' standing in as an exemplar.

    ``order[i]`` is the cell of ``image`` holding ground-truth cell ``i``
    (the identity unless the cells were rearranged).
    """

    image: Tensor
    order: Tensor


def pseudo_exemplar(pair: SyntheticPair, seed: int, config: Optional[ExperimentConfig] = None) -> PseudoExemplar:
    """Y' for the pseudo pair loss: ground truth with cells rearranged and jittered.

    With ``config`` given, ``pseudo_permute`` and ``jitter`` switch the two
    augmentations; without it both are applied with the default jitter.
    """
    permute = config.pseudo_permute if config is not None else True
    jitter = config.jitter if config is not None else True

    image = pair.ground_truth.copy()
    order = np.arange(pair.n)
    if permute:
        order = make_rng(seed, PSEUDO_LAYOUT_STREAM).permutation(pair.n)
        image = rearrange_cells(image, order, pair.cell_size)
    if jitter:
        gain = config.jitter_gain if config else 0.2
        noise = config.jitter_noise if config else 0.02
        image = photometric_jitter(image, make_rng(seed, PSEUDO_STREAM), gain, noise)
    return PseudoExemplar(image, order)
