"""Binary PGM (P5) / PPM (P6) reading and writing, maxval 255.

Images in memory are float arrays of shape (H, W, C) in [0, 1] with C = 1
for PGM and C = 3 for PPM.
"""

import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from .errors import ImageFormatError
from .feature_core import Tensor

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
MAXVAL = 255
_MAGIC_CHANNELS = {b"P5": 1, b"P6": 3}


def to_bytes(image: Tensor) -> np.ndarray:
    """[0, 1] floats -> uint8 via round(v * 255), clipped."""
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * MAXVAL), 0, MAXVAL).astype(np.uint8)


def encode_pnm(image: Tensor) -> bytes:
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ImageFormatError(f"PGM/PPM needs 1 or 3 channels, got shape {image.shape}")
    height, width, channels = image.shape
    magic = b"P5" if channels == 1 else b"P6"
    header = magic + b"\n%d %d\n%d\n" % (width, height, MAXVAL)
    return header + to_bytes(image).tobytes()


def _header_tokens(data: bytes, count: int) -> Tuple[List[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ImageFormatError("truncated header")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def decode_pnm(data: bytes) -> Tensor:
    tokens, offset = _header_tokens(data, 4)
    channels = _MAGIC_CHANNELS.get(tokens[0])
    if channels is None:
        raise ImageFormatError(f"unsupported magic {tokens[0]!r}, expected P5 or P6")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError("non-integer width, height or maxval") from None
    if width < 1 or height < 1 or maxval != MAXVAL:
        raise ImageFormatError(f"need positive size and maxval {MAXVAL}, got {width}x{height} maxval {maxval}")

    expected = width * height * channels
    raster = data[offset:]
    if len(raster) != expected:
        raise ImageFormatError(f"raster has {len(raster)} bytes, expected {expected}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return pixels.astype(np.float64) / MAXVAL


def write_image(path: PathLike, image: Tensor) -> Path:
    """Write a PGM (one channel) or PPM (three channels)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pnm(image))
    logger.info("wrote image %s", path)
    return path


def read_image(path: PathLike) -> Tensor:
    return decode_pnm(Path(path).read_bytes())


def write_heatmap(path: PathLike, values: Tensor, low: float = -1.0, high: float = 1.0) -> Path:
    """Map ``[low, high]`` linearly onto gray levels and write a PGM."""
    values = np.asarray(values, dtype=np.float64)
    scaled = (np.clip(values, low, high) - low) / (high - low)
    return write_image(path, scaled[:, :, None])
