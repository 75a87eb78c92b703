"""Little-endian binary checkpoint of named float64 tensors.

Layout::

    b"MCLN"                      magic
    u32                          format version
    u32                          tensor count
    per tensor, in insertion order:
        u32 name length, UTF-8 name bytes
        u32 rank, u32 dims[rank]
        f64 values[prod(dims)]   row-major
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from .errors import CheckpointFormatError
from .feature_core import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"MCLN"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")


def dumps(tensors: Mapping[str, Tensor]) -> bytes:
    parts = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(tensors))]
    for name, value in tensors.items():
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(value, dtype="<f8")
        parts.append(_U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U32.pack(array.ndim))
        parts.extend(_U32.pack(d) for d in array.shape)
        parts.append(array.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.pos + size
        if end > len(self.data):
            raise CheckpointFormatError(f"truncated checkpoint while reading {what} at byte {self.pos}")
        chunk = self.data[self.pos : end]
        self.pos = end
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def loads(data: bytes) -> Dict[str, Tensor]:
    """Parse checkpoint bytes.

    Raises:
        CheckpointFormatError: On bad magic, unknown version, truncation,
            duplicate names or trailing bytes
    """
    reader = _Reader(data)
    if reader.take(4, "magic") != MAGIC:
        raise CheckpointFormatError("not a checkpoint: bad magic")
    version = reader.u32("version")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")

    tensors: Dict[str, Tensor] = {}
    for _ in range(reader.u32("tensor count")):
        raw_name = reader.take(reader.u32("name length"), "name")
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError("tensor name is not valid UTF-8") from None
        if name in tensors:
            raise CheckpointFormatError(f"duplicate tensor {name!r}")
        rank = reader.u32(f"{name} rank")
        dims = tuple(reader.u32(f"{name} dims") for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(reader.take(8 * count, f"{name} values"), dtype="<f8")
        tensors[name] = values.astype(np.float64).reshape(dims)

    if reader.pos != len(data):
        raise CheckpointFormatError(f"{len(data) - reader.pos} trailing bytes after last tensor")
    return tensors


def save_checkpoint(path: Union[str, Path], tensors: Mapping[str, Tensor]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(tensors))
    logger.info("wrote checkpoint %s (%d tensors)", path, len(tensors))
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, Tensor]:
    return loads(Path(path).read_bytes())
