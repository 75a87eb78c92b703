"""Dense tensors, a reverse-mode tape and the primitive differentiable ops.

Every operation takes and returns :class:`Var` nodes bound to one
:class:`Tape`. An op computes its value with numpy and, when any input needs
a gradient, records a vector-Jacobian product closure. ``Tape.backward``
replays the records in exact reverse order.

Example:
    >>> tape = Tape()
    >>> x = tape.parameter("x", np.array([1.0, 2.0, 3.0]))
    >>> loss = sum_all(mul(x, x))
    >>> tape.backward(loss)["x"]
    array([2., 4., 6.])
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import logsumexp, softmax

from .errors import ConfigError, DimensionError, UsageError

Tensor = np.ndarray

ARCCOS_DELTA = 1e-7
DEFAULT_EPS = 1e-12

VJP = Callable[[Tensor], Sequence[Optional[Tensor]]]


def make_rng(seed: int, purpose: int = 0) -> np.random.Generator:
    """PCG64 stream for ``seed``; ``purpose`` keys independent child streams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(purpose)])))


class Var:
    """A node on a tape: a float64 value and, optionally, a parameter name."""

    __slots__ = ("value", "tape", "index", "requires_grad", "name")

    def __init__(self, value: Tensor, tape: "Tape", index: int, requires_grad: bool, name: Optional[str] = None):
        self.value = value
        self.tape = tape
        self.index = index
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __add__(self, other: "Var") -> "Var":
        return add(self, other)

    def __sub__(self, other: "Var") -> "Var":
        return sub(self, other)

    def __neg__(self) -> "Var":
        return scale(self, -1.0)

    @property
    def T(self) -> "Var":
        return transpose(self)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class _Record:
    out_index: int
    inputs: Tuple[Var, ...]
    vjp: VJP


class Tape:
    """Ordered record of primitive ops plus per-parameter gradient accumulators.

    A tape is single-writer: build one per training step and never share it
    across threads. ``Tape(record=False)`` evaluates without recording, for
    inference.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._records: List[_Record] = []
        self._params: Dict[str, Var] = {}
        self._next_index = 0
        self.grads: Dict[str, Tensor] = {}

    def __len__(self) -> int:
        return len(self._records)

    def _new_var(self, value: Tensor, requires_grad: bool, name: Optional[str] = None) -> Var:
        var = Var(value, self, self._next_index, requires_grad, name)
        self._next_index += 1
        return var

    def parameter(self, name: str, value: Tensor) -> Var:
        """Register a named leaf that receives gradients.

        Registering the same name again returns the existing node, so a
        shared encoder used on several images accumulates into one gradient.
        """
        existing = self._params.get(name)
        if existing is not None:
            return existing
        var = self._new_var(np.asarray(value, dtype=np.float64), requires_grad=self.record, name=name)
        self._params[name] = var
        return var

    def constant(self, value: Union[Tensor, float]) -> Var:
        return self._new_var(np.asarray(value, dtype=np.float64), requires_grad=False)

    @property
    def parameters(self) -> Dict[str, Var]:
        return dict(self._params)

    def emit(self, value: Tensor, inputs: Sequence[Var], vjp: VJP) -> Var:
        """Create the output node of an op and record its VJP if needed."""
        for var in inputs:
            if var.tape is not self:
                raise UsageError("cannot combine nodes from different tapes")
        needs_grad = self.record and any(var.requires_grad for var in inputs)
        out = self._new_var(value, requires_grad=needs_grad)
        if needs_grad:
            self._records.append(_Record(out.index, tuple(inputs), vjp))
        return out

    def zero_grad(self) -> None:
        self.grads = {name: np.zeros_like(var.value) for name, var in self._params.items()}

    def backward(self, loss: Var) -> Dict[str, Tensor]:
        """Accumulate d(loss)/d(parameter) into ``self.grads``.

        Calling backward twice without ``zero_grad`` adds the gradients twice.

        Raises:
            UsageError: If ``loss`` is not a scalar of this tape
        """
        if loss.tape is not self:
            raise UsageError("loss was produced on a different tape")
        if loss.value.size != 1:
            raise UsageError(f"backward needs a scalar seed, got shape {loss.value.shape}")
        if not self.record:
            raise UsageError("backward on a tape created with record=False")

        adjoints: Dict[int, Tensor] = {loss.index: np.ones_like(loss.value)}
        for rec in reversed(self._records):
            g = adjoints.pop(rec.out_index, None)
            if g is None:
                continue
            for var, gi in zip(rec.inputs, rec.vjp(g)):
                if gi is None or not var.requires_grad:
                    continue
                prev = adjoints.get(var.index)
                adjoints[var.index] = gi if prev is None else prev + gi

        for name, var in self._params.items():
            g = adjoints.get(var.index)
            if g is None:
                g = np.zeros_like(var.value)
            acc = self.grads.get(name)
            self.grads[name] = g.copy() if acc is None else acc + g
        return dict(self.grads)


def backward(tape: Tape, loss: Var) -> Dict[str, Tensor]:
    return tape.backward(loss)


def _unbroadcast(g: Tensor, shape: Tuple[int, ...]) -> Tensor:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# Elementwise and linear ops


def add(a: Var, b: Var) -> Var:
    value = a.value + b.value
    return a.tape.emit(value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Var, b: Var) -> Var:
    value = a.value - b.value
    return a.tape.emit(value, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Var, b: Var) -> Var:
    value = a.value * b.value
    return a.tape.emit(
        value, (a, b), lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape))
    )


def scale(a: Var, factor: float) -> Var:
    return a.tape.emit(a.value * factor, (a,), lambda g: (g * factor,))


def add_scalar(a: Var, c: float) -> Var:
    return a.tape.emit(a.value + c, (a,), lambda g: (g,))


def absolute(a: Var) -> Var:
    return a.tape.emit(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def sum_all(a: Var) -> Var:
    return a.tape.emit(np.asarray(a.value.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))


def l1_distance(a: Var, b: Var) -> Var:
    """Element-wise absolute sum ``||a - b||_1``."""
    if a.shape != b.shape:
        raise DimensionError(f"L1 operands differ in shape: {a.shape} vs {b.shape}")
    return sum_all(absolute(sub(a, b)))


def matmul(a: Var, b: Var) -> Var:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a.tape.emit(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def transpose(a: Var) -> Var:
    return a.tape.emit(a.value.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Var, shape: Tuple[int, ...]) -> Var:
    return a.tape.emit(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take_rows(a: Var, index: Tensor) -> Var:
    """Rows ``a[index[i]]``; repeated indices accumulate gradient."""
    index = np.asarray(index, dtype=np.int64)
    if a.value.ndim != 2 or index.ndim != 1:
        raise DimensionError(f"take_rows expects an N x C matrix and a 1-d index, got {a.shape} and {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise DimensionError(f"row index out of range for {a.shape[0]} rows")

    def vjp(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return a.tape.emit(a.value[index], (a,), vjp)


def add_row_bias(m: Var, bias: Var) -> Var:
    """Add a length-C bias vector to every row of an N x C matrix."""
    if m.value.ndim != 2 or bias.shape != (m.shape[1],):
        raise DimensionError(f"bias of shape {bias.shape} does not fit rows of {m.shape}")
    return m.tape.emit(m.value + bias.value, (m, bias), lambda g: (g, g.sum(axis=0)))


def concat_columns(a: Var, b: Var) -> Var:
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"cannot concatenate {a.shape[0]} rows with {b.shape[0]} rows")
    split = a.shape[1]
    return a.tape.emit(
        np.concatenate([a.value, b.value], axis=1), (a, b), lambda g: (g[:, :split], g[:, split:])
    )


def leaky_relu(a: Var, slope: float) -> Var:
    factor = np.where(a.value > 0, 1.0, slope)
    return a.tape.emit(a.value * factor, (a,), lambda g: (g * factor,))


def clamp_max(a: Var, limit: float) -> Var:
    mask = a.value < limit
    return a.tape.emit(np.minimum(a.value, limit), (a,), lambda g: (g * mask,))


def cos(a: Var) -> Var:
    return a.tape.emit(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def diagonal(m: Var) -> Var:
    if m.value.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"diagonal needs a square matrix, got {m.shape}")

    def vjp(g):
        out = np.zeros(m.shape)
        np.fill_diagonal(out, g)
        return (out,)

    return m.tape.emit(np.diagonal(m.value).copy(), (m,), vjp)


def replace_diagonal(m: Var, d: Var) -> Var:
    """Copy of ``m`` whose diagonal is taken from the vector ``d``."""
    if m.value.ndim != 2 or m.shape[0] != m.shape[1] or d.shape != (m.shape[0],):
        raise DimensionError(f"cannot place a {d.shape} diagonal into {m.shape}")
    value = m.value.copy()
    np.fill_diagonal(value, d.value)

    def vjp(g):
        gm = g.copy()
        np.fill_diagonal(gm, 0.0)
        return gm, np.diagonal(g).copy()

    return m.tape.emit(value, (m, d), vjp)


# Numerically sensitive primitives


def stable_arccos(x: Union[float, Tensor]) -> Union[float, Tensor]:
    """arccos with the input clamped to [-1 + delta, 1 - delta], delta = 1e-7."""
    clamped = np.clip(x, -1.0 + ARCCOS_DELTA, 1.0 - ARCCOS_DELTA)
    out = np.arccos(clamped)
    return float(out) if np.ndim(out) == 0 else out


def arccos(a: Var) -> Var:
    """Differentiable :func:`stable_arccos`.

    The derivative -1/sqrt(1 - x^2) is evaluated at the clamped input, so its
    magnitude stays below ~2.2e3.
    """
    clamped = np.clip(a.value, -1.0 + ARCCOS_DELTA, 1.0 - ARCCOS_DELTA)
    deriv = -1.0 / np.sqrt(1.0 - clamped * clamped)
    return a.tape.emit(np.arccos(clamped), (a,), lambda g: (g * deriv,))


def normalize_rows(a: Var, epsilon: float = DEFAULT_EPS) -> Var:
    """Each row r becomes r / max(||r||_2, epsilon); zero rows stay zero."""
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    norms = np.sqrt(np.einsum("ij,ij->i", a.value, a.value))
    denom = np.maximum(norms, epsilon)[:, None]
    out = a.value / denom
    clipped = (norms <= epsilon)[:, None]

    def vjp(g):
        radial = np.einsum("ij,ij->i", out, g)[:, None]
        # below the floor the map is linear: r / epsilon
        return (np.where(clipped, g, g - out * radial) / denom,)

    return a.tape.emit(out, (a,), vjp)


def softmax_rows(m: Var, sharpness: float = 1.0) -> Var:
    """Row-wise softmax of ``sharpness * m`` with max subtraction."""
    if sharpness <= 0:
        raise ConfigError(f"sharpness must be positive, got {sharpness}")
    y = softmax(sharpness * m.value, axis=1)

    def vjp(g):
        inner = np.einsum("ij,ij->i", g, y)[:, None]
        return (sharpness * y * (g - inner),)

    return m.tape.emit(y, (m,), vjp)


def row_logsumexp(m: Var) -> Var:
    value = logsumexp(m.value, axis=1)
    weights = softmax(m.value, axis=1)
    return m.tape.emit(value, (m,), lambda g: (weights * g[:, None],))


def gram(x: Var) -> Var:
    """``x @ x.T`` computed once on the upper triangle and mirrored."""
    upper = np.triu(x.value @ x.value.T)
    value = upper + np.triu(upper, 1).T
    return x.tape.emit(value, (x,), lambda g: ((g + g.T) @ x.value,))


# Convolution


def _pad(image: Tensor, pad: int) -> Tensor:
    return np.pad(image, ((pad, pad), (pad, pad), (0, 0)))


def conv2d(image: Var, kernel: Var, stride: int) -> Var:
    """Zero-padded ('same') strided convolution of an H x W x C_in image.

    ``kernel`` has shape (k, k, C_in, C_out) with odd k. The output is
    ceil(H / stride) x ceil(W / stride) x C_out.
    """
    if image.value.ndim != 3 or kernel.value.ndim != 4:
        raise DimensionError(f"conv2d expects HxWxC and kxkxCinxCout, got {image.shape} and {kernel.shape}")
    k, k2, c_in, c_out = kernel.shape
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"kernel must be square with odd side, got {kernel.shape[:2]}")
    if image.shape[2] != c_in:
        raise DimensionError(f"image has {image.shape[2]} channels, kernel expects {c_in}")

    height, width, _ = image.shape
    pad = k // 2
    padded = _pad(image.value, pad)
    # (Ho, Wo, C, k, k) -> (Ho, Wo, k, k, C)
    windows = sliding_window_view(padded, (k, k), axis=(0, 1))[::stride, ::stride]
    out_h, out_w = windows.shape[:2]
    cols = windows.transpose(0, 1, 3, 4, 2).reshape(out_h * out_w, k * k * c_in)
    flat_kernel = kernel.value.reshape(k * k * c_in, c_out)
    value = (cols @ flat_kernel).reshape(out_h, out_w, c_out)

    def vjp(g):
        g2 = g.reshape(out_h * out_w, c_out)
        g_kernel = (cols.T @ g2).reshape(kernel.shape)
        g_cols = (g2 @ flat_kernel.T).reshape(out_h, out_w, k, k, c_in)
        g_padded = np.zeros(padded.shape)
        for di in range(k):
            for dj in range(k):
                g_padded[di : di + stride * out_h : stride, dj : dj + stride * out_w : stride, :] += g_cols[
                    :, :, di, dj, :
                ]
        g_image = g_padded[pad : pad + height, pad : pad + width, :]
        return g_image, g_kernel

    return image.tape.emit(value, (image, kernel), vjp)


def add_channel_bias(image: Var, bias: Var) -> Var:
    if bias.shape != (image.shape[-1],):
        raise DimensionError(f"bias of shape {bias.shape} does not fit {image.shape[-1]} channels")
    return image.tape.emit(image.value + bias.value, (image, bias), lambda g: (g, g.sum(axis=(0, 1))))


# Feature grids


@dataclass(frozen=True)
class FeatureGrid:
    """N = height * width feature vectors of dimension ``channels``.

    ``tensor`` is an (N, channels) node, rows in row-major grid order.
    """

    height: int
    width: int
    channels: int
    tensor: Var

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise DimensionError(f"grid dims must be positive, got {self.height}x{self.width}x{self.channels}")
        if self.tensor.shape != (self.height * self.width, self.channels):
            raise DimensionError(
                f"tensor of shape {self.tensor.shape} does not match grid "
                f"{self.height}x{self.width}x{self.channels}"
            )

    @property
    def n(self) -> int:
        return self.height * self.width

    @property
    def values(self) -> Tensor:
        return self.tensor.value

    @property
    def tape(self) -> Tape:
        return self.tensor.tape

    @classmethod
    def from_array(
        cls,
        tape: Tape,
        array: Tensor,
        height: Optional[int] = None,
        width: Optional[int] = None,
        name: Optional[str] = None,
    ) -> "FeatureGrid":
        """Wrap an (H, W, C) or (N, C) array; named arrays become parameters."""
        array = np.asarray(array, dtype=np.float64)
        if array.ndim == 3:
            height, width = array.shape[:2]
            array = array.reshape(height * width, array.shape[2])
        elif array.ndim != 2:
            raise DimensionError(f"expected an (H, W, C) or (N, C) array, got shape {array.shape}")
        if height is None or width is None:
            height, width = array.shape[0], 1
        var = tape.parameter(name, array) if name else tape.constant(array)
        return cls(height, width, array.shape[1], var)

    def with_tensor(self, tensor: Var) -> "FeatureGrid":
        return FeatureGrid(self.height, self.width, tensor.shape[1], tensor)


def l2_normalize_rows(grid: FeatureGrid, epsilon: float = DEFAULT_EPS) -> FeatureGrid:
    return grid.with_tensor(normalize_rows(grid.tensor, epsilon))


def cosine_similarity_matrix(a: FeatureGrid, b: FeatureGrid) -> Var:
    """Entry (i, j) = a_i . b_j for row-normalized grids."""
    if a.channels != b.channels:
        raise DimensionError(f"channel mismatch: {a.channels} vs {b.channels}")
    return matmul(a.tensor, transpose(b.tensor))


def require_same_shape(a: FeatureGrid, b: FeatureGrid) -> None:
    if a.n != b.n or a.channels != b.channels:
        raise DimensionError(f"grids differ in shape: {a.n}x{a.channels} vs {b.n}x{b.channels}")
