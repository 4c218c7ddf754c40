"""
Dense float64 tensors with a define-by-run reverse-mode gradient tape.

Every vector and matrix of the pre-training equations (images, representations
h, projections z, weights w, parameters) is a ``Tensor``. A ``Tensor`` is an
immutable numpy array plus, when it was produced under a ``Tape``, the index
of the node that recorded it.

Broadcasting rules:
- Elementwise binary ops accept exactly matching shapes, or a 0-d operand
  against any shape (scalar-vs-tensor). Nothing else broadcasts.
- ``linear`` adds its bias row-wise and ``conv2d`` adds its bias per output
  channel; these are the only other implicit expansions.

Convolution is stride 1 with "valid" padding; use ``pad2d`` first for "same".

Gradients are first-order only. ``backward`` may be called any number of times
on one tape with different scalar outputs.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import BinaryIO, Callable, Iterable, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, logsumexp

from .exceptions import NonFiniteError, ShapeError, TapeError

Adjoint = Callable[[np.ndarray], Sequence[Union[np.ndarray, None]]]
ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]

TENSOR_MAGIC = b"MUT0"


@dataclass(frozen=True)
class Node:
    """One recorded primitive: parents are indices of earlier nodes."""

    op: str
    parents: tuple[int, ...]
    adjoint: Adjoint | None
    shape: tuple[int, ...]
    leaf_name: str | None = None


class Tape:
    """Ordered record of primitive operations for one backward sweep."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._leaves: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def leaf_names(self) -> list[str]:
        return list(self._leaves)

    def watch(self, value: ArrayLike, name: str) -> Tensor:
        """Register ``value`` as a differentiable leaf called ``name``."""
        if name in self._leaves:
            raise TapeError(f"leaf {name!r} is already watched on this tape")
        data = as_tensor(value).data
        index = self._append(Node("leaf", (), None, data.shape, leaf_name=name))
        self._leaves[name] = index
        return Tensor._wrap(data, self, index)

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1


class Tensor:
    """Immutable float64 array, optionally recorded on a tape."""

    __slots__ = ("_data", "tape", "node")

    def __init__(self, data: ArrayLike) -> None:
        arr = np.array(data.data if isinstance(data, Tensor) else data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor")
        arr.setflags(write=False)
        self._data = arr
        self.tape: Tape | None = None
        self.node: int | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, tape: Tape | None, node: int | None) -> Tensor:
        t = cls.__new__(cls)
        if arr.flags.writeable:
            arr.setflags(write=False)
        t._data = arr
        t.tape = tape
        t.node = node
        return t

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self._data.shape)

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError("item", self.shape, ())
        return float(self._data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def __repr__(self) -> str:
        where = f", node={self.node}" if self.tape is not None else ""
        return f"Tensor(shape={list(self.shape)}{where})"

    def __len__(self) -> int:
        return self.shape[0]

    def __add__(self, other: ArrayLike) -> Tensor:
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> Tensor:
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> Tensor:
        return div(self, other)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, key: object) -> Tensor:
        return take(self, key)


def as_tensor(value: ArrayLike) -> Tensor:
    """Return ``value`` unchanged if it is a Tensor, else a constant Tensor."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def stop_gradient(t: Tensor) -> Tensor:
    """Constant copy of ``t``: nothing flows back through it."""
    return Tensor._wrap(t.data, None, None)


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor._wrap(np.zeros(tuple(shape)), None, None)


def _tape_of(operands: Iterable[Tensor]) -> Tape | None:
    tape: Tape | None = None
    for t in operands:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise TapeError("operands are recorded on different tapes")
    return tape


def _record(op: str, value: np.ndarray, parents: Sequence[Tensor], adjoint: Adjoint) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(op)
    tape = _tape_of(parents)
    if tape is None:
        return Tensor._wrap(value, None, None)
    node = Node(
        op,
        tuple(-1 if p.node is None else p.node for p in parents),
        adjoint,
        value.shape,
    )
    return Tensor._wrap(value, tape, tape._append(node))


def _conform(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise ShapeError(op, a.shape, b.shape)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(np.sum(g)).reshape(shape)


# Elementwise arithmetic


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    ta, tb = as_tensor(a), as_tensor(b)
    _conform("add", ta, tb)
    return _record(
        "add",
        ta.data + tb.data,
        (ta, tb),
        lambda g: (_reduce_to(g, ta.shape), _reduce_to(g, tb.shape)),
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    ta, tb = as_tensor(a), as_tensor(b)
    _conform("sub", ta, tb)
    return _record(
        "sub",
        ta.data - tb.data,
        (ta, tb),
        lambda g: (_reduce_to(g, ta.shape), _reduce_to(-g, tb.shape)),
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    ta, tb = as_tensor(a), as_tensor(b)
    _conform("mul", ta, tb)
    return _record(
        "mul",
        ta.data * tb.data,
        (ta, tb),
        lambda g: (
            _reduce_to(g * tb.data, ta.shape) if ta.requires_grad else None,
            _reduce_to(g * ta.data, tb.shape) if tb.requires_grad else None,
        ),
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    ta, tb = as_tensor(a), as_tensor(b)
    _conform("div", ta, tb)
    out = ta.data / tb.data
    return _record(
        "div",
        out,
        (ta, tb),
        lambda g: (
            _reduce_to(g / tb.data, ta.shape) if ta.requires_grad else None,
            _reduce_to(-g * out / tb.data, tb.shape) if tb.requires_grad else None,
        ),
    )


def neg(a: ArrayLike) -> Tensor:
    ta = as_tensor(a)
    return _record("neg", -ta.data, (ta,), lambda g: (-g,))


def scale(a: ArrayLike, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    ta = as_tensor(a)
    return _record("scale", ta.data * c, (ta,), lambda g: (g * c,))


# Elementwise nonlinearities


def relu(a: ArrayLike) -> Tensor:
    ta = as_tensor(a)
    mask = ta.data > 0
    return _record("relu", np.where(mask, ta.data, 0.0), (ta,), lambda g: (g * mask,))


def leaky_relu(a: ArrayLike, slope: float = 0.01) -> Tensor:
    ta = as_tensor(a)
    factor = np.where(ta.data > 0, 1.0, slope)
    return _record("leaky_relu", ta.data * factor, (ta,), lambda g: (g * factor,))


def sigmoid(a: ArrayLike) -> Tensor:
    ta = as_tensor(a)
    out = expit(ta.data)
    return _record("sigmoid", out, (ta,), lambda g: (g * out * (1.0 - out),))


def exp(a: ArrayLike) -> Tensor:
    ta = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(ta.data)
    return _record("exp", out, (ta,), lambda g: (g * out,))


def log(a: ArrayLike) -> Tensor:
    ta = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ta.data)
    return _record("log", out, (ta,), lambda g: (g / ta.data,))


def sqrt(a: ArrayLike) -> Tensor:
    ta = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(ta.data)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        # d sqrt at 0 is taken as 0 so guarded norms of zero vectors stay finite
        return (np.divide(g * 0.5, out, out=np.zeros_like(out), where=out > 0),)

    return _record("sqrt", out, (ta,), adjoint)


def absolute(a: ArrayLike) -> Tensor:
    ta = as_tensor(a)
    return _record("abs", np.abs(ta.data), (ta,), lambda g: (g * np.sign(ta.data),))


def maximum(a: ArrayLike, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)`` against a constant floor."""
    ta = as_tensor(a)
    mask = ta.data > floor
    return _record(
        "maximum", np.where(mask, ta.data, floor), (ta,), lambda g: (g * mask,)
    )


# Reductions and shape plumbing


def reduce_sum(a: ArrayLike, axis: int | None = None) -> Tensor:
    ta = as_tensor(a)
    out = np.asarray(np.sum(ta.data, axis=axis))

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is None:
            return (np.broadcast_to(g, ta.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), ta.shape).copy(),)

    return _record("sum", out, (ta,), adjoint)


def reduce_mean(a: ArrayLike, axis: int | None = None) -> Tensor:
    ta = as_tensor(a)
    count = ta.size if axis is None else ta.shape[axis]
    return scale(reduce_sum(ta, axis=axis), 1.0 / count)


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    ta = as_tensor(a)
    try:
        out = ta.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", ta.shape, tuple(shape))
    return _record("reshape", out, (ta,), lambda g: (g.reshape(ta.shape),))


def transpose(a: ArrayLike) -> Tensor:
    ta = as_tensor(a)
    if ta.ndim != 2:
        raise ShapeError("transpose", ta.shape)
    return _record("transpose", ta.data.T.copy(), (ta,), lambda g: (g.T,))


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(p.shape for p in parts))
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def adjoint(g: np.ndarray) -> list[np.ndarray]:
        return [
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(parts))
        ]

    return _record("concat", out, parts, adjoint)


def take(a: ArrayLike, key: object) -> Tensor:
    """Basic slicing (ints and slices only); the adjoint scatters back."""
    ta = as_tensor(a)
    parts = key if isinstance(key, tuple) else (key,)
    if not all(isinstance(k, (int, np.integer, slice)) for k in parts):
        raise TypeError("take supports int and slice indices only")
    try:
        out = np.array(ta.data[key], dtype=np.float64)  # type: ignore[index]
    except IndexError:
        raise ShapeError("slice", ta.shape)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(ta.shape)
        full[key] = g  # type: ignore[index]
        return (full,)

    return _record("slice", out, (ta,), adjoint)


# Linear algebra and convolution


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    ta, tb = as_tensor(a), as_tensor(b)
    if ta.ndim != 2 or tb.ndim != 2 or ta.shape[1] != tb.shape[0]:
        raise ShapeError("matmul", ta.shape, tb.shape)
    return _record(
        "matmul",
        ta.data @ tb.data,
        (ta, tb),
        lambda g: (
            g @ tb.data.T if ta.requires_grad else None,
            ta.data.T @ g if tb.requires_grad else None,
        ),
    )


def linear(x: ArrayLike, weight: ArrayLike, bias: ArrayLike) -> Tensor:
    """``x @ weight.T + bias`` with x (B, in), weight (out, in), bias (out,)."""
    tx, tw, tb = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if (
        tx.ndim != 2
        or tw.ndim != 2
        or tb.ndim != 1
        or tx.shape[1] != tw.shape[1]
        or tw.shape[0] != tb.shape[0]
    ):
        raise ShapeError("linear", tx.shape, tw.shape, tb.shape)
    return _record(
        "linear",
        tx.data @ tw.data.T + tb.data,
        (tx, tw, tb),
        lambda g: (
            g @ tw.data if tx.requires_grad else None,
            g.T @ tx.data if tw.requires_grad else None,
            g.sum(axis=0) if tb.requires_grad else None,
        ),
    )


def pad2d(x: ArrayLike, pad: int) -> Tensor:
    """Zero-pad the last two axes of a (B, C, H, W) tensor by ``pad``."""
    tx = as_tensor(x)
    if tx.ndim != 4:
        raise ShapeError("pad2d", tx.shape)
    if pad == 0:
        return tx
    widths = ((0, 0), (0, 0), (pad, pad), (pad, pad))
    return _record(
        "pad2d",
        np.pad(tx.data, widths),
        (tx,),
        lambda g: (g[:, :, pad:-pad, pad:-pad],),
    )


def conv2d(x: ArrayLike, weight: ArrayLike, bias: ArrayLike | None = None) -> Tensor:
    """
    Stride-1 "valid" cross-correlation.

    Shapes: x (B, C, H, W), weight (O, C, kh, kw), bias (O,) or None;
    output (B, O, H - kh + 1, W - kw + 1).
    """
    tx, tw = as_tensor(x), as_tensor(weight)
    if tx.ndim != 4 or tw.ndim != 4 or tx.shape[1] != tw.shape[1]:
        raise ShapeError("conv2d", tx.shape, tw.shape)
    kh, kw = tw.shape[2], tw.shape[3]
    if tx.shape[2] < kh or tx.shape[3] < kw:
        raise ShapeError("conv2d", tx.shape, tw.shape)
    windows = sliding_window_view(tx.data, (kh, kw), axis=(2, 3))
    out = np.tensordot(windows, tw.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    parents: list[Tensor] = [tx, tw]
    tb: Tensor | None = None
    if bias is not None:
        tb = as_tensor(bias)
        if tb.shape != (tw.shape[0],):
            raise ShapeError("conv2d", tw.shape, tb.shape)
        out = out + tb.data[None, :, None, None]
        parents.append(tb)

    def adjoint(g: np.ndarray) -> list[np.ndarray | None]:
        dx = None
        if tx.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            gwin = sliding_window_view(gp, (kh, kw), axis=(2, 3))
            flipped = tw.data[:, :, ::-1, ::-1]
            dx = np.tensordot(gwin, flipped, axes=([1, 4, 5], [0, 2, 3]))
            dx = np.ascontiguousarray(dx.transpose(0, 3, 1, 2))
        dw = None
        if tw.requires_grad:
            dw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grads: list[np.ndarray | None] = [dx, dw]
        if tb is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _record("conv2d", out, parents, adjoint)


def mean_pool2d(x: ArrayLike, k: int = 2) -> Tensor:
    """k×k mean pooling with stride k; trailing rows/columns are dropped."""
    tx = as_tensor(x)
    if tx.ndim != 4 or tx.shape[2] < k or tx.shape[3] < k:
        raise ShapeError("mean_pool2d", tx.shape)
    b, c, h, w = tx.shape
    h2, w2 = h // k, w // k
    blocks = tx.data[:, :, : h2 * k, : w2 * k].reshape(b, c, h2, k, w2, k)
    out = blocks.mean(axis=(3, 5))

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(tx.shape)
        spread = np.broadcast_to(g[:, :, :, None, :, None] / (k * k), blocks.shape)
        full[:, :, : h2 * k, : w2 * k] = spread.reshape(b, c, h2 * k, w2 * k)
        return (full,)

    return _record("mean_pool2d", out, (tx,), adjoint)


def global_mean_pool(x: ArrayLike) -> Tensor:
    """(B, C, H, W) -> (B, C) by averaging over the spatial axes."""
    tx = as_tensor(x)
    if tx.ndim != 4:
        raise ShapeError("global_mean_pool", tx.shape)
    hw = tx.shape[2] * tx.shape[3]
    return _record(
        "global_mean_pool",
        tx.data.mean(axis=(2, 3)),
        (tx,),
        lambda g: (np.broadcast_to(g[:, :, None, None] / hw, tx.shape).copy(),),
    )


def logsumexp_offdiag(s: ArrayLike) -> Tensor:
    """
    Row-wise log-sum-exp of a square matrix, skipping the diagonal.

    Computed with max subtraction so large logits never overflow.
    """
    ts = as_tensor(s)
    if ts.ndim != 2 or ts.shape[0] != ts.shape[1] or ts.shape[0] < 2:
        raise ShapeError("logsumexp_offdiag", ts.shape)
    masked = ts.data.copy()
    np.fill_diagonal(masked, -np.inf)
    out = logsumexp(masked, axis=1)

    def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
        soft = np.exp(masked - out[:, None])
        return (soft * g[:, None],)

    return _record("logsumexp_offdiag", out, (ts,), adjoint)


# Reverse sweep


def backward(tape: Tape, output: Tensor) -> dict[str, Tensor]:
    """
    Gradient of a scalar ``output`` with respect to every leaf on ``tape``.

    Leaves the output does not depend on get zero gradients.
    """
    if output.tape is not tape or output.node is None:
        raise TapeError("output is not recorded on this tape")
    if output.shape != ():
        raise TapeError(f"backward needs a scalar output, got shape {list(output.shape)}")

    adjoints: dict[int, np.ndarray] = {output.node: np.ones(())}
    leaf_grads: dict[int, np.ndarray] = {}
    for index in range(output.node, -1, -1):
        g = adjoints.pop(index, None)
        if g is None:
            continue
        node = tape.nodes[index]
        if node.adjoint is None:
            leaf_grads[index] = g
            continue
        for parent, pg in zip(node.parents, node.adjoint(g)):
            if parent < 0 or pg is None:
                continue
            if parent in adjoints:
                adjoints[parent] = adjoints[parent] + pg
            else:
                adjoints[parent] = pg

    grads: dict[str, Tensor] = {}
    for name, index in tape._leaves.items():
        g = leaf_grads.get(index)
        value = np.zeros(tape.nodes[index].shape) if g is None else np.array(g)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"backward({name})")
        grads[name] = Tensor._wrap(value, None, None)
    return grads


# Serialization


def write_tensor(stream: BinaryIO, t: Tensor) -> None:
    """``MUT0`` magic, u32 rank, u64 dims, then little-endian f64 data."""
    stream.write(TENSOR_MAGIC)
    stream.write(struct.pack("<I", t.ndim))
    stream.write(struct.pack(f"<{t.ndim}Q", *t.shape))
    stream.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def read_tensor(stream: BinaryIO) -> Tensor:
    magic = stream.read(4)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    (rank,) = struct.unpack("<I", _read_exact(stream, 4))
    shape = struct.unpack(f"<{rank}Q", _read_exact(stream, 8 * rank))
    count = int(np.prod(shape, dtype=np.int64))
    raw = _read_exact(stream, 8 * count)
    return Tensor(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape))


def tensor_to_bytes(t: Tensor) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, t)
    return buf.getvalue()


def tensor_from_bytes(raw: bytes) -> Tensor:
    return read_tensor(io.BytesIO(raw))


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    raw = stream.read(n)
    if len(raw) != n:
        raise ValueError(f"truncated tensor: wanted {n} bytes, got {len(raw)}")
    return raw
