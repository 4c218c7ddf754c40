"""
Encoder f, projection head g and the pair-weighting network.

Parameters are immutable ``ParamSet`` snapshots of named constant tensors.
To differentiate, bind a snapshot to a tape with ``params.on(tape)``; the
returned copy holds leaf tensors whose names match the snapshot's keys, so
``backward`` results can be turned straight back into a ``ParamSet``.

Parameter names:

- ``encoder.conv{i}.weight`` / ``.bias``: 3x3 conv layers ("same" padding,
  relu, 2x2 mean-pool after each) over per-image standardized pixels
- ``encoder.fc.weight`` / ``.bias``: global-pooled features -> D
- ``projection.fc0`` / ``projection.fc1``: D -> D -> d, leaky relu between
- ``cmw.fc0`` / ``cmw.fc1``: [h1 + h2 ; |h1 - h2|] (2D) -> hidden -> 1, sigmoid
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Mapping, TypeVar

import numpy as np

from .exceptions import ConfigError, ShapeError
from .rng import Rng
from .tensor import (
    ArrayLike,
    Tape,
    Tensor,
    absolute,
    as_tensor,
    concat,
    conv2d,
    global_mean_pool,
    leaky_relu,
    linear,
    mean_pool2d,
    pad2d,
    relu,
    reshape,
    sigmoid,
    stop_gradient,
)

P = TypeVar("P", bound="ParamSet")

STANDARDIZE_EPS = 1e-6


@dataclass(frozen=True)
class ArchConfig:
    conv_channels: tuple[int, ...] = (8, 16, 32)
    kernel_size: int = 3
    repr_dim: int = 64
    proj_dim: int = 32
    cmw_hidden: int = 100
    in_channels: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if not self.conv_channels or any(c < 1 for c in self.conv_channels):
            raise ConfigError(f"conv_channels must be positive, got {self.conv_channels}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        for name in ("repr_dim", "proj_dim", "cmw_hidden", "in_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def min_image_size(self) -> int:
        """Smallest side the conv/pool stack accepts (two pixels after the last pool)."""
        return 2 ** (len(self.conv_channels) + 1)

    def to_dict(self) -> dict[str, object]:
        return {
            "conv_channels": list(self.conv_channels),
            "kernel_size": self.kernel_size,
            "repr_dim": self.repr_dim,
            "proj_dim": self.proj_dim,
            "cmw_hidden": self.cmw_hidden,
            "in_channels": self.in_channels,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> ArchConfig:
        try:
            return cls(
                conv_channels=tuple(int(c) for c in raw["conv_channels"]),
                kernel_size=int(raw["kernel_size"]),
                repr_dim=int(raw["repr_dim"]),
                proj_dim=int(raw["proj_dim"]),
                cmw_hidden=int(raw["cmw_hidden"]),
                in_channels=int(raw.get("in_channels", 1)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid architecture config: {e}") from e


class ParamSet:
    """Ordered, immutable mapping of parameter names to tensors."""

    def __init__(self, tensors: Mapping[str, ArrayLike]) -> None:
        self._tensors: dict[str, Tensor] = {n: as_tensor(t) for n, t in tensors.items()}

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __contains__(self, name: object) -> bool:
        return name in self._tensors

    def __repr__(self) -> str:
        return f"{type(self).__name__}({len(self)} tensors, {self.num_values} values)"

    @property
    def names(self) -> list[str]:
        return list(self._tensors)

    @property
    def num_values(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def on(self: P, tape: Tape) -> P:
        """Copy whose tensors are leaves of ``tape``."""
        return type(self)({n: tape.watch(t, n) for n, t in self._tensors.items()})

    def constant(self: P) -> P:
        return type(self)({n: stop_gradient(t) for n, t in self._tensors.items()})

    def grads_from(self: P, grads: Mapping[str, Tensor]) -> P:
        """This set's slice of a ``backward`` result, in this set's order."""
        return type(self)({n: grads[n] for n in self._tensors})

    def map(self: P, fn: Callable[[np.ndarray], np.ndarray]) -> P:
        return type(self)({n: Tensor(fn(t.data)) for n, t in self._tensors.items()})

    def combine(self: P, other: ParamSet, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> P:
        self._check_same_layout(other)
        return type(self)({n: Tensor(fn(t.data, other[n].data)) for n, t in self._tensors.items()})

    def axpy(self: P, alpha: float, other: ParamSet) -> P:
        """``self + alpha * other``."""
        return self.combine(other, lambda a, b: a + alpha * b)

    def scale(self: P, c: float) -> P:
        return self.map(lambda a: a * c)

    def dot(self, other: ParamSet) -> float:
        """Full-parameter inner product."""
        self._check_same_layout(other)
        return float(sum(np.vdot(t.data, other[n].data) for n, t in self._tensors.items()))

    def zeros_like(self: P) -> P:
        return self.map(np.zeros_like)

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self._tensors.values()])

    def equals(self, other: ParamSet) -> bool:
        """Bit-level equality of names, shapes and values."""
        if self.names != other.names:
            return False
        return all(np.array_equal(t.data, other[n].data) for n, t in self._tensors.items())

    def _check_same_layout(self, other: ParamSet) -> None:
        if self.names != other.names:
            raise ShapeError(f"{type(self).__name__} layout", (len(self),), (len(other),))


class ModelParams(ParamSet):
    """Encoder and projection head parameters (Θ_m)."""

    @property
    def n_conv(self) -> int:
        return sum(1 for n in self if n.startswith("encoder.conv") and n.endswith(".weight"))

    @property
    def repr_dim(self) -> int:
        return self["encoder.fc.weight"].shape[0]


class WeightNetParams(ParamSet):
    """Pair-weighting network parameters (Θ_c)."""

    @property
    def repr_dim(self) -> int:
        return self["cmw.fc0.weight"].shape[1] // 2


# Initialization


def _he(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(shape, std=math.sqrt(2.0 / fan_in))


def init_params(arch: ArchConfig, rng: Rng) -> tuple[ModelParams, WeightNetParams]:
    """
    He-normal weights, zero biases, zero final weighting layer.

    Θ_m draws from ``rng.child(0)`` and Θ_c from ``rng.child(1)``, so the
    model initialization does not depend on the weighting-net width.
    """
    model_rng, cmw_rng = rng.child(0), rng.child(1)
    k = arch.kernel_size
    tensors: dict[str, np.ndarray] = {}
    channels_in = arch.in_channels
    for i, channels_out in enumerate(arch.conv_channels):
        fan_in = channels_in * k * k
        tensors[f"encoder.conv{i}.weight"] = _he(model_rng, (channels_out, channels_in, k, k), fan_in)
        tensors[f"encoder.conv{i}.bias"] = np.zeros(channels_out)
        channels_in = channels_out
    d, p = arch.repr_dim, arch.proj_dim
    tensors["encoder.fc.weight"] = _he(model_rng, (d, channels_in), channels_in)
    tensors["encoder.fc.bias"] = np.zeros(d)
    tensors["projection.fc0.weight"] = _he(model_rng, (d, d), d)
    tensors["projection.fc0.bias"] = np.zeros(d)
    tensors["projection.fc1.weight"] = _he(model_rng, (p, d), d)
    tensors["projection.fc1.bias"] = np.zeros(p)

    hidden = arch.cmw_hidden
    theta_c = WeightNetParams(
        {
            "cmw.fc0.weight": _he(cmw_rng, (hidden, 2 * d), 2 * d),
            "cmw.fc0.bias": np.zeros(hidden),
            "cmw.fc1.weight": np.zeros((1, hidden)),
            "cmw.fc1.bias": np.zeros(1),
        }
    )
    return ModelParams(tensors), theta_c


# Forward passes


def standardize_images(images: ArrayLike) -> Tensor:
    """
    Zero mean and unit variance per image, as a constant. Constant images
    map to zeros. Frame brightness and contrast never reach the conv stack.
    """
    x = as_tensor(images).data
    if x.ndim != 4:
        raise ShapeError("encode", x.shape)
    mean = x.mean(axis=(1, 2, 3), keepdims=True)
    std = x.std(axis=(1, 2, 3), keepdims=True)
    return Tensor((x - mean) / np.where(std > STANDARDIZE_EPS, std, np.inf))


def conv_features(theta_m: ModelParams, images: ArrayLike) -> Tensor:
    """
    Globally pooled conv-stack output (B, C_last), the input of ``encoder.fc``.

    Raises:
        ShapeError: when the images are smaller than the conv/pool stack allows
    """
    x = standardize_images(images)
    n_conv = theta_m.n_conv
    minimum = 2 ** (n_conv + 1)
    if x.shape[2] < minimum or x.shape[3] < minimum:
        raise ShapeError(f"encode (images need at least {minimum}x{minimum})", x.shape)
    for i in range(n_conv):
        w = theta_m[f"encoder.conv{i}.weight"]
        x = conv2d(pad2d(x, w.shape[2] // 2), w, theta_m[f"encoder.conv{i}.bias"])
        x = mean_pool2d(relu(x), 2)
    return global_mean_pool(x)


def encode(theta_m: ModelParams, images: ArrayLike) -> Tensor:
    """Representations H (B, D) for a (B, 1, H, W) image stack."""
    pooled = conv_features(theta_m, images)
    return linear(pooled, theta_m["encoder.fc.weight"], theta_m["encoder.fc.bias"])


def project(theta_m: ModelParams, h: ArrayLike) -> Tensor:
    """Projections Z (B, d) = fc1(leaky_relu(fc0(H)))."""
    hidden = leaky_relu(linear(h, theta_m["projection.fc0.weight"], theta_m["projection.fc0.bias"]))
    return linear(hidden, theta_m["projection.fc1.weight"], theta_m["projection.fc1.bias"])


def pair_features(h: ArrayLike) -> Tensor:
    """(2N, D) interleaved rows -> (N, 2D) symmetric features [h1 + h2 ; |h1 - h2|]."""
    th = as_tensor(h)
    if th.ndim != 2 or th.shape[0] % 2 != 0 or th.shape[0] == 0:
        raise ShapeError("pair_features", th.shape)
    h1, h2 = th[0::2], th[1::2]
    return concat([h1 + h2, absolute(h1 - h2)], axis=1)


def weigh_pairs(theta_c: WeightNetParams, h: ArrayLike) -> Tensor:
    """Weights w (N,) in (0, 1) for the pairs of an interleaved (2N, D) batch."""
    th = as_tensor(h)
    if th.ndim != 2 or th.shape[1] != theta_c.repr_dim:
        raise ShapeError("weigh", th.shape, (2, theta_c.repr_dim))
    feats = pair_features(th)
    hidden = relu(linear(feats, theta_c["cmw.fc0.weight"], theta_c["cmw.fc0.bias"]))
    logits = linear(hidden, theta_c["cmw.fc1.weight"], theta_c["cmw.fc1.bias"])
    return sigmoid(reshape(logits, (feats.shape[0],)))


def weigh(theta_c: WeightNetParams, h1: ArrayLike, h2: ArrayLike) -> Tensor:
    """Scalar weight of one pair of D-vectors."""
    t1, t2 = as_tensor(h1), as_tensor(h2)
    d = theta_c.repr_dim
    if t1.shape != (d,) or t2.shape != (d,):
        raise ShapeError("weigh", t1.shape, t2.shape)
    stacked = concat([reshape(t1, (1, d)), reshape(t2, (1, d))], axis=0)
    return reshape(weigh_pairs(theta_c, stacked), ())
