"""
Cosine similarity and the (weighted) InfoNCE loss.

Rows of Z are interleaved: rows 2i and 2i + 1 are the two samples of pair i.
For a row i with partner j,

    l(i, j) = -log( exp(s_ij / tau) / sum_{k != i} exp(s_ik / tau) )

so the partner appears in its own denominator and every other row is a
negative. The pair loss is L_i = l(2i, 2i+1) + l(2i+1, 2i) and the batch
loss is (1 / 2N) * sum_i w_i * L_i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ShapeError
from .tensor import (
    ArrayLike,
    Tensor,
    as_tensor,
    div,
    logsumexp_offdiag,
    matmul,
    maximum,
    reduce_sum,
    reshape,
    scale,
    sqrt,
    transpose,
)

NORM_EPS = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    total: Tensor
    per_pair: Tensor
    weights: Tensor
    tau: float

    @property
    def n_pairs(self) -> int:
        return self.per_pair.shape[0]


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ConfigError(f"temperature tau must be positive, got {tau}")


def _guarded_norm(z: Tensor, axis: int | None = None) -> Tensor:
    return maximum(sqrt(reduce_sum(z * z, axis=axis)), NORM_EPS)


def cosine_sim(z_i: ArrayLike, z_j: ArrayLike) -> Tensor:
    """``z_i . z_j / (max(|z_i|, eps) * max(|z_j|, eps))``; 0 for a zero vector."""
    a, b = as_tensor(z_i), as_tensor(z_j)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError("cosine_sim", a.shape, b.shape)
    return reduce_sum(a * b) / (_guarded_norm(a) * _guarded_norm(b))


def similarity_matrix(z: ArrayLike, tau: float) -> Tensor:
    """``S[i, k] = s_ik / tau`` for every pair of rows of Z."""
    _check_tau(tau)
    tz = as_tensor(z)
    if tz.ndim != 2:
        raise ShapeError("similarity_matrix", tz.shape)
    rows, dim = tz.shape
    norms = reshape(_guarded_norm(tz, axis=1), (rows, 1))
    # Spread the per-row norm across columns with a constant outer product.
    zn = div(tz, matmul(norms, np.ones((1, dim))))
    return scale(matmul(zn, transpose(zn)), 1.0 / tau)


def _partner_mask(rows: int) -> np.ndarray:
    mask = np.zeros((rows, rows))
    even = np.arange(0, rows, 2)
    mask[even, even + 1] = 1.0
    mask[even + 1, even] = 1.0
    return mask


def pairwise_losses(z: ArrayLike, tau: float) -> Tensor:
    """Per-pair losses L (N,) for an interleaved (2N, d) Z."""
    _check_tau(tau)
    tz = as_tensor(z)
    if tz.ndim != 2 or tz.shape[0] < 2 or tz.shape[0] % 2 != 0:
        raise ShapeError("pairwise_losses", tz.shape)
    rows = tz.shape[0]
    s = similarity_matrix(tz, tau)
    positives = reduce_sum(s * _partner_mask(rows), axis=1)
    per_row = logsumexp_offdiag(s) - positives
    return reduce_sum(reshape(per_row, (rows // 2, 2)), axis=1)


def weighted_infonce(z: ArrayLike, weights: ArrayLike, tau: float) -> LossBreakdown:
    """
    Weighted batch loss ``(1/2N) * sum_i w_i L_i``.

    Both Z and the weights may be live on the same tape; gradients reach
    each through its own factor.
    """
    per_pair = pairwise_losses(z, tau)
    w = as_tensor(weights)
    if w.shape != per_pair.shape:
        raise ShapeError("weighted_infonce", w.shape, per_pair.shape)
    n = per_pair.shape[0]
    total = scale(reduce_sum(w * per_pair), 1.0 / (2 * n))
    return LossBreakdown(total=total, per_pair=per_pair, weights=w, tau=tau)


def infonce(z: ArrayLike, tau: float) -> LossBreakdown:
    """The unweighted loss (every w_i = 1)."""
    n = as_tensor(z).shape[0] // 2
    return weighted_infonce(z, np.ones(n), tau)


def validation_loss(z: ArrayLike, tau: float) -> Tensor:
    return infonce(z, tau).total
