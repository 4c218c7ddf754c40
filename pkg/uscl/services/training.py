"""
Training steps for contrastive pre-training.

Two modes:

1. meta - the three-step online bi-level update. A lookahead SGD step on the
   weighted loss, an SGD step on the weighting net along the closed-form meta
   gradient, then the real SGD step with the refreshed weights.
2. plain - one AdamW step on the unweighted loss.

The meta gradient never needs second-order differentiation. With
gᵢ = ∇θ (1/2N)·Lᵢ at θ_m and g_v = ∇θ L_valid at the lookahead parameters θ̂,

    ∇Θc L_valid(θ̂(Θc)) = Σᵢ (−α₁ ⟨g_v, gᵢ⟩) ∇Θc wᵢ

where wᵢ is evaluated on representations H held constant (H depends on θ_m
only). gᵢ is computed once per step and reused by the final update.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Sequence, TypeVar

import numpy as np

from ..exceptions import ConfigError
from ..losses import infonce, pairwise_losses, validation_loss
from ..metrics import STEP_DURATION, TRAIN_STEPS
from ..nets import (
    ArchConfig,
    ModelParams,
    ParamSet,
    WeightNetParams,
    encode,
    init_params,
    project,
    weigh_pairs,
)
from ..pairgen import PairBatch
from ..rng import Rng
from ..tensor import Tape, Tensor, backward, reduce_sum, scale, stop_gradient

logger = logging.getLogger(__name__)

P = TypeVar("P", bound=ParamSet)


class TrainMode(StrEnum):
    META = "meta"
    PLAIN = "plain"


@dataclass(frozen=True)
class OptimConfig:
    """
    Optimizer settings for both modes.

    ``alpha1`` and ``alpha2`` drive the plain SGD steps of meta mode;
    ``adam_*`` and ``weight_decay`` drive plain mode. ``alpha2 = 0`` freezes
    the weighting net.
    """

    mode: TrainMode = TrainMode.META
    alpha1: float = 0.1
    alpha2: float = 6e-5
    adam_lr: float = 1e-3
    weight_decay: float = 1e-4
    tau: float = 0.5
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", TrainMode(self.mode))
        if not self.alpha1 > 0:
            raise ConfigError(f"alpha1 must be positive, got {self.alpha1}")
        if not self.alpha2 >= 0:
            raise ConfigError(f"alpha2 must be non-negative, got {self.alpha2}")
        if not self.adam_lr > 0:
            raise ConfigError(f"adam_lr must be positive, got {self.adam_lr}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not 0 <= self.adam_beta1 < 1 or not 0 <= self.adam_beta2 < 1:
            raise ConfigError("Adam betas must be in [0, 1)")
        if self.weight_decay < 0 or not self.adam_eps > 0:
            raise ConfigError("weight_decay must be >= 0 and adam_eps > 0")


@dataclass(frozen=True)
class AdamState:
    m: ParamSet
    v: ParamSet
    t: int = 0

    @classmethod
    def fresh(cls, params: ParamSet) -> AdamState:
        return cls(m=params.zeros_like(), v=params.zeros_like(), t=0)


@dataclass(frozen=True)
class TrainState:
    """Parameters, optimizer buffers and the step counter. Θ_c is None in plain mode."""

    theta_m: ModelParams
    theta_c: WeightNetParams | None = None
    step: int = 0
    adam: AdamState | None = None


@dataclass(frozen=True)
class StepResult:
    train_loss: float
    weighted_loss: float
    valid_loss: float | None
    weights: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class PerPairGradients:
    h: Tensor
    losses: np.ndarray
    grads: list[ModelParams]


@dataclass(frozen=True)
class Lookahead:
    theta_hat: ModelParams
    weights: np.ndarray
    grads: list[ModelParams]
    h: Tensor
    losses: np.ndarray


@dataclass(frozen=True)
class MetaGradient:
    grad: WeightNetParams
    valid_loss: float
    coefficients: np.ndarray


def init_state(arch: ArchConfig, mode: TrainMode, rng: Rng) -> TrainState:
    theta_m, theta_c = init_params(arch, rng)
    if mode == TrainMode.PLAIN:
        return TrainState(theta_m=theta_m, theta_c=None, step=0, adam=AdamState.fresh(theta_m))
    return TrainState(theta_m=theta_m, theta_c=theta_c, step=0)


def forward(theta_m: ModelParams, batch: PairBatch) -> tuple[Tensor, Tensor]:
    """(H, Z) for the interleaved images of ``batch``."""
    h = encode(theta_m, batch.images())
    return h, project(theta_m, h)


def weighted_sum(grads: Sequence[P], weights: Sequence[float] | np.ndarray) -> P:
    """``sum_i w_i * g_i``, accumulated in pair order."""
    if len(grads) != len(weights) or not grads:
        raise ConfigError(f"{len(grads)} gradients for {len(weights)} weights")
    total = grads[0].zeros_like()
    for w, g in zip(weights, grads):
        total = total.axpy(float(w), g)
    return total


def sgd_step(theta: P, grad: ParamSet, lr: float) -> P:
    return theta.axpy(-lr, grad)


def adam_update(
    theta: P,
    grad: ParamSet,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[P, AdamState]:
    """
    One Adam step with bias correction and decoupled weight decay:
    ``theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * theta``.
    """
    t = state.t + 1
    m = state.m.combine(grad, lambda m_, g: beta1 * m_ + (1.0 - beta1) * g)
    v = state.v.combine(grad, lambda v_, g: beta2 * v_ + (1.0 - beta2) * g * g)
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    direction = m.combine(v, lambda m_, v_: (m_ / c1) / (np.sqrt(v_ / c2) + eps))
    updated = theta.combine(direction, lambda p, d: p - lr * d - lr * weight_decay * p)
    return updated, AdamState(m=m, v=v, t=t)


def per_pair_gradients(theta_m: ModelParams, batch: PairBatch, tau: float) -> PerPairGradients:
    """
    One forward pass, then one backward pass per pair on ``(1/2N) * L_i``.

    Every L_i depends on all 2N rows of Z, so each g_i carries the full
    negatives coupling. H is returned as a constant.
    """
    tape = Tape()
    params = theta_m.on(tape)
    h, z = forward(params, batch)
    per_pair = pairwise_losses(z, tau)
    n = per_pair.shape[0]
    grads = [
        theta_m.grads_from(backward(tape, scale(per_pair[i], 1.0 / (2 * n)))) for i in range(n)
    ]
    return PerPairGradients(h=stop_gradient(h), losses=per_pair.numpy(), grads=grads)


def lookahead_step(
    theta_m: ModelParams,
    theta_c: WeightNetParams,
    batch: PairBatch,
    alpha1: float,
    tau: float = 0.5,
) -> Lookahead:
    """θ̂ = θ_m − α₁ Σᵢ wᵢ gᵢ with wᵢ from Θ_c on constant H."""
    ppg = per_pair_gradients(theta_m, batch, tau)
    weights = weigh_pairs(theta_c, ppg.h).numpy()
    theta_hat = sgd_step(theta_m, weighted_sum(ppg.grads, weights), alpha1)
    return Lookahead(
        theta_hat=theta_hat, weights=weights, grads=ppg.grads, h=ppg.h, losses=ppg.losses
    )


def validation_gradient(
    theta: ModelParams, valid_batch: PairBatch, tau: float
) -> tuple[float, ModelParams]:
    """Unweighted validation loss at ``theta`` and its gradient."""
    tape = Tape()
    params = theta.on(tape)
    _, z = forward(params, valid_batch)
    loss = validation_loss(z, tau)
    return loss.item(), theta.grads_from(backward(tape, loss))


def meta_gradient(
    theta_hat: ModelParams,
    theta_c: WeightNetParams,
    h: Tensor,
    grads: Sequence[ModelParams],
    valid_batch: PairBatch,
    alpha1: float,
    tau: float = 0.5,
) -> MetaGradient:
    """Closed-form ``∇Θc L_valid(θ̂(Θc))`` (see the module docstring)."""
    valid_loss, g_v = validation_gradient(theta_hat, valid_batch, tau)
    coefficients = np.array([-alpha1 * g_v.dot(g) for g in grads])

    # Σ cᵢ ∇wᵢ is the gradient of Σ cᵢ wᵢ with the cᵢ held constant.
    tape = Tape()
    params = theta_c.on(tape)
    weights = weigh_pairs(params, stop_gradient(h))
    objective = reduce_sum(weights * coefficients)
    grad = theta_c.grads_from(backward(tape, objective))
    return MetaGradient(grad=grad, valid_loss=valid_loss, coefficients=coefficients)


def meta_train_step(
    state: TrainState, train_batch: PairBatch, valid_batch: PairBatch, cfg: OptimConfig
) -> tuple[TrainState, StepResult]:
    """
    One bi-level iteration, strictly in this order:

    1. lookahead θ̂ with Θ_c at step t
    2. Θ_c(t+1) = Θ_c(t) − α₂ · meta gradient
    3. θ_m(t+1) = θ_m(t) − α₁ Σᵢ wᵢ gᵢ with wᵢ recomputed from Θ_c(t+1)
       on the same batch and the cached gᵢ
    """
    if state.theta_c is None:
        raise ConfigError("meta training needs weighting-net parameters")
    start = time.perf_counter()

    look = lookahead_step(state.theta_m, state.theta_c, train_batch, cfg.alpha1, cfg.tau)
    meta = meta_gradient(
        look.theta_hat, state.theta_c, look.h, look.grads, valid_batch, cfg.alpha1, cfg.tau
    )
    theta_c = sgd_step(state.theta_c, meta.grad, cfg.alpha2)
    weights = weigh_pairs(theta_c, look.h).numpy()
    theta_m = sgd_step(state.theta_m, weighted_sum(look.grads, weights), cfg.alpha1)

    n = len(look.losses)
    result = StepResult(
        train_loss=float(np.sum(look.losses) / (2 * n)),
        weighted_loss=float(np.sum(weights * look.losses) / (2 * n)),
        valid_loss=meta.valid_loss,
        weights=weights,
    )
    new_state = replace(state, theta_m=theta_m, theta_c=theta_c, step=state.step + 1)

    TRAIN_STEPS.labels(mode=TrainMode.META.value).inc()
    STEP_DURATION.labels(mode=TrainMode.META.value).observe(time.perf_counter() - start)
    logger.debug(
        f"meta step {new_state.step}: train {result.train_loss:.5f} "
        f"weighted {result.weighted_loss:.5f} valid {meta.valid_loss:.5f} "
        f"w mean {weights.mean():.4f}"
    )
    return new_state, result


def plain_train_step(
    state: TrainState, train_batch: PairBatch, cfg: OptimConfig
) -> tuple[TrainState, StepResult]:
    """One AdamW step on the unweighted loss."""
    start = time.perf_counter()

    tape = Tape()
    params = state.theta_m.on(tape)
    _, z = forward(params, train_batch)
    loss = infonce(z, cfg.tau)
    grad = state.theta_m.grads_from(backward(tape, loss.total))
    adam = state.adam or AdamState.fresh(state.theta_m)
    theta_m, adam = adam_update(
        state.theta_m,
        grad,
        adam,
        lr=cfg.adam_lr,
        beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2,
        eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
    )

    value = loss.total.item()
    result = StepResult(
        train_loss=value,
        weighted_loss=value,
        valid_loss=None,
        weights=np.ones(len(train_batch)),
    )
    new_state = replace(state, theta_m=theta_m, adam=adam, step=state.step + 1)

    TRAIN_STEPS.labels(mode=TrainMode.PLAIN.value).inc()
    STEP_DURATION.labels(mode=TrainMode.PLAIN.value).observe(time.perf_counter() - start)
    logger.debug(f"plain step {new_state.step}: train {value:.5f}")
    return new_state, result
