"""
Downstream evaluation of pre-trained encoders.

Two protocols, both on a video-level train/test split of a labeled corpus:

1. Linear probe - the encoder is frozen and a softmax classifier is trained on
   the representations h.
2. Head fine-tune - the conv stack is frozen; the encoder's final linear layer
   and the classifier are trained together.

The classifier starts at zero and is trained with full-batch Adam, so a report
depends only on the checkpoint, the corpus and the split seed. With zero
epochs every logit is equal and every frame is predicted as class 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score

from ..checkpoint import Checkpoint
from ..data import VideoClip, extract_frame_set, split_by_video
from ..exceptions import EvaluationError
from ..nets import ModelParams, ParamSet, conv_features, encode
from ..rng import STREAM_PROBE, Rng
from ..tensor import Tape, Tensor, backward, exp, linear, log, reduce_mean, reduce_sum, sub
from .training import AdamState, adam_update

logger = logging.getLogger(__name__)

# Frames per forward pass when featurizing a corpus.
ENCODE_CHUNK = 256


@dataclass(frozen=True)
class ProbeReport:
    """Classification metrics on held-out videos; per-class values are one-vs-rest."""

    accuracy: float
    sensitivity: tuple[float, ...]
    specificity: tuple[float, ...]
    macro_f1: float
    confusion: np.ndarray
    n_classes: int
    n_train: int = 0
    n_test: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "sensitivity": list(self.sensitivity),
            "specificity": list(self.specificity),
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
            "n_classes": self.n_classes,
            "n_train": self.n_train,
            "n_test": self.n_test,
        }


def report_from_predictions(
    y_true: Sequence[int], y_pred: Sequence[int], n_classes: int, n_train: int = 0
) -> ProbeReport:
    """
    Accuracy, per-class sensitivity TP/(TP+FN) and specificity TN/(TN+FP),
    macro F1 over all ``n_classes`` labels, and the confusion matrix (rows are
    true classes).
    """
    labels = list(range(n_classes))
    cm = confusion_matrix(y_true, y_pred, labels=labels)
    total = int(cm.sum())
    sensitivity: list[float] = []
    specificity: list[float] = []
    for c in labels:
        tp = int(cm[c, c])
        fn = int(cm[c, :].sum()) - tp
        fp = int(cm[:, c].sum()) - tp
        tn = total - tp - fn - fp
        sensitivity.append(tp / (tp + fn) if tp + fn else 0.0)
        specificity.append(tn / (tn + fp) if tn + fp else 0.0)
    return ProbeReport(
        accuracy=float(accuracy_score(y_true, y_pred)),
        sensitivity=tuple(sensitivity),
        specificity=tuple(specificity),
        macro_f1=float(f1_score(y_true, y_pred, labels=labels, average="macro", zero_division=0)),
        confusion=cm,
        n_classes=n_classes,
        n_train=n_train,
        n_test=len(y_true),
    )


# Featurization


@dataclass(frozen=True)
class _LabeledFrames:
    images: np.ndarray
    labels: np.ndarray


def _labeled_frames(clips: Sequence[VideoClip], samples_per_second: float) -> _LabeledFrames:
    images: list[np.ndarray] = []
    labels: list[int] = []
    for clip in clips:
        fs = extract_frame_set(clip, samples_per_second)
        for frame in fs.frames:
            images.append(frame.pixels)
            labels.append(int(clip.latent_class))  # type: ignore[arg-type]
    return _LabeledFrames(np.stack(images)[:, None, :, :], np.array(labels, dtype=np.int64))


def chunked(
    fn: Callable[[ModelParams, np.ndarray], Tensor], theta_m: ModelParams, images: np.ndarray
) -> np.ndarray:
    """``fn`` over ``images`` in chunks of ``ENCODE_CHUNK``, concatenated."""
    return np.concatenate(
        [
            fn(theta_m, images[start : start + ENCODE_CHUNK]).numpy()
            for start in range(0, len(images), ENCODE_CHUNK)
        ]
    )


def _split(
    clips: Sequence[VideoClip], test_ratio: float, seed: int
) -> tuple[list[VideoClip], list[VideoClip], int]:
    labeled = [c for c in clips if c.latent_class is not None]
    if not labeled:
        raise EvaluationError("corpus has no labeled videos; probing needs latent classes")
    if len(labeled) < 2:
        raise EvaluationError("probing needs at least two labeled videos")
    skipped = len(clips) - len(labeled)
    if skipped:
        logger.warning(f"Skipping {skipped} unlabeled videos")
    n_classes = max(2, max(int(c.latent_class) for c in labeled) + 1)  # type: ignore[arg-type]
    train, test = split_by_video(labeled, 1.0 - test_ratio, Rng(seed).child(STREAM_PROBE))
    return train, test, n_classes


# Classifier training


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy; logits are shifted by their (constant) row max."""
    c = logits.shape[1]
    row_max = np.repeat(logits.data.max(axis=1, keepdims=True), c, axis=1)
    shifted = sub(logits, row_max)
    lse = log(reduce_sum(exp(shifted), axis=1))
    onehot = np.eye(c)[labels]
    picked = reduce_sum(shifted * onehot, axis=1)
    return reduce_mean(lse - picked)


def _fit(
    trainable: ParamSet,
    logits_fn: Callable[[ParamSet], Tensor],
    labels: np.ndarray,
    epochs: int,
    lr: float,
) -> ParamSet:
    params = trainable
    adam = AdamState.fresh(params)
    for epoch in range(epochs):
        tape = Tape()
        live = params.on(tape)
        loss = softmax_cross_entropy(logits_fn(live), labels)
        grads = params.grads_from(backward(tape, loss))
        params, adam = adam_update(params, grads, adam, lr=lr)
        if (epoch + 1) % 25 == 0 or epoch + 1 == epochs:
            logger.debug(f"probe epoch {epoch + 1}/{epochs}: loss {loss.item():.5f}")
    return params


def _classifier(n_features: int, n_classes: int) -> ParamSet:
    return ParamSet(
        {
            "classifier.weight": np.zeros((n_classes, n_features)),
            "classifier.bias": np.zeros(n_classes),
        }
    )


def _predict(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=1)


def linear_probe(
    ckpt: Checkpoint,
    clips: Sequence[VideoClip],
    epochs: int = 100,
    lr: float = 0.01,
    test_ratio: float = 0.2,
    seed: int = 0,
    samples_per_second: float = 3.0,
) -> ProbeReport:
    """
    Train a softmax classifier on frozen representations h.

    Args:
        ckpt: pre-trained checkpoint (either mode)
        clips: labeled corpus; unlabeled (corrupted) videos are skipped
        epochs: full-batch Adam epochs (0 gives the untrained baseline)
        lr: Adam learning rate
        test_ratio: held-out share of videos
        seed: split seed

    Raises:
        EvaluationError: when the corpus has no labeled videos
    """
    if epochs < 0:
        raise EvaluationError(f"epochs must be >= 0, got {epochs}")
    train_clips, test_clips, n_classes = _split(clips, test_ratio, seed)
    train = _labeled_frames(train_clips, samples_per_second)
    test = _labeled_frames(test_clips, samples_per_second)
    h_train = chunked(encode, ckpt.theta_m, train.images)
    h_test = chunked(encode, ckpt.theta_m, test.images)

    def logits_fn(p: ParamSet, feats: np.ndarray = h_train) -> Tensor:
        return linear(feats, p["classifier.weight"], p["classifier.bias"])

    fitted = _fit(_classifier(h_train.shape[1], n_classes), logits_fn, train.labels, epochs, lr)
    predictions = _predict(logits_fn(fitted, h_test).numpy())
    report = report_from_predictions(test.labels, predictions, n_classes, n_train=len(train.labels))
    logger.info(
        f"Linear probe: accuracy {report.accuracy:.4f}, macro F1 {report.macro_f1:.4f} "
        f"({len(train_clips)} train / {len(test_clips)} test videos)"
    )
    return report


def finetune_params(
    ckpt: Checkpoint,
    clips: Sequence[VideoClip],
    epochs: int = 100,
    lr: float = 0.01,
    test_ratio: float = 0.2,
    seed: int = 0,
    samples_per_second: float = 3.0,
) -> tuple[ModelParams, ProbeReport]:
    """``finetune_head`` that also returns the tuned model parameters."""
    if epochs < 0:
        raise EvaluationError(f"epochs must be >= 0, got {epochs}")
    train_clips, test_clips, n_classes = _split(clips, test_ratio, seed)
    train = _labeled_frames(train_clips, samples_per_second)
    test = _labeled_frames(test_clips, samples_per_second)
    pooled_train = chunked(conv_features, ckpt.theta_m, train.images)
    pooled_test = chunked(conv_features, ckpt.theta_m, test.images)

    head = _classifier(ckpt.theta_m.repr_dim, n_classes)
    trainable = ParamSet(
        {
            "encoder.fc.weight": ckpt.theta_m["encoder.fc.weight"],
            "encoder.fc.bias": ckpt.theta_m["encoder.fc.bias"],
            "classifier.weight": head["classifier.weight"],
            "classifier.bias": head["classifier.bias"],
        }
    )

    def logits_fn(p: ParamSet, feats: np.ndarray = pooled_train) -> Tensor:
        h = linear(feats, p["encoder.fc.weight"], p["encoder.fc.bias"])
        return linear(h, p["classifier.weight"], p["classifier.bias"])

    fitted = _fit(trainable, logits_fn, train.labels, epochs, lr)
    predictions = _predict(logits_fn(fitted, pooled_test).numpy())
    report = report_from_predictions(test.labels, predictions, n_classes, n_train=len(train.labels))

    tuned = ModelParams(
        {
            name: fitted[name] if name.startswith("encoder.fc.") else tensor
            for name, tensor in ckpt.theta_m.items()
        }
    )
    logger.info(
        f"Head fine-tune: accuracy {report.accuracy:.4f}, macro F1 {report.macro_f1:.4f} "
        f"({len(train_clips)} train / {len(test_clips)} test videos)"
    )
    return tuned, report


def finetune_head(
    ckpt: Checkpoint,
    clips: Sequence[VideoClip],
    epochs: int = 100,
    lr: float = 0.01,
    test_ratio: float = 0.2,
    seed: int = 0,
    samples_per_second: float = 3.0,
) -> ProbeReport:
    """
    Train the encoder's final linear layer and a classifier on frozen conv
    features; the desk-scale analog of tuning only the last layers.
    """
    _, report = finetune_params(ckpt, clips, epochs, lr, test_ratio, seed, samples_per_second)
    return report
