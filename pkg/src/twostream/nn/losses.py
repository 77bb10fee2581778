"""Softmax and cross-entropy, plus their fused backward pass."""

import numpy as np

from ..errors import NumericError, ShapeError

# Probabilities are floored at this value inside the log to keep the loss finite.
PROB_FLOOR = 1e-12


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis.

    The maximum logit is subtracted before exponentiation. Computation happens
    in float64 regardless of the input dtype so that the outputs sum to one to
    within 1e-12. Raises NumericError on non-finite input.
    """
    if logits.ndim not in (1, 2):
        raise ShapeError(f"softmax expects rank 1 or 2, got rank {logits.ndim}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("softmax input contains non-finite values")
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(probs: np.ndarray, label: int) -> float:
    """Negative log-likelihood of `label` under `probs` (one sample)."""
    n = probs.shape[-1]
    if probs.ndim != 1:
        raise ShapeError(f"cross_entropy_loss expects a rank-1 vector, got rank {probs.ndim}")
    if not 0 <= label < n:
        raise ShapeError(f"label {label} outside [0, {n})")
    return float(-np.log(max(float(probs[label]), PROB_FLOOR)))


def cross_entropy_backward(probs: np.ndarray, label) -> np.ndarray:
    """Gradient of the cross-entropy loss w.r.t. the *logits*: probs - one_hot.

    Accepts a single probability vector with an int label, or a batch of rows
    with a label vector (no averaging is applied here).
    """
    grad = np.array(probs, dtype=np.float64, copy=True)
    if grad.ndim == 1:
        grad[label] -= 1.0
    elif grad.ndim == 2:
        grad[np.arange(grad.shape[0]), np.asarray(label)] -= 1.0
    else:
        raise ShapeError(f"expected rank 1 or 2 probs, got rank {grad.ndim}")
    return grad


def batch_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy over a batch of probability rows."""
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())
