"""Stable softmax algebra over class-logit fields.

All functions treat the last axis as the class axis and broadcast over any
leading axes (pixel grids, batches). Everything is computed in double
precision regardless of input dtype: the loss layer depends on cancellation
behavior that float32 cannot deliver.

The stabilized form subtracts the per-vector max before exponentiating,

    softmax(z)_j = exp(z_j - M) / sum_k exp(z_k - M),   M = max_k z_k,

which leaves the result invariant to a common additive shift of the logits.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, InvalidInputError

__all__ = [
    "softmax",
    "log_sum_exp",
    "shifted_softmax",
    "softmax_vjp",
    "label_residual",
    "validate_one_hot",
    "validate_rarity",
]


def _as_logits(z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim < 1 or z.shape[-1] < 1:
        raise InvalidInputError("logit array needs at least one class entry")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits contain non-finite values")
    return z


def softmax(z):
    """Class probabilities along the last axis."""
    z = _as_logits(z)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_sum_exp(z):
    """log(sum(exp(z))) along the last axis, max-subtracted."""
    z = _as_logits(z)
    m = np.max(z, axis=-1, keepdims=True)
    return np.squeeze(m, axis=-1) + np.log(np.sum(np.exp(z - m), axis=-1))


def shifted_softmax(z, labels, m, r=None):
    """Margin softmax: softmax(z - m * y) or, with a rarity vector, softmax(z - m * y * r).

    `labels` is a one-hot field shaped like z. With m = 0, or with r = 0 on the
    true class, the shift is exactly zero and the result is bitwise equal to
    softmax(z): it is the same code path with a zero subtrahend.
    """
    z = _as_logits(z)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != z.shape:
        raise InvalidInputError(
            f"label field shape {labels.shape} does not match logits {z.shape}"
        )
    if m < 0:
        raise DomainError("margin m must be non-negative")
    shift = m * labels
    if r is not None:
        r = validate_rarity(r, z.shape[-1])
        shift = shift * r
    return softmax(z - shift)


def softmax_vjp(p, cotangent):
    """Pull a gradient w.r.t. softmax outputs back to the logits.

    For p = softmax(z) and g = dL/dp, returns dL/dz = p * (g - sum(g * p)),
    elementwise along the last axis.
    """
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(cotangent, dtype=np.float64)
    inner = np.sum(g * p, axis=-1, keepdims=True)
    return p * (g - inner)


def label_residual(p, labels):
    """Per-pixel gradient of -sum_j c_j log p_j with respect to the logits.

    For label weights c with row sum s this is s * p - c. One-hot rows get a
    cancellation-free true-class entry, computed as the negative sum of the
    off-class probabilities instead of p_t - 1: when p_t is within 1e-9 of 1
    the direct subtraction loses eight digits, which the re-weighting
    identities downstream cannot afford. Zero rows (masked pixels) yield an
    exactly zero row.
    """
    p = np.asarray(p, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != p.shape:
        raise InvalidInputError(
            f"label field shape {labels.shape} does not match probabilities {p.shape}"
        )
    row_sum = np.sum(labels, axis=-1, keepdims=True)
    generic = row_sum * p - labels

    on = labels == 1.0
    one_hot_row = (np.count_nonzero(on, axis=-1, keepdims=True) == 1) & (row_sum == 1.0)
    off_sum = np.sum(np.where(on, 0.0, p), axis=-1, keepdims=True)
    precise = np.where(on, -off_sum, p)
    return np.where(one_hot_row, precise, generic)


def validate_one_hot(labels, n_classes=None):
    """Check a one-hot field: entries in {0, 1}, each row summing to 1.

    Returns the field as float64. Rows of all zeros are rejected here; masked
    pixels are a loss-layer concept and use `label_residual` directly.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if n_classes is not None and labels.shape[-1] != n_classes:
        raise InvalidInputError(
            f"expected {n_classes} classes, label field has {labels.shape[-1]}"
        )
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise InvalidInputError("one-hot field has entries outside {0, 1}")
    if not np.all(np.sum(labels, axis=-1) == 1.0):
        raise InvalidInputError("one-hot field has rows not summing to 1")
    return labels


def validate_rarity(r, n_classes):
    """Check a per-class rarity vector: shape (n_classes,), entries in [0, 1]."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (n_classes,):
        raise InvalidInputError(
            f"rarity vector shape {r.shape}, expected ({n_classes},)"
        )
    if not np.all(np.isfinite(r)):
        raise InvalidInputError("rarity vector has non-finite entries")
    if np.any(r < 0.0) or np.any(r > 1.0):
        raise DomainError("rarity entries must lie in [0, 1]")
    return r
