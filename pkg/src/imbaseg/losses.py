"""Segmentation losses for class-imbalanced problems, with analytic gradients.

Two families share the label conventions but differ in aggregation:

* Cross-entropy family (ce, marginCE, focalCE, combinedCE): a per-pixel loss
  averaged over active pixels. The gradient is taken with respect to logits.
* Overlap family (dsc, marginDSC, focalDSC, combinedDSC, fbeta): soft
  TP/FP/FN counts are accumulated over all active pixels, one fractional term
  per class, and the terms are summed. The plain forms take probabilities and
  differentiate with respect to them; the margin/combined forms take logits
  and chain through the shifted softmax.

Margin variants replace softmax(z) with softmax(z - m * y * r), enlarging the
decision margin of the true class. Focal variants attenuate the contribution
of well-classified pixels by (1 - p)^gamma. The asymmetric versions of both
use a per-class rarity vector r in [0, 1]: margin shifts are scaled by r
(r_j = 1 applies the full margin to class j), while focal attenuation is
blended away by r (r_j = 1 keeps class j's full unattenuated term,
r_j = 0 attenuates it like the symmetric focal loss). The combined loss
applies the focal blend on top of the margin softmax.

Labels are float fields shaped like the logits. One-hot rows are the common
case; soft rows (convex mixtures) and scaled rows are supported wherever the
math extends, and all-zero rows mark masked pixels that contribute neither
loss nor gradient. If both families are trained jointly the convention is an
unweighted sum of the two values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    label_residual,
    log_sum_exp,
    shifted_softmax,
    softmax,
    softmax_vjp,
    validate_rarity,
)
from .errors import DomainError, InvalidInputError

__all__ = [
    "LOSS_KINDS",
    "LossConfig",
    "LossValue",
    "ce_loss",
    "combined_ce_loss",
    "combined_dsc_loss",
    "dsc_loss",
    "evaluate_loss",
    "fbeta_loss",
    "focal_ce_loss",
    "focal_dsc_loss",
    "focal_weight",
    "margin_ce_loss",
    "margin_dsc_loss",
    "margin_weight",
]

LOSS_KINDS = (
    "CE",
    "DSC",
    "marginCE",
    "marginDSC",
    "focalCE",
    "focalDSC",
    "combinedCE",
    "combinedDSC",
    "fbeta",
)


@dataclass
class LossValue:
    """Scalar loss plus its per-class decomposition (per_class sums to total)."""

    total: float
    per_class: np.ndarray


@dataclass
class LossConfig:
    """Declarative loss selection for the training harness.

    r is required when asymmetric is true. dsc_epsilon stabilizes only the
    denominators of the overlap family.
    """

    kind: str = "CE"
    asymmetric: bool = False
    m: float = 0.0
    gamma: float = 0.0
    beta: float = 1.0
    r: np.ndarray | None = None
    dsc_epsilon: float = 1e-5

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise DomainError(f"unknown loss kind {self.kind!r}")
        if self.m < 0:
            raise DomainError("margin m must be non-negative")
        if self.gamma < 0:
            raise DomainError("gamma must be non-negative")
        if self.beta <= 0:
            raise DomainError("beta must be positive")
        if self.dsc_epsilon <= 0:
            raise DomainError("dsc_epsilon must be positive")
        if self.asymmetric and self.r is None:
            raise DomainError("asymmetric losses need a rarity vector r")
        if self.r is not None:
            self.r = np.asarray(self.r, dtype=np.float64)


def _check_fields(values, labels, name):
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if values.shape != labels.shape:
        raise InvalidInputError(
            f"label field shape {labels.shape} does not match {name} {values.shape}"
        )
    if values.shape[-1] < 2:
        raise InvalidInputError("need at least two classes")
    if np.any(labels < 0.0):
        raise InvalidInputError("label weights must be non-negative")
    return values, labels


def _flatten(values, labels):
    c = values.shape[-1]
    return values.reshape(-1, c), labels.reshape(-1, c)


# ---------------------------------------------------------------------------
# cross-entropy family


def _ce_core(log_p, p, labels, pixel_weight=None):
    """Mean over active pixels of -sum_j c_j log p_j, optionally reweighted.

    pixel_weight multiplies both the per-pixel loss and its gradient; it is
    how the focal/blend variants express themselves once the weight is known.
    Returns (LossValue, gradient with respect to the pre-softmax logits,
    assuming the softmax shift does not depend on the logits).
    """
    active = np.sum(labels, axis=-1) > 0.0
    n_active = max(int(np.count_nonzero(active)), 1)

    contrib = -labels * log_p
    if pixel_weight is not None:
        contrib = contrib * pixel_weight[..., None]
    per_class = contrib.sum(axis=0) / n_active
    total = float(per_class.sum())

    grad = label_residual(p, labels)
    if pixel_weight is not None:
        grad = grad * pixel_weight[..., None]
    grad = grad / n_active
    return LossValue(total, per_class), grad


def ce_loss(logits, labels):
    """Plain cross entropy, mean over active pixels. Gradient is (p - y) / N."""
    logits, labels = _check_fields(logits, labels, "logits")
    shape = logits.shape
    z, c = _flatten(logits, labels)
    log_p = z - log_sum_exp(z)[..., None]
    value, grad = _ce_core(log_p, np.exp(log_p), c)
    return value, grad.reshape(shape)


def margin_weight(logits, labels, m):
    """Scalar w with grad(margin CE) = w * (p - y): sum exp(z) / sum exp(z - m*y).

    Vectorized over leading axes; m may broadcast per pixel. Computed in log
    space so large logits cannot overflow.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise DomainError("margin m must be non-negative")
    return np.exp(log_sum_exp(logits) - log_sum_exp(logits - m[..., None] * labels))


def margin_ce_loss(logits, labels, m, r=None):
    """Large-margin cross entropy on softmax(z - m*y), or z - m*y*r when r is given.

    r_j scales the margin applied when class j is the true class; r = None is
    the symmetric loss (full margin for every class). Gradient is (q - y) / N
    with q the shifted softmax.
    """
    logits, labels = _check_fields(logits, labels, "logits")
    shape = logits.shape
    z, c = _flatten(logits, labels)
    if m < 0:
        raise DomainError("margin m must be non-negative")
    shift = m * c
    if r is not None:
        r = validate_rarity(r, z.shape[-1])
        shift = shift * r
    zs = z - shift
    log_q = zs - log_sum_exp(zs)[..., None]
    value, grad = _ce_core(log_q, np.exp(log_q), c)
    return value, grad.reshape(shape)


def focal_weight(p_true, gamma):
    """Scalar w with grad(focal CE) = w * (p - y), for true-class probability p.

    w = (1-p)^gamma - gamma * p * log(p) * (1-p)^(gamma-1), evaluated in the
    factored form (1-p)^(gamma-1) * ((1-p) - gamma * p * log p) so gamma < 1
    stays finite. The p -> 1 limit is 0 for gamma > 0. Vectorized over arrays.
    """
    p = np.asarray(p_true, dtype=np.float64)
    if gamma < 0:
        raise DomainError("gamma must be non-negative")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise DomainError("focal weight needs p strictly inside (0, 1)")
    if gamma == 0:
        return np.ones_like(p)
    one_minus = 1.0 - p
    return one_minus ** (gamma - 1.0) * (one_minus - gamma * p * np.log(p))


def _focal_blend_weight(p_t, log_p_t, gamma, r_t):
    """Gradient weight of the blended focal loss r*CE + (1-r)*focal, per pixel."""
    if gamma == 0:
        return np.ones_like(p_t)
    one_minus = 1.0 - p_t
    safe = np.where(one_minus > 0.0, one_minus, 1.0)
    w_focal = np.where(
        one_minus > 0.0,
        safe ** (gamma - 1.0) * (safe - gamma * p_t * log_p_t),
        0.0,
    )
    return r_t + (1.0 - r_t) * w_focal


def _focal_ce_core(z, c, gamma, r_vec, shape):
    """Blended focal CE on already shifted logits z with label weights c.

    One-hot rows use the exact re-weighting form of the gradient; soft rows
    fall back to the chain rule through the softmax.
    """
    log_p = z - log_sum_exp(z)[..., None]
    p = np.exp(log_p)
    active = np.sum(c, axis=-1) > 0.0
    n_active = max(int(np.count_nonzero(active)), 1)

    # per-coordinate blend factor: r_j keeps the plain CE term, the rest is
    # attenuated by (1 - p_j)^gamma
    one_minus = 1.0 - p
    atten = r_vec + (1.0 - r_vec) * one_minus**gamma
    contrib = -c * atten * log_p
    per_class = contrib.sum(axis=0) / n_active
    value = LossValue(float(per_class.sum()), per_class)

    one_hot = (np.count_nonzero(c == 1.0, axis=-1) == 1) & (np.sum(c, axis=-1) == 1.0)

    # exact path: weight * (p - y), weight evaluated at the true class
    t = np.argmax(c, axis=-1)
    rows = np.arange(c.shape[0])
    w_pix = _focal_blend_weight(p[rows, t], log_p[rows, t], gamma, r_vec[t])
    grad_exact = w_pix[:, None] * label_residual(p, c)

    grad = np.where(one_hot[:, None], grad_exact, 0.0)
    soft = ~one_hot & (np.sum(c, axis=-1) > 0.0)
    if np.any(soft):
        # d/dp of -c * (r + (1-r)(1-p)^gamma) * log p, then the softmax vjp
        ps = p[soft]
        cs = c[soft]
        lps = log_p[soft]
        if gamma > 0:
            oms = 1.0 - ps
            safe = np.where(oms > 0.0, oms, 1.0)
            atten_s = r_vec + (1.0 - r_vec) * oms**gamma
            # the datten * log p product tends to 0 as p -> 1 for gamma > 0
            datten_term = np.where(
                oms > 0.0,
                -gamma * (1.0 - r_vec) * safe ** (gamma - 1.0) * lps,
                0.0,
            )
            dldp = -cs * (datten_term + atten_s / ps)
        else:
            dldp = -cs / ps
        grad[soft] = softmax_vjp(ps, dldp)

    return value, (grad / n_active).reshape(shape)


def focal_ce_loss(logits, labels, gamma, r=None):
    """Focal cross entropy -(1-p)^gamma log p, blended per class by rarity.

    r = None is the symmetric loss (every class attenuated). With r, class j's
    term is r_j * CE + (1 - r_j) * focal, so rare classes keep their full
    gradient while abundant ones are damped.
    """
    logits, labels = _check_fields(logits, labels, "logits")
    if gamma < 0:
        raise DomainError("gamma must be non-negative")
    shape = logits.shape
    z, c = _flatten(logits, labels)
    if r is None:
        r_vec = np.zeros(z.shape[-1])
    else:
        r_vec = validate_rarity(r, z.shape[-1])
    return _focal_ce_core(z, c, gamma, r_vec, shape)


def combined_ce_loss(logits, labels, m, gamma, r=None):
    """Margin and focal combined: the focal blend evaluated on the margin softmax.

    With r the margin shift is m * y * r and the focal blend keeps class j's
    unattenuated term in proportion r_j. r = None gives the symmetric
    combination (full margin everywhere, full attenuation everywhere).
    m = 0 reduces to the focal loss, gamma = 0 to the margin loss.
    """
    logits, labels = _check_fields(logits, labels, "logits")
    if m < 0:
        raise DomainError("margin m must be non-negative")
    if gamma < 0:
        raise DomainError("gamma must be non-negative")
    shape = logits.shape
    z, c = _flatten(logits, labels)
    n = z.shape[-1]
    if r is None:
        margin_r = np.ones(n)
        focal_r = np.zeros(n)
    else:
        margin_r = validate_rarity(r, n)
        focal_r = margin_r
    zs = z - m * c * margin_r
    return _focal_ce_core(zs, c, gamma, focal_r, shape)


# ---------------------------------------------------------------------------
# overlap family


def _check_probs(probs, labels):
    probs, labels = _check_fields(probs, labels, "probabilities")
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise InvalidInputError("probabilities must lie in [0, 1]")
    return probs, labels


def _soft_counts(p, c, mask):
    tp = np.sum(mask * c * p, axis=0)
    fp = np.sum(mask * (1.0 - c) * p, axis=0)
    fn = np.sum(mask * c * (1.0 - p), axis=0)
    return tp, fp, fn


def _overlap_core(p, c, shape, num, dnum_dp, den, mask):
    """Assemble sum_j num_j / den_j and its gradient; d(den_j)/dp_ij is mask."""
    per_class = num / den
    value = LossValue(float(per_class.sum()), per_class)
    grad = (dnum_dp * den - num) / den**2 * mask
    return value, grad.reshape(shape)


def dsc_loss(probs, labels, eps=1e-5):
    """Soft-dice loss: per class (FP + FN) / (2 TP + FP + FN + eps), summed.

    Counts aggregate over every active pixel, so near-empty fields pool their
    evidence instead of producing a degenerate per-sample score. A class with
    no labeled and no predicted mass contributes exactly 0. Gradient is with
    respect to the probabilities.
    """
    probs, labels = _check_probs(probs, labels)
    if eps <= 0:
        raise DomainError("eps must be positive")
    shape = probs.shape
    p, c = _flatten(probs, labels)
    mask = (np.sum(c, axis=-1) > 0.0)[:, None].astype(np.float64)
    tp, fp, fn = _soft_counts(p, c, mask)
    num = fp + fn
    den = 2.0 * tp + fp + fn + eps
    dnum = (1.0 - 2.0 * c) * mask
    return _overlap_core(p, c, shape, num, dnum, den, mask)


def fbeta_loss(probs, labels, beta, eps=1e-5):
    """F-beta loss (beta^2 FN + FP) / ((1+beta^2) TP + beta^2 FN + FP + eps).

    beta > 1 weights false negatives, i.e. sensitivity, beta-squared times
    more than false positives; beta = 1 is the soft-dice loss on the same
    counts. Gradient is with respect to the probabilities.
    """
    probs, labels = _check_probs(probs, labels)
    if beta <= 0:
        raise DomainError("beta must be positive")
    if eps <= 0:
        raise DomainError("eps must be positive")
    shape = probs.shape
    p, c = _flatten(probs, labels)
    mask = (np.sum(c, axis=-1) > 0.0)[:, None].astype(np.float64)
    tp, fp, fn = _soft_counts(p, c, mask)
    b2 = beta * beta
    num = b2 * fn + fp
    den = (1.0 + b2) * tp + b2 * fn + fp + eps
    dnum = ((1.0 - c) - b2 * c) * mask
    return _overlap_core(p, c, shape, num, dnum, den, mask)


def focal_dsc_loss(probs, labels, gamma, r=None, eps=1e-5):
    """Soft dice with the false-negative term attenuated per pixel.

    The FN numerator term y (1 - p) is multiplied by (1 - p)^gamma, blended
    per class by rarity: class j uses r_j + (1 - r_j) (1 - p)^gamma, so
    r_j = 1 keeps the full FN mass and r_j = 0 attenuates it. Denominator
    counts stay unattenuated. r = None is the symmetric loss.
    """
    probs, labels = _check_probs(probs, labels)
    if gamma < 0:
        raise DomainError("gamma must be non-negative")
    if eps <= 0:
        raise DomainError("eps must be positive")
    shape = probs.shape
    p, c = _flatten(probs, labels)
    n = p.shape[-1]
    r_vec = np.zeros(n) if r is None else validate_rarity(r, n)
    mask = (np.sum(c, axis=-1) > 0.0)[:, None].astype(np.float64)

    tp, fp, fn = _soft_counts(p, c, mask)
    one_minus = 1.0 - p
    atten = r_vec + (1.0 - r_vec) * one_minus**gamma
    fn_soft = np.sum(mask * c * atten * one_minus, axis=0)
    num = fp + fn_soft
    den = 2.0 * tp + fp + fn + eps
    # d/dp of c * (r (1-p) + (1-r)(1-p)^(gamma+1)) is
    # -c * (r + (1-r)(gamma+1)(1-p)^gamma)
    datten = r_vec + (1.0 - r_vec) * (gamma + 1.0) * one_minus**gamma
    dnum = ((1.0 - c) - c * datten) * mask
    return _overlap_core(p, c, shape, num, dnum, den, mask)


def margin_dsc_loss(logits, labels, m, r=None, eps=1e-5):
    """Soft dice evaluated on the margin softmax, gradient with respect to logits."""
    logits, labels = _check_fields(logits, labels, "logits")
    q = shifted_softmax(logits, labels, m, r=r)
    value, grad_q = dsc_loss(q, labels, eps=eps)
    return value, softmax_vjp(q, grad_q)


def combined_dsc_loss(logits, labels, m, gamma, r=None, eps=1e-5):
    """Margin plus focal dice: the attenuated dice evaluated on the margin softmax.

    Mirrors the combined CE construction: with r, the shift is m * y * r and
    the FN attenuation blend uses the same r; without r, full margin and full
    attenuation.
    """
    logits, labels = _check_fields(logits, labels, "logits")
    n = logits.shape[-1]
    if r is None:
        q = shifted_softmax(logits, labels, m)
        value, grad_q = focal_dsc_loss(q, labels, gamma, r=None, eps=eps)
    else:
        r = validate_rarity(r, n)
        q = shifted_softmax(logits, labels, m, r=r)
        value, grad_q = focal_dsc_loss(q, labels, gamma, r=r, eps=eps)
    return value, softmax_vjp(q, grad_q)


# ---------------------------------------------------------------------------
# dispatch


def evaluate_loss(config, logits, labels):
    """Evaluate config.kind on a logit field; gradient is always w.r.t. logits."""
    kind = config.kind
    r = config.r if config.asymmetric else None
    eps = config.dsc_epsilon
    if kind == "CE":
        return ce_loss(logits, labels)
    if kind == "marginCE":
        return margin_ce_loss(logits, labels, config.m, r=r)
    if kind == "focalCE":
        return focal_ce_loss(logits, labels, config.gamma, r=r)
    if kind == "combinedCE":
        return combined_ce_loss(logits, labels, config.m, config.gamma, r=r)
    if kind == "marginDSC":
        return margin_dsc_loss(logits, labels, config.m, r=r, eps=eps)
    if kind == "combinedDSC":
        return combined_dsc_loss(logits, labels, config.m, config.gamma, r=r, eps=eps)

    p = softmax(logits)
    if kind == "DSC":
        value, grad_p = dsc_loss(p, labels, eps=eps)
    elif kind == "focalDSC":
        value, grad_p = focal_dsc_loss(p, labels, config.gamma, r=r, eps=eps)
    elif kind == "fbeta":
        value, grad_p = fbeta_loss(p, labels, config.beta, eps=eps)
    else:
        raise DomainError(f"unknown loss kind {kind!r}")
    return value, softmax_vjp(p, grad_p)
