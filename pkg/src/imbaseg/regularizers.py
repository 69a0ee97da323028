"""Training-time sample regularizers: adversarial, mixup, augmentation.

All three counteract the rare-class logit shift by enlarging the training
distribution around the rare class:

* Adversarial: perturb an image along the input gradient of the loss. The
  asymmetric variant takes the gradient of L(x, y * r), i.e. only pixels whose
  true class is rare drive the direction, and skips images without any such
  pixel. The perturbation is rescaled to a fixed L2 norm l.
* Mixup: convex combination of two images. The symmetric variant mixes the
  label fields with the same weight; the asymmetric variant assigns each
  pixel a hard label, favoring the rare class when its mixing weight clears
  the confidence margin m, and a zero row (masked out of the loss) when
  neither side does.
* Augmentation: horizontal flip plus a small additive intensity shift,
  applied with probability p_fg to patches containing rare-class pixels and
  p_bg otherwise. p_bg < p_fg skews the augmented distribution toward the
  rare class.

Randomness always comes in through an explicit numpy Generator so callers
control substreams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import validate_rarity
from .errors import DomainError, InvalidInputError
from .losses import LossConfig, evaluate_loss

__all__ = [
    "AdvConfig",
    "AugConfig",
    "MixupConfig",
    "adversarial_batch",
    "adversarial_example",
    "apply_augmentation",
    "asym_mixup_label",
    "hflip",
    "mixup_pair",
]

_DEGENERATE_NORM = 1e-12


@dataclass
class AdvConfig:
    """epsilon bounds the gradient-ascent step, l is the output perturbation norm."""

    epsilon: float = 1e-5
    l: float = 10.0
    asymmetric: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise DomainError("epsilon must be positive")
        if self.l <= 0:
            raise DomainError("perturbation norm l must be positive")


@dataclass
class MixupConfig:
    """alpha parametrizes Beta(alpha, alpha) for lambda; m is the label margin."""

    alpha: float = 0.2
    m: float = 0.2
    asymmetric: bool = False

    def __post_init__(self):
        if self.alpha <= 0:
            raise DomainError("alpha must be positive")
        if not 0.0 <= self.m < 1.0:
            raise DomainError("mixup margin m must lie in [0, 1)")


@dataclass
class AugConfig:
    """Transform probabilities by patch content; rare-containing patches use p_fg."""

    p_fg: float = 0.5
    p_bg: float = 0.25
    flip: bool = True
    intensity_shift: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.p_bg <= self.p_fg <= 1.0:
            raise DomainError("need 0 <= p_bg <= p_fg <= 1")
        if self.intensity_shift < 0:
            raise DomainError("intensity_shift must be non-negative")


# ---------------------------------------------------------------------------
# adversarial


def _rare_scaled_labels(labels, r):
    """Per-pixel label rows scaled by the rarity of the true class."""
    return labels * r


def adversarial_example(net, image, labels, cfg, loss_cfg=None, r=None):
    """Perturbed copy of one image along the input gradient of the loss.

    image is (h, w, channels), labels a one-hot field (h, w, classes). With
    cfg.asymmetric the gradient is taken against labels scaled by r, and None
    is returned when the image holds no rare-class pixel or the gradient is
    degenerate (norm below 1e-12). The returned image sits at L2 distance
    cfg.l from the input; its labels stay the original ones.
    """
    image = np.asarray(image, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if image.ndim != 3 or labels.ndim != 3:
        raise InvalidInputError("expected one image (h, w, c) and its label field")
    out = adversarial_batch(net, image[None], labels[None], cfg, loss_cfg=loss_cfg, r=r)
    if out is None:
        return None
    perturbed, kept = out
    if len(kept) == 0:
        return None
    return perturbed[0]


def adversarial_batch(net, images, labels, cfg, loss_cfg=None, r=None):
    """Vectorized adversarial_example over a batch.

    Returns (perturbed images, indices of the inputs they came from), or None
    if every image was skipped. CE-family losses are differentiated in one
    backward pass; overlap-family losses pool their counts across a batch, so
    those fall back to per-image passes to keep each direction a per-image
    gradient.
    """
    if loss_cfg is None:
        loss_cfg = LossConfig(kind="CE")
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n_classes = labels.shape[-1]

    target = labels
    keep = np.arange(images.shape[0])
    if cfg.asymmetric:
        r = validate_rarity(r, n_classes)
        target = _rare_scaled_labels(labels, r)
        has_rare = np.any(target.reshape(images.shape[0], -1, n_classes).sum(axis=-1) > 0.0, axis=1)
        keep = np.flatnonzero(has_rare)
        if keep.size == 0:
            return None
        images_used = images[keep]
        target = target[keep]
    else:
        images_used = images

    ce_family = loss_cfg.kind in ("CE", "marginCE", "focalCE", "combinedCE")
    if ce_family:
        logits = net.forward(images_used)
        _, upstream = evaluate_loss(loss_cfg, logits, target)
        raw = net.backward(images_used, upstream).wrt_input
    else:
        raw = np.empty_like(images_used)
        for i in range(images_used.shape[0]):
            logits = net.forward(images_used[i : i + 1])
            _, upstream = evaluate_loss(loss_cfg, logits, target[i : i + 1])
            raw[i] = net.backward(images_used[i : i + 1], upstream).wrt_input[0]

    norms = np.sqrt(np.sum(raw.reshape(raw.shape[0], -1) ** 2, axis=1))
    ok = norms >= _DEGENERATE_NORM
    if not np.any(ok):
        return None
    raw = raw[ok]
    norms = norms[ok]
    keep = keep[ok]

    # one ascent step inside the epsilon ball, then rescale to norm l; the
    # clip keeps the step bounded, the rescale fixes the output distance
    clip = np.minimum(1.0, cfg.epsilon / norms)
    d = raw * clip[:, None, None, None]
    d_norm = norms * clip
    unit = d / d_norm[:, None, None, None]
    return images_used[ok] + cfg.l * unit, keep


# ---------------------------------------------------------------------------
# mixup


def mixup_pair(x_i, y_i, x_k, y_k, lam):
    """Convex combination of two images and their label fields."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_k = np.asarray(x_k, dtype=np.float64)
    y_i = np.asarray(y_i, dtype=np.float64)
    y_k = np.asarray(y_k, dtype=np.float64)
    if x_i.shape != x_k.shape or y_i.shape != y_k.shape:
        raise InvalidInputError("mixup inputs must share shapes")
    if not 0.0 <= lam <= 1.0:
        raise DomainError("lambda must lie in [0, 1]")
    mixed_x = lam * x_i + (1.0 - lam) * x_k
    mixed_y = lam * y_i + (1.0 - lam) * y_k
    return mixed_x, mixed_y


def asym_mixup_label(y_i, y_k, lam, m, r):
    """Hard per-pixel labels for an asymmetric mixup pair.

    Where both sides agree, the shared label wins. Where exactly one side is
    rare, that side's label wins if its mixing weight clears the margin m
    strictly; otherwise the pixel gets a zero row, which downstream losses
    mask out. r is the per-class rarity vector; a pixel counts as rare when
    label . r equals 1.
    """
    y_i = np.asarray(y_i, dtype=np.float64)
    y_k = np.asarray(y_k, dtype=np.float64)
    if y_i.shape != y_k.shape:
        raise InvalidInputError("label fields must share shapes")
    if not 0.0 <= lam <= 1.0:
        raise DomainError("lambda must lie in [0, 1]")
    if not 0.0 <= m < 1.0:
        raise DomainError("margin m must lie in [0, 1)")
    r = validate_rarity(r, y_i.shape[-1])

    a_i = y_i @ r
    a_k = y_k @ r
    same = np.all(y_i == y_k, axis=-1)
    take_i = same | ((lam > m) & (a_i * (1.0 - a_k) == 1.0))
    take_k = (~same) & ((1.0 - lam > m) & (a_k * (1.0 - a_i) == 1.0))
    out = np.zeros_like(y_i)
    out[take_i] = y_i[take_i]
    out[take_k] = y_k[take_k]
    return out


# ---------------------------------------------------------------------------
# augmentation


def hflip(patch, labels):
    """Mirror a patch and its label mask along the width axis."""
    return patch[:, ::-1].copy(), labels[:, ::-1].copy()


def apply_augmentation(patch, labels, cfg, rng, r):
    """Maybe transform one patch: flip coin + intensity shift, probability by content.

    patch is (h, w, channels), labels an integer class mask (h, w). The
    transform probability is cfg.p_fg when any pixel's class is rare under r,
    else cfg.p_bg. Untransformed patches pass through unchanged.
    """
    patch = np.asarray(patch)
    labels = np.asarray(labels)
    if patch.ndim != 3 or labels.ndim != 2 or patch.shape[:2] != labels.shape:
        raise InvalidInputError("expected patch (h, w, c) with label mask (h, w)")
    r = np.asarray(r, dtype=np.float64)
    rare_present = bool(np.any(r[labels] > 0.0))
    p = cfg.p_fg if rare_present else cfg.p_bg
    if rng.random() >= p:
        return patch, labels
    if cfg.flip and rng.random() < 0.5:
        patch, labels = hflip(patch, labels)
    else:
        patch = patch.copy()
    if cfg.intensity_shift > 0:
        patch = patch + rng.uniform(-cfg.intensity_shift, cfg.intensity_shift)
    return patch, labels
