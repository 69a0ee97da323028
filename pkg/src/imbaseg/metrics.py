"""Binary segmentation metrics and mask post-processing.

Scores follow one degeneracy rule across the overlap metrics: a prediction
with TP = FP = FN = 0 (both masks empty) scores 1, and TP = 0 with any error
mass scores 0. Specificity uses TN / (TN + FP) with the empty-denominator
case scoring 1.

The 95th-percentile Hausdorff distance pools the directed surface distances
of both masks into one array and takes a single percentile with linear
interpolation. Surfaces are 4-connected borders; pixels beyond the image
edge count as background, so mask pixels on the edge are border pixels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DomainError, EmptyMaskError, InvalidInputError

__all__ = [
    "METRICS_CSV_COLUMNS",
    "ConfusionCounts",
    "ImbalanceStats",
    "SegScores",
    "confusion",
    "hausdorff95",
    "imbalance_ratio",
    "largest_component",
    "scores",
]

# run-level result schema shared with the harness; wall_time is appended last
# so determinism comparisons can drop it by position
METRICS_CSV_COLUMNS = (
    "run_id",
    "seed",
    "loss_kind",
    "train_fraction",
    "dsc",
    "sen",
    "prc",
    "spc",
    "hd95_raw",
    "hd95_post",
)


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass
class SegScores:
    dsc: float
    sensitivity: float
    precision: float
    specificity: float
    fbeta: float
    hd95: float | None = None


@dataclass
class ImbalanceStats:
    """Per-image background/foreground pixel ratios; empty-foreground images
    are reported as infinite and excluded from mean/std."""

    ratios: np.ndarray
    mean: float
    std: float
    n_infinite: int


def _as_mask(mask, name):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-d mask, got shape {mask.shape}")
    if mask.dtype != bool:
        vals = np.unique(mask)
        if not np.all(np.isin(vals, (0, 1))):
            raise InvalidInputError(f"{name} must be binary")
        mask = mask.astype(bool)
    return mask


def confusion(pred, gt):
    """Pixel confusion counts between two binary masks of the same shape."""
    pred = _as_mask(pred, "pred")
    gt = _as_mask(gt, "gt")
    if pred.shape != gt.shape:
        raise InvalidInputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(np.count_nonzero(~pred & ~gt))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def _degenerate(tp, err):
    return 1.0 if err == 0 else 0.0


def scores(counts, beta=1.0):
    """Overlap scores from confusion counts.

    DSC is assembled from sensitivity and precision through the harmonic
    identity 2sp/(s+p), which the counts make exact whenever TP > 0.
    """
    if beta <= 0:
        raise DomainError("beta must be positive")
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    if min(tp, fp, fn, tn) < 0:
        raise InvalidInputError("confusion counts must be non-negative")

    if tp == 0:
        sen = prc = dsc = _degenerate(tp, fp + fn)
        fbeta = sen
    else:
        sen = tp / (tp + fn)
        prc = tp / (tp + fp)
        dsc = 2.0 * sen * prc / (sen + prc)
        b2 = beta * beta
        fbeta = (1.0 + b2) * tp / ((1.0 + b2) * tp + b2 * fn + fp)
    spc = 1.0 if tn + fp == 0 else tn / (tn + fp)
    return SegScores(dsc=dsc, sensitivity=sen, precision=prc, specificity=spc, fbeta=fbeta)


def _border(mask):
    # 4-connected erosion with background beyond the edge: an object pixel is
    # border when any 4-neighbor (or the outside) is background
    eroded = ndimage.binary_erosion(
        mask, structure=ndimage.generate_binary_structure(2, 1), border_value=0
    )
    return mask & ~eroded


def hausdorff95(pred, gt):
    """95th-percentile symmetric surface distance between two binary masks."""
    pred = _as_mask(pred, "pred")
    gt = _as_mask(gt, "gt")
    if pred.shape != gt.shape:
        raise InvalidInputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    if not pred.any():
        raise EmptyMaskError("pred mask is empty, surface distance undefined")
    if not gt.any():
        raise EmptyMaskError("gt mask is empty, surface distance undefined")

    border_pred = _border(pred)
    border_gt = _border(gt)
    d_to_gt = ndimage.distance_transform_edt(~border_gt)[border_pred]
    d_to_pred = ndimage.distance_transform_edt(~border_pred)[border_gt]
    pooled = np.concatenate([d_to_gt, d_to_pred])
    return float(np.percentile(pooled, 95))


def imbalance_ratio(masks):
    """Background-to-foreground pixel ratio statistics over a dataset.

    `masks` is an iterable of 2-d masks (any nonzero pixel is foreground).
    Images without foreground get ratio inf, a warning, and no weight in the
    mean/std; std is the population standard deviation.
    """
    ratios = []
    n_inf = 0
    for i, mask in enumerate(masks):
        mask = np.asarray(mask)
        fg = int(np.count_nonzero(mask))
        bg = mask.size - fg
        if fg == 0:
            warnings.warn(f"image {i} has no foreground pixels, ratio is infinite")
            ratios.append(np.inf)
            n_inf += 1
        else:
            ratios.append(bg / fg)
    ratios = np.asarray(ratios, dtype=np.float64)
    finite = ratios[np.isfinite(ratios)]
    if finite.size == 0:
        raise EmptyMaskError("no image with foreground pixels")
    return ImbalanceStats(
        ratios=ratios,
        mean=float(finite.mean()),
        std=float(finite.std()),
        n_infinite=n_inf,
    )


def largest_component(mask, connectivity=4):
    """Keep only the largest connected foreground component.

    Ties keep the component whose first pixel comes earliest in raster order
    (the smallest label). An empty mask stays empty.
    """
    mask = _as_mask(mask, "mask")
    if connectivity == 4:
        structure = ndimage.generate_binary_structure(2, 1)
    elif connectivity == 8:
        structure = ndimage.generate_binary_structure(2, 2)
    else:
        raise DomainError("connectivity must be 4 or 8")
    labeled, n = ndimage.label(mask, structure=structure)
    if n == 0:
        return np.zeros_like(mask)
    sizes = np.bincount(labeled.ravel())
    sizes[0] = 0
    # labels are assigned in raster order, argmax returns the first maximum
    return labeled == int(np.argmax(sizes))
