"""Logit-shift diagnostics between training and test data.

The phenomenon under study: with scarce training data for a rare class, the
rare class's logits shift between training and test pixels, so a margin that
looks comfortable on training data collapses or crosses zero on test data
while the abundant class barely moves.

The scalar tracked per pixel is the signed margin

    m = z_true - max over other classes of z_j,

which is positive exactly when the pixel is classified correctly and is
invariant to a common additive shift of the pixel's logit vector. Per class
and split the report records the sample count, the mean logit vector, the
per-coordinate variance, the mean signed margin, and the crossing rate
(fraction of pixels whose argmax is not the true class). The headline number
is delta_z = |mean margin on test| - |mean margin on train|: strongly
negative for the rare class signals the collapse.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "LogitSamples",
    "LogitShiftReport",
    "collect_logits",
    "export_histograms",
    "logit_shift",
]

DEFAULT_BIN_EDGES = np.linspace(-20.0, 20.0, 81)


@dataclass
class LogitSamples:
    """Per-pixel logit vectors with their true classes, tagged by split."""

    logits: np.ndarray  # (n, classes)
    classes: np.ndarray  # (n,) int
    split: str

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.classes = np.asarray(self.classes)
        if self.logits.ndim != 2 or self.classes.shape != (self.logits.shape[0],):
            raise InvalidInputError("need logits (n, classes) with classes (n,)")


@dataclass
class LogitShiftReport:
    """Per-class shift statistics; `classes` maps class index to a stats dict."""

    classes: dict
    bin_edges: np.ndarray

    def as_dict(self):
        out = {"classes": {}, "bin_edges": _edges_list(self.bin_edges)}
        for c, stats in self.classes.items():
            entry = {}
            for key, value in stats.items():
                if isinstance(value, np.ndarray):
                    entry[key] = value.tolist()
                else:
                    entry[key] = value
            out["classes"][str(c)] = entry
        return out

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=1)
            fh.write("\n")


def _edges_list(edges):
    return [float(e) for e in edges]


def signed_margin(logits, classes):
    """z_true minus the best competing logit, per row."""
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    rows = np.arange(n)
    z_true = logits[rows, classes]
    masked = logits.copy()
    masked[rows, classes] = -np.inf
    return z_true - masked.max(axis=-1)


def collect_logits(net, images, masks, split, cap=10000, seed=0):
    """Forward a split and gather per-pixel logit samples, capped per class.

    images is (n, h, w, channels), masks (n, h, w) integer class labels. At
    most `cap` pixels per class are kept, chosen without replacement by a
    generator seeded from (seed, class), so the sample set is reproducible
    regardless of how many classes exist. cap = 0 keeps nothing.
    """
    if cap < 0:
        raise InvalidInputError("cap must be non-negative")
    images = np.asarray(images, dtype=np.float64)
    masks = np.asarray(masks)
    if images.ndim != 4 or masks.shape != images.shape[:3]:
        raise InvalidInputError("need images (n, h, w, c) with masks (n, h, w)")

    logits = net.forward(images).reshape(-1, net.n_classes)
    flat = masks.reshape(-1).astype(np.int64)

    keep_parts = []
    class_parts = []
    for c in range(net.n_classes):
        idx = np.flatnonzero(flat == c)
        if idx.size == 0:
            warnings.warn(f"class {c} absent from split {split!r}")
            continue
        if cap == 0:
            continue
        if idx.size > cap:
            rng = np.random.default_rng([seed, c])
            idx = np.sort(rng.choice(idx, size=cap, replace=False))
        keep_parts.append(logits[idx])
        class_parts.append(np.full(idx.size, c, dtype=np.int64))

    if keep_parts:
        kept = np.concatenate(keep_parts)
        classes = np.concatenate(class_parts)
    else:
        kept = np.empty((0, net.n_classes))
        classes = np.empty(0, dtype=np.int64)
    return LogitSamples(logits=kept, classes=classes, split=split)


def _split_stats(samples, cls, edges):
    sel = samples.classes == cls
    z = samples.logits[sel]
    margins = signed_margin(z, np.full(int(sel.sum()), cls))
    hist, _ = np.histogram(margins, bins=edges)
    return {
        "count": int(z.shape[0]),
        "mean_logit": z.mean(axis=0),
        "var_logit": z.var(axis=0),
        "mean_margin": float(margins.mean()),
        # argmax semantics, so this is exactly 1 - per-class pixel accuracy
        "crossing_rate": float(np.mean(np.argmax(z, axis=-1) != cls)),
        "histogram": hist,
    }


def logit_shift(train, test, bin_edges=None):
    """Compare margins between splits, class by class.

    Classes present in only one split are omitted with a warning. Histogram
    edges are extended by unbounded outermost bins so every sample lands in
    some bin and file counts always sum to the sample counts.
    """
    if bin_edges is None:
        bin_edges = DEFAULT_BIN_EDGES
    inner = np.asarray(bin_edges, dtype=np.float64)
    if inner.ndim != 1 or inner.size < 2 or np.any(np.diff(inner) <= 0):
        raise InvalidInputError("bin_edges must be a strictly increasing 1-d array")
    edges = np.concatenate([[-np.inf], inner, [np.inf]])

    train_classes = set(np.unique(train.classes).tolist())
    test_classes = set(np.unique(test.classes).tolist())
    for c in sorted(train_classes ^ test_classes):
        which = "test" if c in train_classes else "train"
        warnings.warn(f"class {c} missing from the {which} split, omitted")

    per_class = {}
    for c in sorted(train_classes & test_classes):
        s_train = _split_stats(train, c, edges)
        s_test = _split_stats(test, c, edges)
        per_class[int(c)] = {
            "count_train": s_train["count"],
            "count_test": s_test["count"],
            "mean_logit_train": s_train["mean_logit"],
            "mean_logit_test": s_test["mean_logit"],
            "var_logit_train": s_train["var_logit"],
            "var_logit_test": s_test["var_logit"],
            "mean_margin_train": s_train["mean_margin"],
            "mean_margin_test": s_test["mean_margin"],
            "crossing_rate_train": s_train["crossing_rate"],
            "crossing_rate_test": s_test["crossing_rate"],
            "delta_z": abs(s_test["mean_margin"]) - abs(s_train["mean_margin"]),
            "histogram_train": s_train["histogram"],
            "histogram_test": s_test["histogram"],
        }
    return LogitShiftReport(classes=per_class, bin_edges=edges)


def export_histograms(report, path):
    """Write the report's margin histograms as CSV rows.

    Columns: class, split, bin_left, bin_right, count. Outermost bins carry
    -inf/inf bounds; counts per class/split sum to the report counts.
    """
    edges = report.bin_edges
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "split", "bin_left", "bin_right", "count"])
        for c, stats in sorted(report.classes.items()):
            for split in ("train", "test"):
                hist = stats[f"histogram_{split}"]
                for i, count in enumerate(hist):
                    writer.writerow([c, split, repr(float(edges[i])), repr(float(edges[i + 1])), int(count)])
