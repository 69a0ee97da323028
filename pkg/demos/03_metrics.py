"""Segmentation metrics on hand-drawn masks.

Covers the confusion-count scores (DSC, sensitivity, precision, specificity,
F-beta), the 95th-percentile Hausdorff distance, and largest-component
postprocessing with its precision guarantee.
"""

import numpy as np

from imbaseg.metrics import confusion, hausdorff95, imbalance_ratio, largest_component, scores

gt = np.zeros((12, 12), dtype=np.int64)
gt[3:7, 3:7] = 1  # one 4x4 square of foreground

pred = np.zeros_like(gt)
pred[4:8, 4:8] = 1    # overlapping square, shifted by one pixel
pred[10, 10] = 1      # plus a far-away speckle

c = confusion(pred, gt)
s = scores(c)
print(f"counts: {c}")
print(f"dsc {s.dsc:.4f}  sen {s.sensitivity:.4f}  prc {s.precision:.4f}  "
      f"spc {s.specificity:.4f}  f2 {scores(c, beta=2.0).fbeta:.4f}")

print(f"hd95(pred, gt) = {hausdorff95(pred, gt):.4f}  (the speckle drags the tail)")

# largest_component keeps the biggest 4-connected blob and drops the speckle.
# With a single-component ground truth this can only remove predictions, and
# what it removes is disjoint from the kept blob, so precision never drops.
cleaned = largest_component(pred)
s2 = scores(confusion(cleaned, gt))
print(f"after largest_component: prc {s.precision:.4f} -> {s2.precision:.4f}, "
      f"hd95 -> {hausdorff95(cleaned, gt):.4f}")
assert s2.precision >= s.precision

# class imbalance of a stack of masks, the quantity the experiments sweep;
# the all-background image triggers a warning and an infinite ratio
masks = np.stack([gt, np.roll(gt, 2, axis=0), np.zeros_like(gt)])
stats = imbalance_ratio(masks)
print(f"imbalance ratios per image: {np.round(stats.ratios, 1)}  "
      f"(mean {stats.mean:.1f}, {stats.n_infinite} all-background image(s))")
