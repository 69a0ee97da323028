"""The three training-time regularizers: adversarial, mixup, augmentation.

Each one reshapes what the rare class looks like during training without
touching the loss itself. They compose freely; the harness applies
augmentation per patch, then mixup, then adversarial examples per batch.
"""

import numpy as np

from imbaseg.net import TinyNet
from imbaseg.regularizers import (
    AdvConfig,
    AugConfig,
    MixupConfig,
    adversarial_example,
    apply_augmentation,
    asym_mixup_label,
    mixup_pair,
)

rng = np.random.default_rng(1)
r = np.array([0.0, 1.0])  # class 1 is rare

# --- adversarial examples -------------------------------------------------
# perturb the input along the loss gradient restricted to rare pixels, with
# a fixed L2 step; the perturbed image trains with the original labels
net = TinyNet(in_channels=1, hidden=(4, 6), n_classes=2, seed=0)
image = rng.normal(size=(16, 16, 1))
labels = np.zeros((16, 16, 2))
labels[..., 0] = 1.0
labels[5:8, 5:8] = [0.0, 1.0]  # a small rare patch

cfg = AdvConfig(l=2.5, asymmetric=True)
perturbed = adversarial_example(net, image, labels, cfg, r=r)
print(f"adversarial step size ||x' - x||_2 = {np.linalg.norm(perturbed - image):.4f} (l = {cfg.l})")

no_rare = np.zeros_like(labels)
no_rare[..., 0] = 1.0
print(f"no rare pixels in the image -> {adversarial_example(net, image, no_rare, cfg, r=r)}  (skipped)")

# --- mixup ----------------------------------------------------------------
# images interpolate linearly (mixup_pair also blends the labels for the
# symmetric variant); the asymmetric variant replaces the blend with a hard
# per-pixel rule. Pixels whose two labels agree keep that label. A pixel
# that is rare on exactly one side is labelled rare when that side's mix
# weight exceeds the margin m strictly (the rare structure is clearly
# visible in the blend) and is skipped otherwise (zero label row, masked
# out of the loss): too faint to call rare, too tainted to call background.
x_i, x_k = rng.normal(size=(2, 4, 4, 1))
y_i = np.eye(2)[rng.integers(0, 2, size=(4, 4))]
y_k = np.eye(2)[rng.integers(0, 2, size=(4, 4))]
x_mix, y_blend = mixup_pair(x_i, y_i, x_k, y_k, 0.9)
print(f"symmetric label blend at lambda=0.9: unique rows {np.unique(y_blend.reshape(-1, 2), axis=0).tolist()}")

bg, fg = np.array([[[1.0, 0.0]]]), np.array([[[0.0, 1.0]]])
print("hard rule (m=0.2):  i\\k      bg      fg")
for lam in (0.9, 0.5, 0.1):
    cells = []
    for y_a in (bg, fg):
        for y_b in (bg, fg):
            out = asym_mixup_label(y_a, y_b, lam, m=0.2, r=r)[0, 0]
            cells.append("SKIP" if out.sum() == 0 else ("fg" if out[1] else "bg"))
    print(f"  lambda={lam:0.2f}       bg: {cells[0]:>4} {cells[1]:>4}   fg: {cells[2]:>4} {cells[3]:>4}")

# --- asymmetric augmentation ------------------------------------------------
# patches containing rare pixels are augmented (flip / intensity shift) with
# probability p_fg, pure-background patches with p_bg
aug = AugConfig(p_fg=1.0, p_bg=0.0, flip=True, intensity_shift=0.5)
patch = rng.normal(size=(8, 8, 1))
fg_mask = np.zeros((8, 8), dtype=np.int64)
fg_mask[2:4, 2:4] = 1

out, out_mask = apply_augmentation(patch, fg_mask, aug, rng, r)
print(f"foreground patch changed by augmentation: {not np.array_equal(out, patch)}")

out_bg, _ = apply_augmentation(patch, np.zeros((8, 8), dtype=np.int64), aug, rng, r)
print(f"background patch changed (p_bg=0): {not np.array_equal(out_bg, patch)}")
