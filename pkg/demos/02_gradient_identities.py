"""The re-weighting identities behind the margin and focal losses.

Both losses look like modified cross-entropies, but their logit gradients are
exactly the plain CE residual (p - y) rescaled by a per-pixel weight:

    margin CE:  dL/dz = q - y            = w_margin * (p - y)
    focal CE:   dL/dz = w_focal * (p - y)

where q is the softmax of the margin-shifted logits. So both interventions
are gradient re-weightings: they change how hard each pixel pushes, never
the direction it pushes. This script confirms the identities numerically and
against central finite differences.
"""

import numpy as np

from imbaseg import focal_weight, label_residual, losses, margin_weight, shifted_softmax, softmax

rng = np.random.default_rng(42)
N, C = 2000, 3
logits = rng.normal(scale=2.0, size=(N, C))
labels = np.eye(C)[rng.integers(0, C, size=N)]
m, gamma = 1.5, 2.0

# margin CE with r=None treats every class as rare (full shift)
_, grad = losses.margin_ce_loss(logits, labels, m=m)
q = shifted_softmax(logits, labels, m)
p = softmax(logits)

lhs = label_residual(q, labels)                      # q - y, cancellation-free
w = margin_weight(logits, labels, m)                 # closed-form scalar per pixel
rhs = w[:, None] * label_residual(p, labels)         # w * (p - y)
rel = np.abs(lhs - rhs).max() / np.abs(rhs).max()
print(f"margin identity   q - y == w_margin (p - y):  max rel err {rel:.3e} over {N} pixels")
assert np.allclose(grad, lhs / N)  # the loss returns the mean-normalised gradient

_, fgrad = losses.focal_ce_loss(logits, labels, gamma=gamma)
p_true = (p * labels).sum(axis=1)
wf = focal_weight(p_true, gamma)
rhs_f = wf[:, None] * label_residual(p, labels)
rel_f = np.abs(fgrad * N - rhs_f).max() / max(np.abs(rhs_f).max(), 1e-300)
print(f"focal identity    dL/dz == w_focal (p - y):   max rel err {rel_f:.3e}")

# finite-difference cross-check on a handful of coordinates
eps = 1e-6
small = rng.normal(size=(4, C))
small_y = np.eye(C)[[0, 1, 2, 0]]
for name, fn in [
    ("marginCE", lambda z: losses.margin_ce_loss(z, small_y, m=m)),
    ("focalCE", lambda z: losses.focal_ce_loss(z, small_y, gamma=gamma)),
    ("combinedCE", lambda z: losses.combined_ce_loss(z, small_y, m=m, gamma=gamma)),
]:
    _, g = fn(small)
    fd = np.zeros_like(small)
    for idx in np.ndindex(small.shape):
        zp, zm = small.copy(), small.copy()
        zp[idx] += eps
        zm[idx] -= eps
        fd[idx] = (fn(zp)[0].total - fn(zm)[0].total) / (2 * eps)
    print(f"{name:<11} analytic vs central differences:   max abs err {np.abs(g - fd).max():.3e}")

print()
print("weight profiles at a glance (true-class probability p):")
print(f"{'p':>6} {'w_focal(g=2)':>14} {'note'}")
for pt in (0.05, 0.5, 0.9, 0.99):
    print(f"{pt:>6} {focal_weight(np.array([pt]), 2.0)[0]:>14.4f}   {'hard pixel kept' if pt < 0.5 else 'easy pixel damped'}")
