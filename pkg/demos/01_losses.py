"""Tour of the loss zoo on a single small batch.

Every loss takes (N, C) logits (probability losses take softmax output) and
one-hot labels, and returns (LossValue, gradient wrt its input). The second
half checks the reduction lattice: each specialised loss collapses back to
its parent when the extra knob is switched off.
"""

import numpy as np

from imbaseg import losses, softmax

rng = np.random.default_rng(0)
N, C = 6, 2
logits = rng.normal(size=(N, C))
labels = np.eye(C)[rng.integers(0, C, size=N)]
probs = softmax(logits)

# rarity vector: class 1 is the rare one
r = np.array([0.0, 1.0])

print("loss values on one random batch")
print(f"{'kind':<22} {'total':>10}")
rows = [
    ("CE", losses.ce_loss(logits, labels)),
    ("DSC", losses.dsc_loss(probs, labels)),
    ("marginCE m=1", losses.margin_ce_loss(logits, labels, m=1.0, r=r)),
    ("marginDSC m=1", losses.margin_dsc_loss(logits, labels, m=1.0, r=r)),
    ("focalCE g=2", losses.focal_ce_loss(logits, labels, gamma=2.0)),
    ("focalCE g=2 asym", losses.focal_ce_loss(logits, labels, gamma=2.0, r=r)),
    ("focalDSC g=2 asym", losses.focal_dsc_loss(probs, labels, gamma=2.0, r=r)),
    ("combinedCE m=1 g=2", losses.combined_ce_loss(logits, labels, m=1.0, gamma=2.0, r=r)),
    ("combinedDSC m=1 g=2", losses.combined_dsc_loss(logits, labels, m=1.0, gamma=2.0, r=r)),
    ("fbeta b=2", losses.fbeta_loss(probs, labels, beta=2.0)),
]
for kind, (value, _) in rows:
    print(f"{kind:<22} {value.total:>10.6f}")

print()
print("reduction lattice (max |difference| from the parent loss)")

ce_val, ce_grad = losses.ce_loss(logits, labels)
dsc_val, dsc_grad = losses.dsc_loss(probs, labels)


def gap(pair, ref_val, ref_grad):
    value, grad = pair
    return max(abs(value.total - ref_val.total), np.abs(grad - ref_grad).max())


checks = [
    ("marginCE(m=0)      == CE ", gap(losses.margin_ce_loss(logits, labels, m=0.0), ce_val, ce_grad)),
    ("marginCE(r=0)      == CE ", gap(losses.margin_ce_loss(logits, labels, m=1.0, r=np.zeros(C)), ce_val, ce_grad)),
    ("focalCE(gamma=0)   == CE ", gap(losses.focal_ce_loss(logits, labels, gamma=0.0), ce_val, ce_grad)),
    ("focalCE(r=1)       == CE ", gap(losses.focal_ce_loss(logits, labels, gamma=2.0, r=np.ones(C)), ce_val, ce_grad)),
    ("focalDSC(gamma=0)  == DSC", gap(losses.focal_dsc_loss(probs, labels, gamma=0.0), dsc_val, dsc_grad)),
    ("fbeta(beta=1)      == DSC", gap(losses.fbeta_loss(probs, labels, beta=1.0), dsc_val, dsc_grad)),
]
m_val, m_grad = losses.margin_ce_loss(logits, labels, m=1.0, r=r)
checks.append((
    "combinedCE(gamma=0) == marginCE",
    gap(losses.combined_ce_loss(logits, labels, m=1.0, gamma=0.0, r=r), m_val, m_grad),
))
for name, diff in checks:
    print(f"  {name}  {diff:.2e}")

print()
print("evaluate_loss dispatches on a LossConfig, the harness entry point:")
cfg = losses.LossConfig(kind="combinedCE", m=1.0, gamma=2.0, asymmetric=True, r=r)
value, upstream = losses.evaluate_loss(cfg, logits, labels)
print(f"  combinedCE via config: total {value.total:.6f}, per-class {value.per_class}")
print(f"  upstream gradient shape {upstream.shape} feeds straight into the net backward pass")
