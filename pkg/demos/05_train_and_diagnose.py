"""Train a small net on generated data, score it, and read its logit shift.

This walks the same path the CLI takes, but through the library API: one
CellSpec describes a (loss, data fraction, seed) training cell; run_cell
writes a checkpoint, a report, and a logit-shift diagnostic. Here we call
the pieces directly to keep everything in memory.
"""

import tempfile
from pathlib import Path

import numpy as np

from imbaseg.data import TaskSpec, generate, load_split
from imbaseg.diagnostics import collect_logits, logit_shift
from imbaseg.harness import CellSpec, NetSpec, OptConfig, evaluate_model, train_model
from imbaseg.losses import LossConfig

root = Path(tempfile.mkdtemp())
spec = TaskSpec(height=24, width=24, n_train=8, n_test=4,
                blob_count=(1, 1), blob_radius=(2.0, 3.0), ratio_band=(22.0, 32.0))
manifest = generate(spec, root / "data", master_seed=3)

cell = CellSpec(
    name="demo", manifest=manifest, out_dir=root / "run",
    loss=LossConfig(kind="CE"),
    opt=OptConfig(steps=250, batch_size=4, patch_size=12, fg_fraction=0.5),
    net=NetSpec(hidden=(6, 8)),
    fraction=1.0, seed=0,
)

train_images, train_masks = load_split(manifest, "train")
test_images, test_masks = load_split(manifest, "test")

net, curve, diverged = train_model(train_images, train_masks, cell)
print(f"trained {cell.stem}: loss {curve[0]:.3f} -> {curve[-1]:.3f} over {len(curve)} steps"
      + (" (diverged!)" if diverged is not None else ""))

per_image, summary = evaluate_model(net, test_images, test_masks)
print(f"test means: dsc {summary['dsc']:.3f}  sen {summary['sen']:.3f}  "
      f"prc {summary['prc']:.3f}  spc {summary['spc']:.5f}")
print(f"postprocessed: dsc {summary['dsc_post']:.3f}  prc {summary['prc_post']:.3f}")

# the logit-shift diagnostic compares per-class logit distributions between
# the training images and unseen test images; delta_z is the drop in the
# true-class logit mean from train to test
report = logit_shift(
    collect_logits(net, train_images, train_masks, "train"),
    collect_logits(net, test_images, test_masks, "test"),
)
for c, stats in sorted(report.classes.items()):
    print(f"class {c}: true-class margin train {stats['mean_margin_train']:+.3f} "
          f"-> test {stats['mean_margin_test']:+.3f} (delta_z {stats['delta_z']:+.3f}), "
          f"test crossing rate {stats['crossing_rate_test']:.3f}")

# even at this toy scale the rare class is the one whose margin collapses on
# unseen images (negative delta_z, high crossing rate) while the abundant
# background holds steady; the experiment harness measures exactly this
# asymmetry, at scale, as a function of training-set size
