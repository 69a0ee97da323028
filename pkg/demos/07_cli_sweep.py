"""Drive the command line end to end: gen-data, sweep, eval, diagnose.

Same binary the shell sees (imbaseg ...), called in-process here so the demo
is one file. The sweep grid crosses loss variants with training fractions
and seeds and writes one CSV row per cell; rerunning a grid reproduces the
CSV exactly except for the wall_time column.
"""

import csv
import json
import tempfile
from pathlib import Path

from imbaseg.cli import main

root = Path(tempfile.mkdtemp())

task = {
    "height": 24, "width": 24, "n_train": 8, "n_test": 4,
    "blob_count": [1, 1], "blob_radius": [2.0, 3.0], "ratio_band": [22.0, 32.0],
}
(root / "task.json").write_text(json.dumps(task))
assert main(["gen-data", "--spec", str(root / "task.json"), "--out", str(root / "data"), "--seed", "3"]) == 0

grid = {
    "data": {"manifest": str(root / "data" / "manifest.jsonl")},
    "rarity": [0.0, 1.0],
    "optimizer": {"steps": 120, "batch_size": 4, "patch_size": 12},
    "net": {"hidden": [6, 8]},
    "variants": [
        {"name": "ce", "loss": {"kind": "CE"}},
        {"name": "asym-focal", "loss": {"kind": "focalCE", "gamma": 2.0, "asymmetric": True}},
    ],
    "fractions": [1.0, 0.5],
    "seeds": [0, 1],
    "out_dir": str(root / "sweep"),
}
(root / "grid.json").write_text(json.dumps(grid))
assert main(["sweep", "--grid", str(root / "grid.json")]) == 0

with open(root / "sweep" / "results.csv", newline="") as fh:
    rows = list(csv.DictReader(fh))
print(f"\n{len(rows)} cells:")
print(f"{'run_id':<12} {'frac':>4} {'seed':>4} {'dsc':>7} {'sen':>7} {'prc':>7}")
for row in rows:
    print(f"{row['run_id']:<12} {float(row['train_fraction']):>4g} {row['seed']:>4} "
          f"{float(row['dsc']):>7.3f} {float(row['sen']):>7.3f} {float(row['prc']):>7.3f}")

# every cell leaves a checkpoint reusable by eval and diagnose
ckpt = root / "sweep" / "checkpoints" / "ce_f1_s0.ckpt"
assert main(["eval", "--checkpoint", str(ckpt), "--manifest", grid["data"]["manifest"],
             "--post", "on", "--out", str(root / "scores.csv")]) == 0
assert main(["diagnose", "--checkpoint", str(ckpt), "--manifest", grid["data"]["manifest"],
             "--out", str(root / "diag")]) == 0
print(f"\nper-image scores -> {root / 'scores.csv'}")
print(f"logit-shift report -> {root / 'diag' / 'logit_shift.json'}")
shift = json.loads((root / "diag" / "logit_shift.json").read_text())
print(f"foreground delta_z = {shift['classes']['1']['delta_z']:+.3f}")
