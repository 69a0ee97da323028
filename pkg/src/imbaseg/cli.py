"""Command-line front end: gen-data, train, eval, diagnose, sweep.

Exit codes: 0 on success, 2 for config/schema errors (the message carries the
dotted path of the offending field), 3 for runtime failures such as missing
or malformed data files and diverged single-run training. The IMBASEG_LOG_LEVEL
environment variable (DEBUG/INFO/WARNING/ERROR) controls log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from .data import TaskSpec, generate, load_manifest, load_split, subsample_training
from .diagnostics import collect_logits, export_histograms, logit_shift
from .errors import ConfigError, DomainError, FormatError, InvalidInputError, TrainingDivergence
from .harness import build_cells, evaluate_model, load_run_config, load_sweep_config, run_cells, write_rows
from .net import load_checkpoint

log = logging.getLogger("imbaseg.cli")

_TASK_KEYS = {
    "height": int, "width": int, "channels": int, "n_train": int, "n_test": int,
    "blob_count": list, "blob_radius": list, "blob_intensity": float,
    "intensity_jitter": float, "texture_std": float, "bg_std": float,
    "ratio_band": list,
}


def _load_task_spec(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError("", f"no such task spec file: {path}")
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"task spec is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("task", "expected an object")
    kwargs = {}
    for key, value in obj.items():
        if key not in _TASK_KEYS:
            raise ConfigError(f"task.{key}", "unknown key")
        want = _TASK_KEYS[key]
        if want is list:
            if not isinstance(value, list) or len(value) != 2:
                raise ConfigError(f"task.{key}", "expected a [lo, hi] pair")
            kwargs[key] = tuple(value)
        elif want is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"task.{key}", "expected an integer")
            kwargs[key] = value
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"task.{key}", "expected a number")
            kwargs[key] = float(value)
    try:
        return TaskSpec(**kwargs)
    except DomainError as exc:
        raise ConfigError("task", str(exc)) from exc


def _cmd_gen_data(args):
    spec = _load_task_spec(args.spec)
    manifest = generate(spec, args.out, master_seed=args.seed)
    print(manifest)
    return 0


def _cmd_train(args):
    cfg = load_run_config(args.config)
    cells = build_cells(cfg, out_dir=args.out)
    rows = run_cells(cells, jobs=args.jobs)
    out = Path(args.out) if args.out else cfg.out_dir
    csv_path = write_rows(rows, out / "results.csv")
    print(csv_path)
    diverged = [row["seed"] for row in rows if math.isnan(row["dsc"])]
    if diverged:
        print(f"error: training diverged for seed(s) {diverged}", file=sys.stderr)
        return 3
    return 0


def _subset_records(manifest, fraction, seed):
    _, records = load_manifest(manifest)
    if fraction < 1.0:
        records = subsample_training(records, fraction, seed=seed)
    return records


def _cmd_eval(args):
    net = load_checkpoint(args.checkpoint)
    records = _subset_records(args.manifest, args.fraction, args.seed)
    images, masks = load_split(args.manifest, args.split, records=records)
    per_image, _ = evaluate_model(net, images, masks)
    stage, hd_key = ("post", "hd95_post") if args.post == "on" else ("pre", "hd95_raw")
    with open(args.out, "w") as fh:
        fh.write("image_index,dsc,sen,prc,spc,fbeta,hd95\n")
        for row in per_image:
            s = row[stage]
            fields = [row["index"], s["dsc"], s["sen"], s["prc"], s["spc"], s["fbeta"], row[hd_key]]
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in fields) + "\n")
    print(args.out)
    return 0


def _cmd_diagnose(args):
    net = load_checkpoint(args.checkpoint)
    records = _subset_records(args.manifest, args.fraction, args.seed)
    train_images, train_masks = load_split(args.manifest, "train", records=records)
    test_images, test_masks = load_split(args.manifest, "test")
    shift = logit_shift(
        collect_logits(net, train_images, train_masks, "train", seed=args.seed),
        collect_logits(net, test_images, test_masks, "test", seed=args.seed),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "logit_shift.json"
    shift.to_json(report_path)
    export_histograms(shift, out / "logit_shift_hist.csv")
    print(report_path)
    return 0


def _cmd_sweep(args):
    cfg = load_sweep_config(args.grid)
    cells = build_cells(cfg, out_dir=args.out)
    rows = run_cells(cells, jobs=args.jobs)
    out = Path(args.out) if args.out else cfg.out_dir
    csv_path = write_rows(rows, out / "results.csv")
    print(csv_path)
    diverged = [row["run_id"] + f"/s{row['seed']}" for row in rows if math.isnan(row["dsc"])]
    if diverged:
        # recorded in the CSV as NaN rows; the sweep itself still succeeded
        print(f"note: {len(diverged)} cell(s) diverged: {', '.join(diverged)}", file=sys.stderr)
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="imbaseg",
        description="Synthetic imbalanced-segmentation experiments: data, training, evaluation, diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset from a task spec file")
    p.add_argument("--spec", required=True, help="task spec JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train one configuration across its seeds")
    p.add_argument("--config", required=True, help="run config JSON file")
    p.add_argument("--out", default=None, help="output directory (overrides config out_dir)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default 1)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True, help="checkpoint path from train")
    p.add_argument("--manifest", required=True, help="dataset manifest.jsonl")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--post", choices=("on", "off"), default="off",
                   help="apply largest-component cleanup before scoring")
    p.add_argument("--out", default="scores.csv", help="output CSV path")
    p.add_argument("--fraction", type=float, default=1.0,
                   help="training subset fraction to reproduce (train split only)")
    p.add_argument("--seed", type=int, default=0, help="subset seed matching the training run")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("diagnose", help="logit-shift report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--fraction", type=float, default=1.0,
                   help="training subset fraction to reproduce")
    p.add_argument("--seed", type=int, default=0, help="subset seed matching the training run")
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("sweep", help="run a variants x fractions x seeds grid")
    p.add_argument("--grid", required=True, help="sweep grid JSON file")
    p.add_argument("--out", default=None, help="output directory (overrides grid out_dir)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default 1)")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None):
    level = os.environ.get("IMBASEG_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        where = f" at {exc.path}" if exc.path else ""
        print(f"config error{where}: {exc.message}", file=sys.stderr)
        return 2
    except (FormatError, InvalidInputError, DomainError, TrainingDivergence, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
