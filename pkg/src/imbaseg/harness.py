"""Config-driven experiments: training cells, evaluation, diagnostics, sweeps.

A run config is a JSON object; a sweep grid is a JSON object holding shared
sections plus a list of loss/regularizer variants crossed with train
fractions and seeds. Schema (run config):

    {
      "data": {"manifest": "data/manifest.jsonl"},
      "train_fraction": 1.0,
      "rarity": [0.0, 1.0],
      "loss": {"kind": "CE", "m": 0.0, "gamma": 0.0, "beta": 1.0,
               "asymmetric": false, "dsc_epsilon": 1e-5},
      "adversarial": {"epsilon": 1e-5, "l": 10.0, "asymmetric": false},
      "mixup": {"alpha": 0.2, "m": 0.2, "asymmetric": false},
      "augmentation": {"p_fg": 0.5, "p_bg": 0.25, "flip": true,
                       "intensity_shift": 0.1},
      "optimizer": {"lr": 0.05, "momentum": 0.9, "steps": 3000,
                    "batch_size": 16, "patch_size": 32, "fg_fraction": 0.5},
      "net": {"hidden": [8, 16, 16], "n_classes": 2},
      "seeds": [0, 1, 2],
      "name": "ce",
      "out_dir": "runs/ce"
    }

The regularizer sections are optional; their presence enables them. A sweep
grid replaces loss/regularizers with "variants" (list of {name, loss,
adversarial?, mixup?, augmentation?}) and "train_fraction" with "fractions".
Relative paths are resolved against the config file's directory. Schema
violations raise ConfigError carrying the dotted path of the offending key.

Every cell (variant x fraction x seed) is self-contained: its training
subset, weight init, patch sequence, and augmentation draws depend only on
its own seed, never on grid position, so adding a variant or fraction to a
sweep does not perturb existing cells. The same seed gives every variant
the same subset, the same init, and the same patch stream, which makes
cross-variant comparisons paired.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import load_manifest, load_split, sample_patches, subsample_training
from .diagnostics import collect_logits, export_histograms, logit_shift
from .errors import ConfigError, DomainError, EmptyMaskError, InvalidInputError, TrainingDivergence
from .losses import LOSS_KINDS, LossConfig, evaluate_loss
from .metrics import METRICS_CSV_COLUMNS, confusion, hausdorff95, largest_component, scores
from .net import TinyNet, save_checkpoint, sgd_step
from .regularizers import AdvConfig, AugConfig, MixupConfig, adversarial_batch, apply_augmentation, asym_mixup_label

__all__ = [
    "RESULT_COLUMNS",
    "CellSpec",
    "NetSpec",
    "OptConfig",
    "RunConfig",
    "SweepConfig",
    "build_cells",
    "evaluate_model",
    "load_run_config",
    "load_sweep_config",
    "run_cell",
    "run_cells",
    "train_model",
    "write_rows",
]

log = logging.getLogger("imbaseg.harness")

RESULT_COLUMNS = METRICS_CSV_COLUMNS + ("wall_time",)

# rng substream tags; large offsets keep them clear of the per-class streams
# used by the diagnostics subsampler ([seed, class])
_STREAM_NET = 1001
_STREAM_PATCH = 1002
_STREAM_AUG = 1003
_STREAM_MIX = 1004


@dataclass
class OptConfig:
    lr: float = 0.05
    momentum: float = 0.9
    steps: int = 3000
    batch_size: int = 16
    patch_size: int = 32
    fg_fraction: float = 0.5

    def __post_init__(self):
        if self.lr <= 0:
            raise DomainError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError("momentum must lie in [0, 1)")
        if self.steps < 1 or self.batch_size < 1 or self.patch_size < 1:
            raise DomainError("steps, batch_size and patch_size must be positive")
        if not 0.0 <= self.fg_fraction <= 1.0:
            raise DomainError("fg_fraction must lie in [0, 1]")


@dataclass
class NetSpec:
    hidden: tuple = (8, 16, 16)
    n_classes: int = 2

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise DomainError("hidden must be a non-empty list of positive widths")
        if self.n_classes < 2:
            raise DomainError("need at least two classes")


@dataclass
class CellSpec:
    """One fully resolved (variant, fraction, seed) training cell."""

    name: str
    manifest: Path
    out_dir: Path
    loss: LossConfig
    opt: OptConfig
    net: NetSpec
    fraction: float
    seed: int
    rarity: np.ndarray | None = None
    adversarial: AdvConfig | None = None
    mixup: MixupConfig | None = None
    augmentation: AugConfig | None = None

    @property
    def stem(self):
        return f"{self.name}_f{self.fraction:g}_s{self.seed}"


@dataclass
class RunConfig:
    manifest: Path
    loss: LossConfig
    opt: OptConfig
    net: NetSpec
    seeds: tuple
    name: str
    out_dir: Path | None
    train_fraction: float = 1.0
    rarity: np.ndarray | None = None
    adversarial: AdvConfig | None = None
    mixup: MixupConfig | None = None
    augmentation: AugConfig | None = None


@dataclass
class SweepConfig:
    manifest: Path
    opt: OptConfig
    net: NetSpec
    variants: list = field(default_factory=list)
    fractions: tuple = (1.0,)
    seeds: tuple = (0,)
    rarity: np.ndarray | None = None
    out_dir: Path | None = None


# ---------------------------------------------------------------------------
# config parsing


_MISSING = object()

_NAME_OK = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-")


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def _table(obj, path):
    if not isinstance(obj, dict):
        raise ConfigError(path, f"expected an object, got {type(obj).__name__}")
    return obj


def _check_keys(table, allowed, path):
    for key in table:
        if key not in allowed:
            raise ConfigError(_join(path, key), "unknown key")


def _get(table, key, path, default=_MISSING):
    if key in table:
        return table[key]
    if default is _MISSING:
        raise ConfigError(_join(path, key), "required key missing")
    return default


def _num(value, path, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {type(value).__name__}")
    v = float(value)
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}, got {v:g}")
    if hi is not None and v > hi:
        raise ConfigError(path, f"must be <= {hi}, got {v:g}")
    return v


def _int(value, path, lo=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {type(value).__name__}")
    if lo is not None and value < lo:
        raise ConfigError(path, f"must be >= {lo}, got {value}")
    return value


def _bool(value, path):
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected true/false, got {type(value).__name__}")
    return value


def _name(value, path):
    if not isinstance(value, str) or not value:
        raise ConfigError(path, "expected a non-empty string")
    if not set(value) <= _NAME_OK:
        raise ConfigError(path, f"name {value!r} holds characters outside [A-Za-z0-9._-]")
    return value


def _fraction(value, path):
    v = _num(value, path)
    if not 0.0 < v <= 1.0:
        raise ConfigError(path, f"must lie in (0, 1], got {v:g}")
    return v


def _seeds(value, path):
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list of integers")
    seeds = tuple(_int(s, _join(path, i), lo=0) for i, s in enumerate(value))
    if len(set(seeds)) != len(seeds):
        raise ConfigError(path, "seeds must be unique")
    return seeds


def _rarity(value, path, n_classes):
    if not isinstance(value, list):
        raise ConfigError(path, "expected a list of per-class weights")
    if len(value) != n_classes:
        raise ConfigError(path, f"expected {n_classes} entries, got {len(value)}")
    return np.array([_num(v, _join(path, i), lo=0.0, hi=1.0) for i, v in enumerate(value)])


def _parse_data(obj, path, base_dir):
    table = _table(obj, path)
    _check_keys(table, {"manifest"}, path)
    raw = _get(table, "manifest", path)
    if not isinstance(raw, str) or not raw:
        raise ConfigError(_join(path, "manifest"), "expected a file path string")
    manifest = (base_dir / raw).resolve() if not Path(raw).is_absolute() else Path(raw)
    if not manifest.is_file():
        raise ConfigError(_join(path, "manifest"), f"no such file: {manifest}")
    return manifest


def _parse_loss(obj, path, rarity):
    table = _table(obj, path)
    _check_keys(table, {"kind", "m", "gamma", "beta", "asymmetric", "dsc_epsilon"}, path)
    kind = _get(table, "kind", path)
    if kind not in LOSS_KINDS:
        raise ConfigError(_join(path, "kind"), f"unknown loss kind {kind!r}, pick one of {', '.join(LOSS_KINDS)}")
    asym = _bool(_get(table, "asymmetric", path, False), _join(path, "asymmetric"))
    if asym and rarity is None:
        raise ConfigError("rarity", "required when loss.asymmetric is true")
    try:
        return LossConfig(
            kind=kind,
            asymmetric=asym,
            m=_num(_get(table, "m", path, 0.0), _join(path, "m"), lo=0.0),
            gamma=_num(_get(table, "gamma", path, 0.0), _join(path, "gamma"), lo=0.0),
            beta=_num(_get(table, "beta", path, 1.0), _join(path, "beta")),
            dsc_epsilon=_num(_get(table, "dsc_epsilon", path, 1e-5), _join(path, "dsc_epsilon")),
            r=rarity if asym else None,
        )
    except DomainError as exc:
        raise ConfigError(path, str(exc)) from exc


def _parse_adversarial(obj, path, rarity):
    table = _table(obj, path)
    _check_keys(table, {"epsilon", "l", "asymmetric"}, path)
    asym = _bool(_get(table, "asymmetric", path, False), _join(path, "asymmetric"))
    if asym and rarity is None:
        raise ConfigError("rarity", f"required when {path}.asymmetric is true")
    try:
        return AdvConfig(
            epsilon=_num(_get(table, "epsilon", path, 1e-5), _join(path, "epsilon")),
            l=_num(_get(table, "l", path, 10.0), _join(path, "l")),
            asymmetric=asym,
        )
    except DomainError as exc:
        raise ConfigError(path, str(exc)) from exc


def _parse_mixup(obj, path, rarity):
    table = _table(obj, path)
    _check_keys(table, {"alpha", "m", "asymmetric"}, path)
    asym = _bool(_get(table, "asymmetric", path, False), _join(path, "asymmetric"))
    if asym and rarity is None:
        raise ConfigError("rarity", f"required when {path}.asymmetric is true")
    try:
        return MixupConfig(
            alpha=_num(_get(table, "alpha", path, 0.2), _join(path, "alpha")),
            m=_num(_get(table, "m", path, 0.2), _join(path, "m")),
            asymmetric=asym,
        )
    except DomainError as exc:
        raise ConfigError(path, str(exc)) from exc


def _parse_augmentation(obj, path):
    table = _table(obj, path)
    _check_keys(table, {"p_fg", "p_bg", "flip", "intensity_shift"}, path)
    try:
        return AugConfig(
            p_fg=_num(_get(table, "p_fg", path, 0.5), _join(path, "p_fg")),
            p_bg=_num(_get(table, "p_bg", path, 0.25), _join(path, "p_bg")),
            flip=_bool(_get(table, "flip", path, True), _join(path, "flip")),
            intensity_shift=_num(_get(table, "intensity_shift", path, 0.1), _join(path, "intensity_shift")),
        )
    except DomainError as exc:
        raise ConfigError(path, str(exc)) from exc


def _parse_optimizer(obj, path):
    table = _table(obj, path)
    _check_keys(table, {"lr", "momentum", "steps", "batch_size", "patch_size", "fg_fraction"}, path)
    try:
        return OptConfig(
            lr=_num(_get(table, "lr", path, 0.05), _join(path, "lr")),
            momentum=_num(_get(table, "momentum", path, 0.9), _join(path, "momentum")),
            steps=_int(_get(table, "steps", path, 3000), _join(path, "steps"), lo=1),
            batch_size=_int(_get(table, "batch_size", path, 16), _join(path, "batch_size"), lo=1),
            patch_size=_int(_get(table, "patch_size", path, 32), _join(path, "patch_size"), lo=1),
            fg_fraction=_num(_get(table, "fg_fraction", path, 0.5), _join(path, "fg_fraction")),
        )
    except DomainError as exc:
        raise ConfigError(path, str(exc)) from exc


def _parse_net(obj, path):
    table = _table(obj, path)
    _check_keys(table, {"hidden", "n_classes"}, path)
    hidden = _get(table, "hidden", path, [8, 16, 16])
    if not isinstance(hidden, list) or not hidden:
        raise ConfigError(_join(path, "hidden"), "expected a non-empty list of widths")
    try:
        return NetSpec(
            hidden=tuple(_int(h, _join(_join(path, "hidden"), i), lo=1) for i, h in enumerate(hidden)),
            n_classes=_int(_get(table, "n_classes", path, 2), _join(path, "n_classes"), lo=2),
        )
    except DomainError as exc:
        raise ConfigError(path, str(exc)) from exc


def _load_json(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError("", f"no such config file: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"config is not valid JSON: {exc}") from exc


_RUN_KEYS = {
    "data", "train_fraction", "rarity", "loss", "adversarial", "mixup",
    "augmentation", "optimizer", "net", "seeds", "name", "out_dir",
}


def load_run_config(path):
    """Parse and validate a single-run config file into a RunConfig."""
    path = Path(path)
    obj = _table(_load_json(path), "")
    _check_keys(obj, _RUN_KEYS, "")
    base = path.parent

    net = _parse_net(_get(obj, "net", "", {}), "net")
    rarity = obj.get("rarity")
    if rarity is not None:
        rarity = _rarity(rarity, "rarity", net.n_classes)
    loss = _parse_loss(_get(obj, "loss", ""), "loss", rarity)
    adv = mix = aug = None
    if "adversarial" in obj:
        adv = _parse_adversarial(obj["adversarial"], "adversarial", rarity)
    if "mixup" in obj:
        mix = _parse_mixup(obj["mixup"], "mixup", rarity)
    if "augmentation" in obj:
        aug = _parse_augmentation(obj["augmentation"], "augmentation")

    out_dir = obj.get("out_dir")
    if out_dir is not None:
        if not isinstance(out_dir, str) or not out_dir:
            raise ConfigError("out_dir", "expected a directory path string")
        out_dir = (base / out_dir) if not Path(out_dir).is_absolute() else Path(out_dir)

    return RunConfig(
        manifest=_parse_data(_get(obj, "data", ""), "data", base),
        loss=loss,
        opt=_parse_optimizer(_get(obj, "optimizer", "", {}), "optimizer"),
        net=net,
        seeds=_seeds(_get(obj, "seeds", ""), "seeds"),
        name=_name(_get(obj, "name", "", loss.kind), "name"),
        out_dir=out_dir,
        train_fraction=_fraction(_get(obj, "train_fraction", "", 1.0), "train_fraction"),
        rarity=rarity,
        adversarial=adv,
        mixup=mix,
        augmentation=aug,
    )


_SWEEP_KEYS = {"data", "rarity", "optimizer", "net", "variants", "fractions", "seeds", "out_dir"}
_VARIANT_KEYS = {"name", "loss", "adversarial", "mixup", "augmentation"}


def load_sweep_config(path):
    """Parse and validate a sweep grid file into a SweepConfig."""
    path = Path(path)
    obj = _table(_load_json(path), "")
    _check_keys(obj, _SWEEP_KEYS, "")
    base = path.parent

    net = _parse_net(_get(obj, "net", "", {}), "net")
    rarity = obj.get("rarity")
    if rarity is not None:
        rarity = _rarity(rarity, "rarity", net.n_classes)

    raw_variants = _get(obj, "variants", "")
    if not isinstance(raw_variants, list) or not raw_variants:
        raise ConfigError("variants", "expected a non-empty list")
    variants = []
    names = set()
    for i, entry in enumerate(raw_variants):
        vpath = f"variants.{i}"
        table = _table(entry, vpath)
        _check_keys(table, _VARIANT_KEYS, vpath)
        name = _name(_get(table, "name", vpath), _join(vpath, "name"))
        if name in names:
            raise ConfigError(_join(vpath, "name"), f"duplicate variant name {name!r}")
        names.add(name)
        variants.append(
            {
                "name": name,
                "loss": _parse_loss(_get(table, "loss", vpath), _join(vpath, "loss"), rarity),
                "adversarial": _parse_adversarial(table["adversarial"], _join(vpath, "adversarial"), rarity)
                if "adversarial" in table
                else None,
                "mixup": _parse_mixup(table["mixup"], _join(vpath, "mixup"), rarity)
                if "mixup" in table
                else None,
                "augmentation": _parse_augmentation(table["augmentation"], _join(vpath, "augmentation"))
                if "augmentation" in table
                else None,
            }
        )

    raw_fractions = _get(obj, "fractions", "")
    if not isinstance(raw_fractions, list) or not raw_fractions:
        raise ConfigError("fractions", "expected a non-empty list")
    fractions = tuple(_fraction(f, f"fractions.{i}") for i, f in enumerate(raw_fractions))
    if len(set(fractions)) != len(fractions):
        raise ConfigError("fractions", "fractions must be unique")

    out_dir = obj.get("out_dir")
    if out_dir is not None:
        if not isinstance(out_dir, str) or not out_dir:
            raise ConfigError("out_dir", "expected a directory path string")
        out_dir = (base / out_dir) if not Path(out_dir).is_absolute() else Path(out_dir)

    return SweepConfig(
        manifest=_parse_data(_get(obj, "data", ""), "data", base),
        opt=_parse_optimizer(_get(obj, "optimizer", "", {}), "optimizer"),
        net=net,
        variants=variants,
        fractions=fractions,
        seeds=_seeds(_get(obj, "seeds", ""), "seeds"),
        rarity=rarity,
        out_dir=out_dir,
    )


def build_cells(cfg, out_dir=None):
    """Expand a RunConfig or SweepConfig into a deterministic list of cells."""
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    if out is None:
        raise ConfigError("out_dir", "no output directory given (config key or --out)")
    cells = []
    if isinstance(cfg, RunConfig):
        for seed in cfg.seeds:
            cells.append(
                CellSpec(
                    name=cfg.name,
                    manifest=cfg.manifest,
                    out_dir=out,
                    loss=cfg.loss,
                    opt=cfg.opt,
                    net=cfg.net,
                    fraction=cfg.train_fraction,
                    seed=seed,
                    rarity=cfg.rarity,
                    adversarial=cfg.adversarial,
                    mixup=cfg.mixup,
                    augmentation=cfg.augmentation,
                )
            )
        return cells
    for variant in cfg.variants:
        for fraction in cfg.fractions:
            for seed in cfg.seeds:
                cells.append(
                    CellSpec(
                        name=variant["name"],
                        manifest=cfg.manifest,
                        out_dir=out,
                        loss=variant["loss"],
                        opt=cfg.opt,
                        net=cfg.net,
                        fraction=fraction,
                        seed=seed,
                        rarity=cfg.rarity,
                        adversarial=variant["adversarial"],
                        mixup=variant["mixup"],
                        augmentation=variant["augmentation"],
                    )
                )
    return cells


# ---------------------------------------------------------------------------
# training


def _one_hot(masks, n_classes):
    return np.eye(n_classes, dtype=np.float64)[masks]


def train_model(images, masks, cell):
    """Train a fresh net on one cell's training images.

    Returns (net, curve, diverged_at): curve holds the loss value of every
    completed step, diverged_at is None for a clean run or the index of the
    step that blew up (non-finite logits, gradients or parameters; the net is
    then unusable and no further steps run, so len(curve) == diverged_at).
    """
    opt = cell.opt
    n_classes = cell.net.n_classes
    net = TinyNet(
        in_channels=images.shape[-1],
        hidden=cell.net.hidden,
        n_classes=n_classes,
        seed=[cell.seed, _STREAM_NET],
    )
    patch_rng = np.random.default_rng([cell.seed, _STREAM_PATCH])
    aug_rng = np.random.default_rng([cell.seed, _STREAM_AUG])
    mix_rng = np.random.default_rng([cell.seed, _STREAM_MIX])

    # rarity defaults: all-common for augmentation gating, unused elsewhere
    # unless the matching section asked for asymmetry
    r = cell.rarity if cell.rarity is not None else np.zeros(n_classes)

    gens = [
        sample_patches(images[i], masks[i], opt.patch_size, opt.fg_fraction, patch_rng)
        for i in range(images.shape[0])
    ]

    curve = []
    n = images.shape[0]
    b = opt.batch_size
    for step in range(opt.steps):
        idx = patch_rng.integers(0, n, size=b)
        xs, ys = [], []
        for i in idx:
            patch, pmask = next(gens[i])
            if cell.augmentation is not None:
                patch, pmask = apply_augmentation(patch, pmask, cell.augmentation, aug_rng, r)
            xs.append(patch)
            ys.append(pmask)
        x = np.stack(xs)
        y = _one_hot(np.stack(ys), n_classes)

        if cell.mixup is not None:
            lam = mix_rng.beta(cell.mixup.alpha, cell.mixup.alpha, size=b)
            partner = (np.arange(b) + 1 + mix_rng.integers(0, max(1, b - 1), size=b)) % b
            mixed_x = lam[:, None, None, None] * x + (1.0 - lam[:, None, None, None]) * x[partner]
            if cell.mixup.asymmetric:
                mixed_y = np.stack(
                    [asym_mixup_label(y[j], y[partner[j]], lam[j], cell.mixup.m, r) for j in range(b)]
                )
            else:
                mixed_y = lam[:, None, None, None] * y + (1.0 - lam[:, None, None, None]) * y[partner]
            x = np.concatenate([x, mixed_x])
            y = np.concatenate([y, mixed_y])

        if cell.adversarial is not None:
            adv_r = r if cell.adversarial.asymmetric else None
            out = adversarial_batch(net, x[:b], y[:b], cell.adversarial, loss_cfg=cell.loss, r=adv_r)
            if out is not None:
                perturbed, kept = out
                x = np.concatenate([x, perturbed])
                y = np.concatenate([y, y[kept]])

        logits, caches = net._forward_cached(x)
        if not np.all(np.isfinite(logits)):
            log.warning("cell %s diverged at step %d (non-finite logits)", cell.stem, step)
            return net, curve, step
        value, upstream = evaluate_loss(cell.loss, logits, y)
        grads = net._backward_from(caches, upstream)
        try:
            sgd_step(net, grads, opt.lr, opt.momentum)
        except TrainingDivergence:
            log.warning("cell %s diverged at step %d", cell.stem, step)
            return net, curve, step
        curve.append(value.total)
    return net, curve, None


# ---------------------------------------------------------------------------
# evaluation


def _nan_scores():
    nan = float("nan")
    return {"dsc": nan, "sen": nan, "prc": nan, "spc": nan, "fbeta": nan}


def _score_dict(s):
    return {
        "dsc": s.dsc,
        "sen": s.sensitivity,
        "prc": s.precision,
        "spc": s.specificity,
        "fbeta": s.fbeta,
    }


def evaluate_model(net, images, masks, fg_class=1, beta=1.0, chunk=8):
    """Score a net on full images, before and after largest-component cleanup.

    Returns (per_image, summary). per_image holds one dict per image with raw
    and post-processed scores plus both HD95 values (NaN when either surface
    is empty). The summary averages each field, HD95 over its finite entries,
    and additionally carries the confusion counts pooled over all images
    (summary["pooled"]["pre"/"post"]) with the precision they imply; pooled
    precision is the quantity largest-component cleanup is meant to raise.
    """
    n = images.shape[0]
    rows = []
    pooled = {"pre": np.zeros(4, dtype=np.int64), "post": np.zeros(4, dtype=np.int64)}
    for start in range(0, n, chunk):
        logits = net.forward(images[start : start + chunk])
        preds = np.argmax(logits, axis=-1)
        for j in range(preds.shape[0]):
            gt = masks[start + j] == fg_class
            pred = preds[j] == fg_class
            post = largest_component(pred)
            c_pre = confusion(pred, gt)
            c_post = confusion(post, gt)
            pooled["pre"] += (c_pre.tp, c_pre.fp, c_pre.fn, c_pre.tn)
            pooled["post"] += (c_post.tp, c_post.fp, c_post.fn, c_post.tn)
            row = {
                "index": start + j,
                "pre": _score_dict(scores(c_pre, beta=beta)),
                "post": _score_dict(scores(c_post, beta=beta)),
                "hd95_raw": _hd95_or_nan(pred, gt),
                "hd95_post": _hd95_or_nan(post, gt),
            }
            rows.append(row)

    summary = {}
    for stage in ("pre", "post"):
        for key in ("dsc", "sen", "prc", "spc", "fbeta"):
            out_key = key if stage == "pre" else f"{key}_post"
            summary[out_key] = float(np.mean([r[stage][key] for r in rows]))
    for key in ("hd95_raw", "hd95_post"):
        vals = np.asarray([r[key] for r in rows])
        finite = vals[np.isfinite(vals)]
        summary[key] = float(finite.mean()) if finite.size else float("nan")
    summary["pooled"] = {
        # same degeneracy conventions as scores(): empty-empty agreement is 1
        stage: {
            "tp": int(tp), "fp": int(fp), "fn": int(fn), "tn": int(tn),
            "prc": tp / (tp + fp) if tp + fp else (1.0 if fn == 0 else 0.0),
        }
        for stage, (tp, fp, fn, tn) in pooled.items()
    }
    return rows, summary


def _hd95_or_nan(pred, gt):
    try:
        return hausdorff95(pred, gt)
    except EmptyMaskError:
        return float("nan")


# ---------------------------------------------------------------------------
# cell orchestration


def run_cell(cell):
    """Train, evaluate and diagnose one cell; write its artifacts; return a row.

    Artifacts under cell.out_dir: checkpoints/<stem>.ckpt(.json),
    reports/<stem>.json (curve, per-image scores, summary),
    diagnostics/<stem>.json and <stem>_hist.csv. A diverged cell writes the
    report only; its metric columns are NaN.
    """
    t0 = time.perf_counter()
    out = Path(cell.out_dir)
    for sub in ("checkpoints", "reports", "diagnostics"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    _, records = load_manifest(cell.manifest)
    sub_records = subsample_training(records, cell.fraction, seed=cell.seed)
    train_images, train_masks = load_split(cell.manifest, "train", records=sub_records)
    test_images, test_masks = load_split(cell.manifest, "test")
    log.info(
        "cell %s: %d train images (fraction %g), %d test images",
        cell.stem, train_images.shape[0], cell.fraction, test_images.shape[0],
    )

    net, curve, diverged_at = train_model(train_images, train_masks, cell)

    report = {
        "run_id": cell.name,
        "seed": cell.seed,
        "loss_kind": cell.loss.kind,
        "train_fraction": cell.fraction,
        "train_indices": [r["index"] for r in sub_records if r["split"] == "train"],
        "diverged_at": diverged_at,
        "curve": curve,
    }
    row = {
        "run_id": cell.name,
        "seed": cell.seed,
        "loss_kind": cell.loss.kind,
        "train_fraction": cell.fraction,
    }

    if diverged_at is None:
        save_checkpoint(net, str(out / "checkpoints" / f"{cell.stem}.ckpt"))
        per_image, summary = evaluate_model(net, test_images, test_masks)
        report["summary"] = summary
        report["per_image"] = per_image
        row.update(
            dsc=summary["dsc"], sen=summary["sen"], prc=summary["prc"],
            spc=summary["spc"], hd95_raw=summary["hd95_raw"], hd95_post=summary["hd95_post"],
        )

        shift = logit_shift(
            collect_logits(net, train_images, train_masks, "train", seed=cell.seed),
            collect_logits(net, test_images, test_masks, "test", seed=cell.seed),
        )
        shift.to_json(out / "diagnostics" / f"{cell.stem}.json")
        export_histograms(shift, out / "diagnostics" / f"{cell.stem}_hist.csv")
    else:
        nan = float("nan")
        row.update(dsc=nan, sen=nan, prc=nan, spc=nan, hd95_raw=nan, hd95_post=nan)

    wall = time.perf_counter() - t0
    report["wall_time"] = wall
    row["wall_time"] = wall
    with open(out / "reports" / f"{cell.stem}.json", "w") as fh:
        json.dump(report, fh)
        fh.write("\n")
    return row


def run_cells(cells, jobs=1):
    """Run cells in deterministic order; jobs > 1 fans out over processes."""
    if jobs < 1:
        raise InvalidInputError("jobs must be positive")
    if jobs == 1 or len(cells) <= 1:
        return [run_cell(cell) for cell in cells]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_cell, cells))


def write_rows(rows, path):
    """Write result rows as CSV in RESULT_COLUMNS order, floats via repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([_csv_value(row[col]) for col in RESULT_COLUMNS])
    return path


def _csv_value(v):
    if isinstance(v, float):
        return repr(v)
    return v
