"""Synthetic imbalanced datasets and their on-disk format.

Images are background Gaussian noise with a few disk-shaped foreground blobs
added at a small intensity offset; labels mark blob pixels. The blob count
and radius ranges are chosen so the dataset-level background/foreground pixel
ratio lands in a configured band, and the generator refuses geometry that
cannot reach the band.

Every image derives its own generator from (master_seed, global index), so a
dataset is reproducible element by element no matter how it is iterated.

Files are NPY version 1.0, float32 for images and uint8 for label masks,
C-order only, written and parsed by this module so malformed files fail with
the byte offset of the problem. A dataset directory holds images/, labels/,
and manifest.jsonl, whose first record describes the task and whose
remaining records list the images.
"""

from __future__ import annotations

import ast
import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, FormatError, InvalidInputError

__all__ = [
    "TaskSpec",
    "expected_foreground_area",
    "generate",
    "load_manifest",
    "load_split",
    "read_array",
    "sample_patches",
    "subsample_training",
    "write_array",
]

_MAGIC = b"\x93NUMPY"
_SUPPORTED_DESCRS = {"<f4": np.float32, "|u1": np.uint8, "<f8": np.float64}


# ---------------------------------------------------------------------------
# NPY 1.0


def write_array(path, arr):
    """Write an array as NPY 1.0 (C order, little endian)."""
    arr = np.ascontiguousarray(arr)
    descr = {np.float32: "<f4", np.uint8: "|u1", np.float64: "<f8"}.get(arr.dtype.type)
    if descr is None:
        raise InvalidInputError(f"unsupported dtype {arr.dtype}, use f4/u1/f8")
    shape = arr.shape if len(arr.shape) != 1 else f"({arr.shape[0]},)"
    header = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}"
    # magic(6) + version(2) + header_len(2) + header + '\n' padded to 64
    total = 10 + len(header) + 1
    pad = (64 - total % 64) % 64
    header = header + " " * pad + "\n"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(bytes((1, 0)))
        fh.write(len(header).to_bytes(2, "little"))
        fh.write(header.encode("ascii"))
        fh.write(arr.tobytes())


def read_array(path):
    """Read an NPY 1.0 file; raises FormatError with a byte offset on problems."""
    blob = Path(path).read_bytes()
    if len(blob) < 6 or blob[:6] != _MAGIC:
        raise FormatError(0, "not an NPY file (bad magic)")
    if len(blob) < 8:
        raise FormatError(6, "truncated before version bytes")
    if blob[6] != 1 or blob[7] != 0:
        raise FormatError(6, f"unsupported NPY version {blob[6]}.{blob[7]}")
    if len(blob) < 10:
        raise FormatError(8, "truncated before header length")
    hlen = int.from_bytes(blob[8:10], "little")
    if len(blob) < 10 + hlen:
        raise FormatError(10, f"header says {hlen} bytes but file ends early")
    raw = blob[10 : 10 + hlen]
    if not raw.endswith(b"\n"):
        raise FormatError(10, "header not newline-terminated")
    try:
        header = ast.literal_eval(raw.decode("ascii").strip())
    except (SyntaxError, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(10, f"header is not a python dict literal: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError(10, "header must have descr, fortran_order, shape")
    descr = header["descr"]
    if descr not in _SUPPORTED_DESCRS:
        raise FormatError(10, f"unsupported descr {descr!r}, use f4/u1/f8")
    if header["fortran_order"] is not False:
        raise FormatError(10, "fortran order not supported")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(
        isinstance(s, int) and s >= 0 for s in shape
    ):
        raise FormatError(10, f"bad shape {shape!r}")
    dtype = np.dtype(_SUPPORTED_DESCRS[descr])
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    data_start = 10 + hlen
    actual = len(blob) - data_start
    if actual != expected:
        raise FormatError(
            data_start + min(actual, expected),
            f"data holds {actual} bytes, shape {shape} needs {expected}",
        )
    return np.frombuffer(blob[data_start:], dtype=dtype).reshape(shape).copy()


# ---------------------------------------------------------------------------
# task and generation


@dataclass
class TaskSpec:
    """Geometry and statistics of a synthetic dataset.

    blob_intensity is the mean offset added to blob pixels, in units of the
    background noise std; intensity_jitter widens it per image (uniform in
    intensity +- jitter), and texture_std adds per-pixel noise inside blobs.
    ratio_band is the target background/foreground pixel ratio range for the
    dataset as a whole.
    """

    height: int = 64
    width: int = 64
    channels: int = 1
    n_train: int = 100
    n_test: int = 50
    blob_count: tuple = (1, 1)
    blob_radius: tuple = (2.0, 3.0)
    blob_intensity: float = 1.5
    intensity_jitter: float = 0.0
    texture_std: float = 0.25
    bg_std: float = 1.0
    ratio_band: tuple = (160.0, 240.0)

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise DomainError("images must be at least 16x16")
        if self.channels < 1:
            raise DomainError("need at least one channel")
        if self.n_train < 1 or self.n_test < 1:
            raise DomainError("need at least one image per split")
        lo, hi = self.blob_count
        if not (0 < lo <= hi):
            raise DomainError("blob_count must satisfy 0 < lo <= hi")
        rlo, rhi = self.blob_radius
        if not (1.0 <= rlo <= rhi):
            raise DomainError("blob radii must be >= 1 and ordered")
        if 2 * rhi + 2 >= min(self.height, self.width):
            raise DomainError("largest blob does not fit in the image")
        if self.blob_intensity <= 0 or self.bg_std <= 0:
            raise DomainError("blob_intensity and bg_std must be positive")
        if self.texture_std < 0 or self.intensity_jitter < 0:
            raise DomainError("noise parameters must be non-negative")
        blo, bhi = self.ratio_band
        if not (1.0 <= blo < bhi):
            raise DomainError("ratio_band must be an increasing pair above 1")


def _disk_area(radius):
    r = int(np.ceil(radius))
    ii, jj = np.mgrid[-r : r + 1, -r : r + 1]
    return int(np.count_nonzero(ii * ii + jj * jj <= radius * radius))


def expected_foreground_area(spec):
    """Mean foreground pixels per image under the spec's blob distribution."""
    radii = np.linspace(spec.blob_radius[0], spec.blob_radius[1], 33)
    mean_area = float(np.mean([_disk_area(r) for r in radii]))
    mean_count = 0.5 * (spec.blob_count[0] + spec.blob_count[1])
    return mean_count * mean_area


def _check_reachable(spec):
    center = 0.5 * (spec.ratio_band[0] + spec.ratio_band[1])
    fg = expected_foreground_area(spec)
    ratio = (spec.height * spec.width - fg) / fg
    if not 0.8 * center <= ratio <= 1.2 * center:
        raise ConfigError(
            "task.ratio_band",
            f"blob geometry yields expected ratio {ratio:.1f}, "
            f"outside 20% of the band center {center:.1f}",
        )


def _render_image(spec, rng):
    h, w, c = spec.height, spec.width, spec.channels
    image = rng.normal(0.0, spec.bg_std, size=(h, w, c))
    mask = np.zeros((h, w), dtype=bool)
    count = int(rng.integers(spec.blob_count[0], spec.blob_count[1] + 1))
    offset = spec.blob_intensity
    if spec.intensity_jitter > 0:
        offset = rng.uniform(
            spec.blob_intensity - spec.intensity_jitter,
            spec.blob_intensity + spec.intensity_jitter,
        )
    ii, jj = np.mgrid[0:h, 0:w]
    for _ in range(count):
        radius = rng.uniform(spec.blob_radius[0], spec.blob_radius[1])
        cy = rng.uniform(radius, h - 1 - radius)
        cx = rng.uniform(radius, w - 1 - radius)
        disk = (ii - cy) ** 2 + (jj - cx) ** 2 <= radius * radius
        mask |= disk
    n_fg = int(mask.sum())
    texture = rng.normal(0.0, spec.texture_std, size=(n_fg, c)) if spec.texture_std else 0.0
    image[mask] += offset * spec.bg_std + texture
    return image.astype(np.float32), mask.astype(np.uint8)


def image_rng(master_seed, index):
    """The generator that produced (or will produce) image `index`."""
    return np.random.default_rng([master_seed, index])


def generate(spec, out_dir, master_seed=0):
    """Render the dataset to out_dir and return the manifest path.

    Raises ConfigError before writing anything if the blob geometry cannot
    reach the ratio band, and after generation if the achieved dataset ratio
    missed the band center by more than 20%.
    """
    _check_reachable(spec)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)

    records = []
    ratios = []
    n_total = spec.n_train + spec.n_test
    for idx in range(n_total):
        split = "train" if idx < spec.n_train else "test"
        rng = image_rng(master_seed, idx)
        image, mask = _render_image(spec, rng)
        stem = f"{split}_{idx:04d}"
        if spec.channels == 1:
            write_array(out_dir / "images" / f"{stem}.npy", image[:, :, 0])
        else:
            write_array(out_dir / "images" / f"{stem}.npy", image)
        write_array(out_dir / "labels" / f"{stem}.npy", mask)
        fg = int(np.count_nonzero(mask))
        records.append(
            {
                "kind": "image",
                "split": split,
                "index": idx,
                "image": f"images/{stem}.npy",
                "label": f"labels/{stem}.npy",
                "fg_pixels": fg,
                "bg_pixels": int(mask.size - fg),
            }
        )
        if fg:
            ratios.append((mask.size - fg) / fg)

    center = 0.5 * (spec.ratio_band[0] + spec.ratio_band[1])
    achieved = float(np.mean(ratios)) if ratios else np.inf
    if not 0.8 * center <= achieved <= 1.2 * center:
        raise ConfigError(
            "task.ratio_band",
            f"achieved dataset ratio {achieved:.1f}, outside 20% of {center:.1f}",
        )

    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w") as fh:
        header = {
            "kind": "dataset",
            "master_seed": master_seed,
            "achieved_ratio": achieved,
            "task": asdict(spec),
        }
        fh.write(json.dumps(header) + "\n")
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return manifest


def load_manifest(path):
    """Parse manifest.jsonl into (header dict, list of image records)."""
    path = Path(path)
    header = None
    records = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(line_no, f"manifest line is not JSON: {exc}") from exc
            if rec.get("kind") == "dataset":
                header = rec
            elif rec.get("kind") == "image":
                records.append(rec)
            else:
                raise FormatError(line_no, f"unknown record kind {rec.get('kind')!r}")
    if header is None:
        raise FormatError(0, "manifest has no dataset header record")
    return header, records


def subsample_training(records, fraction, seed=0):
    """Keep a deterministic fraction of the training records, test untouched.

    The subset is the first ceil-half-up(fraction * n) entries of a seeded
    permutation, so smaller fractions at the same seed are nested inside
    larger ones. At least one training record always survives.
    """
    if not 0.0 < fraction <= 1.0:
        raise DomainError("fraction must lie in (0, 1]")
    train = [r for r in records if r["split"] == "train"]
    rest = [r for r in records if r["split"] != "train"]
    if not train:
        raise InvalidInputError("no training records to subsample")
    k = max(1, int(np.floor(fraction * len(train) + 0.5)))
    perm = np.random.default_rng(seed).permutation(len(train))
    chosen = sorted(int(i) for i in perm[:k])
    return [train[i] for i in chosen] + rest


def load_split(manifest_path, split, records=None):
    """Load a split into arrays: images (n, h, w, c) float64, masks (n, h, w)."""
    manifest_path = Path(manifest_path)
    header, all_records = load_manifest(manifest_path)
    if records is None:
        records = all_records
    base = manifest_path.parent
    images = []
    masks = []
    for rec in records:
        if rec["split"] != split:
            continue
        img = read_array(base / rec["image"]).astype(np.float64)
        if img.ndim == 2:
            img = img[:, :, None]
        images.append(img)
        masks.append(read_array(base / rec["label"]).astype(np.int64))
    if not images:
        raise InvalidInputError(f"split {split!r} has no records")
    return np.stack(images), np.stack(masks)


def sample_patches(image, mask, patch_size, fg_fraction, rng):
    """Yield (patch, label patch) forever, centers biased toward foreground.

    With probability fg_fraction the center is a uniformly drawn foreground
    pixel (falling back to background with a warning when the image has
    none), otherwise a uniformly drawn background pixel. Windows are clamped
    inside the image, so off-center blobs stay fully visible.
    """
    image = np.asarray(image)
    mask = np.asarray(mask)
    if image.ndim != 3 or mask.shape != image.shape[:2]:
        raise InvalidInputError("need image (h, w, c) with mask (h, w)")
    h, w = mask.shape
    if not 1 <= patch_size <= min(h, w):
        raise DomainError(f"patch_size must lie in [1, {min(h, w)}]")
    if not 0.0 <= fg_fraction <= 1.0:
        raise DomainError("fg_fraction must lie in [0, 1]")

    fg = np.argwhere(mask > 0)
    bg = np.argwhere(mask == 0)
    if fg.size == 0 and fg_fraction > 0:
        warnings.warn("image has no foreground pixels, sampling background only")
    half = patch_size // 2

    def clamp(c, size):
        return min(max(int(c) - half, 0), size - patch_size)

    while True:
        use_fg = fg.size > 0 and rng.random() < fg_fraction
        pool = fg if use_fg else (bg if bg.size else fg)
        cy, cx = pool[rng.integers(0, len(pool))]
        top, left = clamp(cy, h), clamp(cx, w)
        yield (
            image[top : top + patch_size, left : left + patch_size].copy(),
            mask[top : top + patch_size, left : left + patch_size].copy(),
        )
