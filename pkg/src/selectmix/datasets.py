"""Datasets, IDX ingestion, synthetic Gaussian data and label-noise injection."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, ShapeError, SpecError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
NOISE_KINDS = ("symmetric", "asymmetric", "instance_dependent")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    noisy_labels: np.ndarray
    num_classes: int
    clean_labels: np.ndarray | None = None
    flip_mask: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ShapeError(f"features must be a nonempty N x d matrix, got shape {x.shape}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "noisy_labels", self._labels(self.noisy_labels, "noisy_labels"))
        if self.clean_labels is not None:
            object.__setattr__(self, "clean_labels", self._labels(self.clean_labels, "clean_labels"))
        if self.flip_mask is not None:
            mask = np.asarray(self.flip_mask, dtype=bool)
            if mask.shape != (len(x),):
                raise ShapeError("flip_mask length differs from N")
            if self.clean_labels is not None and not np.array_equal(
                    mask, self.clean_labels != self.noisy_labels):
                raise InputError("flip_mask disagrees with clean vs noisy labels")
            object.__setattr__(self, "flip_mask", mask)

    def _labels(self, labels, name):
        y = np.asarray(labels)
        if y.shape != (len(self.features),):
            raise ShapeError(f"{name} has shape {y.shape}, expected ({len(self.features)},)")
        y = y.astype(np.int64)
        if (y < 0).any() or (y >= self.num_classes).any():
            raise InputError(f"{name} outside 0..{self.num_classes - 1}")
        return y

    def __len__(self):
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx], self.noisy_labels[idx], self.num_classes,
            None if self.clean_labels is None else self.clean_labels[idx],
            None if self.flip_mask is None else self.flip_mask[idx],
        )


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "symmetric"
    rate: float = 0.0
    pair_map: dict[int, int] | None = None
    idn_sharpness: float = 4.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise SpecError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise SpecError(f"noise rate must lie in [0, 1], got {self.rate}")
        if self.idn_sharpness <= 0:
            raise SpecError("idn_sharpness must be positive")
        if self.pair_map is not None:
            object.__setattr__(self, "pair_map", {int(k): int(v) for k, v in self.pair_map.items()})


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    per_class_count: int
    dim: int
    means: np.ndarray
    stddev: float = 1.0

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        if means.shape != (self.num_classes, self.dim):
            raise SpecError(f"means must be {self.num_classes} x {self.dim}, got {means.shape}")
        if self.per_class_count <= 0:
            raise SpecError("per_class_count must be positive")
        if self.stddev < 0:
            raise SpecError("stddev must be nonnegative")
        if len(np.unique(means, axis=0)) != self.num_classes:
            raise SpecError("class means must be pairwise distinct")
        object.__setattr__(self, "means", means)


def cyclic_pair_map(num_classes: int) -> dict[int, int]:
    """Default asymmetric map c -> (c + 1) mod C."""
    return {c: (c + 1) % num_classes for c in range(num_classes)}


def gaussian_spec(num_classes=2, dim=2, per_class_count=500, separation=6.0, stddev=1.0) -> SyntheticSpec:
    """Class means at ``separation / sqrt(2) * e_c`` so every pair sits ``separation`` apart."""
    if dim < num_classes:
        raise SpecError("gaussian_spec places one mean per axis and needs dim >= num_classes")
    means = np.zeros((num_classes, dim))
    means[np.arange(num_classes), np.arange(num_classes)] = separation / np.sqrt(2.0)
    return SyntheticSpec(num_classes, per_class_count, dim, means, stddev)


# --------------------------------------------------------------------------- IDX

def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _parse_idx(raw: bytes, expected_magic: int, field_name: str) -> np.ndarray:
    if len(raw) < 4:
        raise FormatError(f"{field_name}.magic", "file shorter than the 4-byte magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{field_name}.magic", f"expected 0x{expected_magic:08x}, found 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{field_name}.dims", "truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    payload = len(raw) - header
    if payload < expected:
        raise FormatError(f"{field_name}.payload", f"truncated: {payload} bytes for dims {dims}")
    if payload > expected:
        raise FormatError(f"{field_name}.payload", f"{payload - expected} trailing bytes after dims {dims}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    with _open(path) as f:
        return _parse_idx(f.read(), IMAGES_MAGIC, "images")


def read_idx_labels(path) -> np.ndarray:
    with _open(path) as f:
        return _parse_idx(f.read(), LABELS_MAGIC, "labels")


def load_idx(images_path, labels_path, num_classes: int | None = None, limit: int | None = None) -> Dataset:
    """Load an IDX image/label pair (raw or ``.gz``) as a clean Dataset.

    Pixels are scaled by 1/255 and flattened row-major. ``limit`` keeps the
    first ``limit`` samples.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError("count", f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    c = int(y.max()) + 1 if num_classes is None else num_classes
    return Dataset(x, y.copy(), c, clean_labels=y, flip_mask=np.zeros(len(y), dtype=bool))


def idx_bytes(array: np.ndarray, magic: int) -> bytes:
    a = np.ascontiguousarray(array, dtype=np.uint8)
    if (magic & 0xFF) != a.ndim:
        raise ShapeError(f"magic 0x{magic:08x} declares {magic & 0xFF} dims, array has {a.ndim}")
    return struct.pack(f">I{a.ndim}I", magic, *a.shape) + a.tobytes()


def write_idx(ds: Dataset, images_path, labels_path, image_shape: tuple[int, int] | None = None) -> None:
    """Write features (x255, must be exact bytes) and labels as an IDX pair.

    Clean labels are written when present, noisy labels otherwise.
    """
    pixels = np.rint(ds.features * 255.0)
    if not np.array_equal(pixels / 255.0, ds.features) or pixels.min() < 0 or pixels.max() > 255:
        raise InputError("features are not byte-valued pixels scaled by 1/255")
    if image_shape is None:
        side = int(round(np.sqrt(ds.dim)))
        image_shape = (side, side) if side * side == ds.dim else (1, ds.dim)
    images = pixels.astype(np.uint8).reshape(len(ds), *image_shape)
    labels = ds.clean_labels if ds.clean_labels is not None else ds.noisy_labels
    for path, blob in ((images_path, idx_bytes(images, IMAGES_MAGIC)),
                       (labels_path, idx_bytes(labels.astype(np.uint8), LABELS_MAGIC))):
        path = Path(path)
        if path.suffix == ".gz":
            with gzip.GzipFile(path, "wb", mtime=0) as f:
                f.write(blob)
        else:
            path.write_bytes(blob)


# ---------------------------------------------------------------------- synthetic

def gen_gaussian(spec: SyntheticSpec, seed: int) -> Dataset:
    """``per_class_count`` isotropic Gaussian samples per class, grouped by class."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((spec.num_classes * spec.per_class_count, spec.dim))
    y = np.repeat(np.arange(spec.num_classes), spec.per_class_count)
    x = spec.means[y] + spec.stddev * z
    return Dataset(x, y.copy(), spec.num_classes, clean_labels=y, flip_mask=np.zeros(len(y), dtype=bool))


CSV_TAIL = ("clean_label", "noisy_label", "flipped")


def csv_header(dim: int) -> list[str]:
    return [f"feature_{k}" for k in range(dim)] + list(CSV_TAIL)


def write_csv(ds: Dataset, path) -> None:
    """Write one row per sample; floats use ``repr`` so reading back is exact."""
    clean = ds.clean_labels
    flipped = ds.flip_mask if ds.flip_mask is not None else (
        clean != ds.noisy_labels if clean is not None else None)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(csv_header(ds.dim))
        for i in range(len(ds)):
            w.writerow([repr(float(v)) for v in ds.features[i]] + [
                "" if clean is None else int(clean[i]),
                int(ds.noisy_labels[i]),
                "" if flipped is None else int(flipped[i]),
            ])


def read_csv(path, num_classes: int | None = None) -> Dataset:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise FormatError("header", "empty file")
    header, body = rows[0], rows[1:]
    dim = len(header) - len(CSV_TAIL)
    if dim <= 0 or header != csv_header(dim):
        raise FormatError("header", f"unexpected columns {header}")
    if not body:
        raise FormatError("rows", "no samples")
    x = np.array([[float(v) for v in r[:dim]] for r in body])
    noisy = np.array([int(r[dim + 1]) for r in body])
    has_clean = body[0][dim] != ""
    clean = np.array([int(r[dim]) for r in body]) if has_clean else None
    flipped = np.array([r[dim + 2] == "1" for r in body]) if body[0][dim + 2] != "" else None
    labels = noisy if clean is None else np.concatenate([noisy, clean])
    c = int(labels.max()) + 1 if num_classes is None else num_classes
    return Dataset(x, noisy, c, clean, flipped)


# -------------------------------------------------------------------------- noise

def _idn_flip_probs(ds: Dataset, rate: float, sharpness: float) -> np.ndarray:
    """Per-sample flip probability rising with distance to the clean-class mean.

    Within each class, distances to the class mean are ranked and mapped to
    u in [-1/2, 1/2]; the weight sigmoid(sharpness * u) is rescaled so the
    mean probability equals ``rate``. Clipping at 1 (only possible for
    rates near 1) is redistributed over the unclipped samples.
    """
    n = len(ds)
    u = np.zeros(n)
    for c in range(ds.num_classes):
        members = np.flatnonzero(ds.clean_labels == c)
        if len(members) == 0:
            continue
        dist = np.linalg.norm(ds.features[members] - ds.features[members].mean(axis=0), axis=1)
        ranks = np.argsort(np.argsort(dist, kind="stable"), kind="stable")
        u[members] = ranks / max(len(members) - 1, 1) - 0.5
    w = 1.0 / (1.0 + np.exp(-sharpness * u))
    p = rate * w / w.mean()
    for _ in range(n):
        over = p > 1.0
        if not over.any():
            break
        excess = (p[over] - 1.0).sum()
        p[over] = 1.0
        free = p < 1.0
        p[free] += excess * w[free] / w[free].sum()
    return np.minimum(p, 1.0)


def inject_noise(ds: Dataset, spec: NoiseSpec, seed: int) -> Dataset:
    """Return a copy of ``ds`` whose noisy labels are corrupted per ``spec``."""
    if ds.clean_labels is None:
        raise InputError("noise injection needs clean labels")
    clean = ds.clean_labels
    n, c = len(ds), ds.num_classes
    if spec.rate > 0 and c == 1:
        raise SpecError("cannot flip labels of a single-class dataset")
    rng = np.random.default_rng(seed)
    noisy = clean.copy()
    if spec.rate > 0:
        if spec.kind == "symmetric":
            flip = rng.random(n) < spec.rate
            offsets = rng.integers(1, c, size=n)
            noisy[flip] = (clean[flip] + offsets[flip]) % c
        elif spec.kind == "asymmetric":
            pair_map = spec.pair_map if spec.pair_map is not None else cyclic_pair_map(c)
            for src, dst in pair_map.items():
                if src == dst:
                    raise SpecError(f"pair_map maps class {src} to itself")
                if not (0 <= src < c and 0 <= dst < c):
                    raise SpecError(f"pair_map edge {src}->{dst} outside 0..{c - 1}")
            target = np.array([pair_map.get(k, k) for k in range(c)])
            flip = (rng.random(n) < spec.rate) & (target[clean] != clean)
            noisy[flip] = target[clean[flip]]
        else:
            probs = _idn_flip_probs(ds, spec.rate, spec.idn_sharpness)
            flip = rng.random(n) < probs
            offsets = rng.integers(1, c, size=n)
            noisy[flip] = (clean[flip] + offsets[flip]) % c
    return replace(ds, noisy_labels=noisy, flip_mask=noisy != clean)


def relabel_with_oof(ds: Dataset, oof) -> Dataset:
    """Replace noisy labels by out-of-fold predicted labels."""
    pred = np.asarray(oof.pred_labels)
    if pred.shape != ds.noisy_labels.shape:
        raise ShapeError(f"{len(pred)} predictions for {len(ds)} samples")
    mask = None if ds.clean_labels is None else ds.clean_labels != pred
    return replace(ds, noisy_labels=pred.astype(np.int64), flip_mask=mask)
