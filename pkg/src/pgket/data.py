"""Dataset ingestion and preprocessing.

Images travel as ``(count, height, width, channels)`` arrays on the 0..255
scale: ``uint8`` straight from disk, ``float64`` once noise has been added.
Everything downstream of :func:`pca_transform` sees pixels rescaled to [0, 1].
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, ValidationError
from .numerics import as_rng, eigh_symmetric

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
TOKEN_SCHEMES = (1, 4, 16)


@dataclass
class RawDataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int = 10

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be (count, h, w, c), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return RawDataset(self.images[idx], self.labels[idx], self.num_classes)


def _read_idx(path, expected_magic):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header", len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise FormatError(f"{path}: expected {size} data bytes, found {len(raw) - header}", len(raw))
    if len(raw) > header + size:
        raise FormatError(f"{path}: trailing bytes after payload", header + size)
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array):
    """Write a ``uint8`` array as an IDX file (the MNIST container)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x00000800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def load_idx(images_path, labels_path, num_classes=10):
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", 4)
    return RawDataset(images[..., None], labels.astype(np.int64), num_classes)


def _cifar_files(path):
    path = Path(path)
    if path.is_file():
        return [path]
    files = sorted(path.glob("data_batch_*.bin")) or sorted(path.glob("test_batch.bin"))
    if not files:
        raise DataError(f"no CIFAR-10 batch files in {path}")
    return files


def load_cifar10_bin(path):
    """Read CIFAR-10 binary batches (a directory of ``data_batch_*.bin`` or one file)."""
    images, labels = [], []
    for f in _cifar_files(path):
        raw = np.fromfile(f, dtype=np.uint8)
        if raw.size % CIFAR_RECORD:
            raise FormatError(f"{f}: size {raw.size} is not a multiple of {CIFAR_RECORD}",
                              raw.size - raw.size % CIFAR_RECORD)
        rec = raw.reshape(-1, CIFAR_RECORD)
        labels.append(rec[:, 0].astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
    return RawDataset(np.concatenate(images), np.concatenate(labels), 10)


def write_cifar10_bin(path, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    planar = images.transpose(0, 3, 1, 2).reshape(len(images), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], planar], axis=1)
    Path(path).write_bytes(rec.tobytes())


def select_classes(ds, classes=5, per_class_train=30, per_class_test=10, rng=None):
    """Seeded per-class draw of disjoint train/test subsets.

    ``classes`` is a count (the first k labels) or an explicit list.
    Labels are remapped to ``0..k-1`` in the given class order.
    """
    classes = list(range(classes)) if isinstance(classes, int) else list(classes)
    rng = as_rng(rng)
    tr_idx, te_idx, tr_lab, te_lab = [], [], [], []
    for new_label, c in enumerate(classes):
        pool = np.flatnonzero(ds.labels == c)
        need = per_class_train + per_class_test
        if len(pool) < need:
            raise DataError(f"class {c} has {len(pool)} samples, need {need}")
        pick = pool[rng.child("select", c).permutation(len(pool))[:need]]
        tr_idx.extend(pick[:per_class_train])
        te_idx.extend(pick[per_class_train:])
        tr_lab += [new_label] * per_class_train
        te_lab += [new_label] * per_class_test
    k = len(classes)
    train = RawDataset(ds.images[tr_idx], np.array(tr_lab), k)
    test = RawDataset(ds.images[te_idx], np.array(te_lab), k)
    return train, test


def add_gaussian_noise(ds, sigma=0.4, rng=None, clamp=True):
    """Add N(0, sigma^2) per pixel on the [0, 1] scale; returns a float copy on the 0..255 scale."""
    if sigma < 0:
        raise ValidationError("sigma must be non-negative")
    x = ds.images.astype(np.float64) / 255.0
    if sigma > 0:
        x = x + as_rng(rng).normal(0.0, sigma, x.shape)
    if clamp:
        x = np.clip(x, 0.0, 1.0)
    return RawDataset(x * 255.0, ds.labels.copy(), ds.num_classes)


def region_slices(height, width, n_tokens):
    if n_tokens not in TOKEN_SCHEMES:
        raise ValidationError(f"token scheme must be one of {TOKEN_SCHEMES}")
    g = int(round(n_tokens ** 0.5))
    if height % g or width % g:
        raise ValidationError(f"{height}x{width} images cannot be split into a {g}x{g} grid")
    h, w = height // g, width // g
    return [(slice(r * h, (r + 1) * h), slice(c * w, (c + 1) * w)) for r in range(g) for c in range(g)]


def _regions(images, n_tokens):
    x = np.asarray(images, dtype=np.float64) / 255.0
    return [x[:, rs, cs, :].reshape(len(x), -1) for rs, cs in region_slices(x.shape[1], x.shape[2], n_tokens)]


@dataclass
class PcaModel:
    image_shape: tuple
    n_tokens: int
    means: list
    components: list

    @property
    def out_dim(self):
        return self.components[0].shape[1]

    def fingerprint(self):
        h = hashlib.sha256(repr((self.image_shape, self.n_tokens)).encode())
        for m, c in zip(self.means, self.components):
            h.update(np.ascontiguousarray(m).tobytes())
            h.update(np.ascontiguousarray(c).tobytes())
        return h.hexdigest()


def pca_fit(images, n_tokens=4, out_dim=16):
    """Per-region PCA; components sorted by decreasing variance with a fixed sign."""
    images = images.images if isinstance(images, RawDataset) else np.asarray(images)
    regions = _regions(images, n_tokens)
    pixels = regions[0].shape[1]
    if out_dim > pixels:
        raise ValidationError(f"out_dim {out_dim} exceeds the {pixels} pixels per region")
    if len(images) < out_dim + 1:
        raise DataError(f"PCA to {out_dim} dims needs at least {out_dim + 1} training images")
    means, comps = [], []
    for x in regions:
        mu = x.mean(axis=0)
        xc = x - mu
        cov = xc.T @ xc / (len(x) - 1)
        vals, vecs = eigh_symmetric(cov)
        top = vecs[:, ::-1][:, :out_dim].copy()
        pivot = np.argmax(np.abs(top), axis=0)
        top *= np.sign(top[pivot, np.arange(out_dim)])
        means.append(mu)
        comps.append(top)
    return PcaModel(tuple(images.shape[1:]), n_tokens, means, comps)


def pca_transform(model, images):
    """Token sequences of shape ``(count, n_tokens, out_dim)``."""
    images = images.images if isinstance(images, RawDataset) else np.asarray(images)
    if tuple(images.shape[1:]) != tuple(model.image_shape):
        raise ValidationError(f"image shape {images.shape[1:]} does not match PCA model {model.image_shape}")
    regions = _regions(images, model.n_tokens)
    return np.stack([(x - mu) @ c for x, mu, c in zip(regions, model.means, model.components)], axis=1)


def pca_reconstruct(model, tokens):
    """Inverse map back to per-region pixel vectors on the [0, 1] scale."""
    return [tokens[:, r] @ c.T + mu for r, (mu, c) in enumerate(zip(model.means, model.components))]
