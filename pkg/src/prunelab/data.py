"""Dataset ingestion, preprocessing, splits, augmentation, multi-crop eval.

Loaders parse the published binary formats exactly (IDX for MNIST-style
files, the CIFAR-10 batch format) and fail loudly on malformed input.
``synthetic_digits`` renders a seeded ten-class digit task so the full
pipeline runs without external files.
"""

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import layers, network as network_mod
from .errors import DataError, ShapeError

GCN_STD_FLOOR = 1e-8
ZCA_EPSILON = 1e-5


@dataclass
class Dataset:
    """Samples ``[n, maps, H, W]`` with integer labels and a provenance
    trail recording where the data came from and what touched it."""

    samples: np.ndarray
    labels: np.ndarray
    class_count: int
    provenance: tuple = ()

    def __post_init__(self):
        if len(self.samples) != len(self.labels):
            raise DataError(
                f"{len(self.samples)} samples but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels outside [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    def take(self, indices, note):
        return Dataset(
            samples=self.samples[indices],
            labels=self.labels[indices],
            class_count=self.class_count,
            provenance=self.provenance + (note,),
        )

    def head(self, n, note="head"):
        return self.take(np.arange(min(n, len(self))), f"{note}({n})")


# ---------------------------------------------------------------------------
# IDX format (MNIST-style)
# ---------------------------------------------------------------------------

_IDX_UBYTE = 0x08


def _read_idx(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise DataError(f"{path}: too short for an IDX header")
    zeros, dtype_code, ndim = blob[0] << 8 | blob[1], blob[2], blob[3]
    if zeros != 0:
        raise DataError(f"{path}: bad IDX magic {blob[:4].hex()}")
    if dtype_code != _IDX_UBYTE:
        raise DataError(f"{path}: unsupported IDX element type 0x{dtype_code:02x}")
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise DataError(f"{path}: truncated IDX dimension list")
    dims = struct.unpack(f">{ndim}I", blob[4:header_len])
    count = int(np.prod(dims)) if dims else 0
    body = blob[header_len:]
    if len(body) != count:
        raise DataError(f"{path}: expected {count} bytes of data, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path):
    """Load an IDX image/label pair; pixels scale to [0, 1]."""
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if images.ndim != 3:
        raise DataError(f"{images_path}: expected 3-d image data, got {images.ndim}-d")
    if labels.ndim != 1:
        raise DataError(f"{labels_path}: expected 1-d label data, got {labels.ndim}-d")
    if len(images) != len(labels):
        raise DataError(
            f"image count {len(images)} != label count {len(labels)}"
        )
    samples = (images.astype(np.float64) / 255.0)[:, None, :, :]
    labels = labels.astype(np.int64)
    return Dataset(
        samples=samples,
        labels=labels,
        class_count=int(labels.max()) + 1 if len(labels) else 0,
        provenance=(f"idx({images_path},{labels_path})",),
    )


def write_idx(dataset, images_path, labels_path):
    """Export to the IDX pair format (pixels quantized back to bytes)."""
    if dataset.samples.shape[1] != 1:
        raise DataError("IDX export requires single-map samples")
    images = np.clip(np.round(dataset.samples[:, 0] * 255.0), 0, 255).astype(np.uint8)
    n, h, w = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, _IDX_UBYTE, 3))
        fh.write(struct.pack(">3I", n, h, w))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, _IDX_UBYTE, 1))
        fh.write(struct.pack(">I", n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches
# ---------------------------------------------------------------------------

_CIFAR_RECORD = 1 + 3 * 32 * 32


def load_cifar10(paths):
    """Load one or more CIFAR-10 binary batch files (label byte + 3072
    pixel bytes per record)."""
    import os

    if isinstance(paths, (str, bytes, os.PathLike)):
        paths = [paths]
    chunks, labels = [], []
    for path in paths:
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) == 0 or len(blob) % _CIFAR_RECORD != 0:
            raise DataError(
                f"{path}: size {len(blob)} is not a multiple of {_CIFAR_RECORD}-byte records"
            )
        records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
        labels.append(records[:, 0].astype(np.int64))
        chunks.append(records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0)
    return Dataset(
        samples=np.concatenate(chunks),
        labels=np.concatenate(labels),
        class_count=10,
        provenance=(f"cifar10({','.join(map(str, paths))})",),
    )


# ---------------------------------------------------------------------------
# splits and preprocessing
# ---------------------------------------------------------------------------


def split_validation(dataset, fraction, seed):
    """Seeded shuffle, then carve off ``round(fraction * n)`` samples as the
    validation split. Disjoint and exhaustive."""
    if not 0.0 < fraction < 1.0:
        raise DataError(f"validation fraction {fraction} outside (0, 1)")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    n_val = round(fraction * n)
    val = dataset.take(np.sort(perm[:n_val]), f"split:val(frac={fraction},seed={seed})")
    train = dataset.take(np.sort(perm[n_val:]), f"split:train(frac={fraction},seed={seed})")
    return train, val


def gcn(dataset, std_floor=GCN_STD_FLOOR):
    """Global contrast normalization: per sample, subtract the mean and
    divide by max(std, floor)."""
    x = dataset.samples
    flat = x.reshape(len(x), -1)
    mean = flat.mean(axis=1, keepdims=True)
    std = np.maximum(flat.std(axis=1, keepdims=True), std_floor)
    out = ((flat - mean) / std).reshape(x.shape)
    return replace(
        dataset, samples=out,
        provenance=dataset.provenance + (f"gcn(floor={std_floor})",),
    )


@dataclass
class ZcaTransform:
    """Symmetric whitening fitted on training data only."""

    mean: np.ndarray
    whitening: np.ndarray
    epsilon: float
    fitted_on: tuple = ()

    def validate(self):
        if not np.allclose(self.whitening, self.whitening.T, atol=1e-8):
            raise ShapeError("whitening matrix must be symmetric")


def zca_fit(train, epsilon=ZCA_EPSILON):
    """Eigendecompose the training covariance; ``W = U diag(1/sqrt(l+eps)) U^T``."""
    if len(train) == 0:
        raise DataError("cannot fit ZCA on an empty dataset")
    flat = train.samples.reshape(len(train), -1).astype(np.float64)
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / len(train)
    eigvals, eigvecs = np.linalg.eigh(cov)
    scale = 1.0 / np.sqrt(np.maximum(eigvals, 0.0) + epsilon)
    whitening = (eigvecs * scale) @ eigvecs.T
    transform = ZcaTransform(
        mean=mean, whitening=whitening, epsilon=epsilon, fitted_on=train.provenance
    )
    transform.validate()
    return transform


def zca_apply(transform, dataset):
    flat = dataset.samples.reshape(len(dataset), -1)
    if flat.shape[1] != transform.mean.shape[0]:
        raise DataError(
            f"ZCA dimension {transform.mean.shape[0]} != data dimension {flat.shape[1]}"
        )
    out = (flat - transform.mean) @ transform.whitening.T
    return replace(
        dataset, samples=out.reshape(dataset.samples.shape),
        provenance=dataset.provenance + (f"zca(eps={transform.epsilon})",),
    )


# ---------------------------------------------------------------------------
# augmentation and multi-crop evaluation
# ---------------------------------------------------------------------------


def augment_crop_flip(batch, crop, rng, flip_prob=0.5):
    """Random crops plus horizontal flips; labels and sample count unchanged."""
    n, maps, h, w = batch.shape
    if crop > h or crop > w:
        raise DataError(f"crop {crop} larger than input {h}x{w}")
    ys = rng.integers(0, h - crop + 1, size=n)
    xs = rng.integers(0, w - crop + 1, size=n)
    flips = rng.random(n) < flip_prob
    out = np.empty((n, maps, crop, crop), dtype=batch.dtype)
    for i in range(n):
        patch = batch[i, :, ys[i] : ys[i] + crop, xs[i] : xs[i] + crop]
        out[i] = patch[:, :, ::-1] if flips[i] else patch
    return out


def ten_crop_views(sample, crop):
    """Four corner crops + the center crop, each with its horizontal flip."""
    maps, h, w = sample.shape
    if crop > h or crop > w:
        raise DataError(f"crop {crop} larger than input {h}x{w}")
    offsets = [
        (0, 0), (0, w - crop), (h - crop, 0), (h - crop, w - crop),
        ((h - crop) // 2, (w - crop) // 2),
    ]
    views = []
    for y, x in offsets:
        patch = sample[:, y : y + crop, x : x + crop]
        views.append(patch)
        views.append(patch[:, :, ::-1])
    return np.ascontiguousarray(np.stack(views))


def ten_crop_predict(net, sample):
    """Average softmax probabilities over the ten views, then argmax."""
    crop = net.spec.input_shape[1]
    views = ten_crop_views(np.asarray(sample), crop)
    logits = network_mod.forward(net, views, training=False)
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    return int(np.argmax(probs.mean(axis=0)))


# ---------------------------------------------------------------------------
# synthetic digit task
# ---------------------------------------------------------------------------

_DIGIT_GLYPHS = [
    "01110 10001 10011 10101 11001 10001 01110",
    "00100 01100 00100 00100 00100 00100 01110",
    "01110 10001 00001 00010 00100 01000 11111",
    "11111 00010 00100 00010 00001 10001 01110",
    "00010 00110 01010 10010 11111 00010 00010",
    "11111 10000 11110 00001 00001 10001 01110",
    "00110 01000 10000 11110 10001 10001 01110",
    "11111 00001 00010 00100 01000 01000 01000",
    "01110 10001 10001 01110 10001 10001 01110",
    "01110 10001 10001 01111 00001 00010 01100",
]


def _glyph_bitmaps():
    out = []
    for spec in _DIGIT_GLYPHS:
        rows = spec.split()
        out.append(np.array([[int(c) for c in row] for row in rows], dtype=np.float64))
    return out


def synthetic_digits(n, seed, image_size=28, noise=0.18, max_shift=4):
    """Seeded ten-class digit images: glyphs at random positions and
    intensities with additive noise and occasional stroke thickening."""
    rng = np.random.default_rng(seed)
    glyphs = _glyph_bitmaps()
    scale = max(1, min((image_size - 2) // 7, 3))
    samples = np.zeros((n, 1, image_size, image_size), dtype=np.float64)
    labels = rng.integers(0, 10, size=n)
    for i in range(n):
        glyph = np.kron(glyphs[labels[i]], np.ones((scale, scale)))
        if rng.random() < 0.4:  # thicker strokes
            padded = np.pad(glyph, 1)
            glyph = np.maximum(glyph, np.maximum(padded[2:, 1:-1], padded[1:-1, 2:]))
        gh, gw = glyph.shape
        cy = (image_size - gh) // 2 + int(rng.integers(-max_shift, max_shift + 1))
        cx = (image_size - gw) // 2 + int(rng.integers(-max_shift, max_shift + 1))
        cy = min(max(cy, 0), image_size - gh)
        cx = min(max(cx, 0), image_size - gw)
        intensity = rng.uniform(0.6, 1.0)
        samples[i, 0, cy : cy + gh, cx : cx + gw] = glyph * intensity
        samples[i, 0] += rng.normal(0.0, noise, size=(image_size, image_size))
    np.clip(samples, 0.0, 1.0, out=samples)
    return Dataset(
        samples=samples,
        labels=labels.astype(np.int64),
        class_count=10,
        provenance=(f"synthetic_digits(n={n},seed={seed},noise={noise})",),
    )
