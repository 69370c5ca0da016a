"""Synthetic datasets sized for desk-scale experiments, plus an optional
reader for IDX-format image files.

Three generators cover the three task families: paired Gaussian blobs whose
within-pair separation shrinks with ``overlap`` (classification and
curriculum effects), a two-class mixture with a controlled negative:positive
ratio (area-under-PR experiments), and labeled clusters consumed as
embedding-network inputs (retrieval and verification).
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigError, InputError
from .rng import stream

DATASET_KINDS = ("confusable-gaussians", "imbalanced-binary", "embedding-clusters")

# Pair centers sit far apart; pair members start 8 sigmas apart at
# overlap=0 and coincide at overlap=1. Within-class std is 1.
CENTER_SCALE = 10.0
PAIR_SEPARATION = 8.0

__all__ = [
    "DATASET_KINDS",
    "DatasetSpec",
    "DatasetSplits",
    "generate_dataset",
    "save_splits",
    "load_splits",
    "load_idx",
    "load_idx_dataset",
]


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    num_classes: int = 8
    dim: int = 16
    overlap: float = 0.5
    imbalance_ratio: float = 1.0
    noise: float = 0.0
    n_train: int = 512
    n_val: int = 256
    n_test: int = 256

    def validate(self) -> None:
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "imbalanced-binary" and self.num_classes != 2:
            raise ConfigError("imbalanced-binary is a two-class dataset")
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if not 0.0 <= self.overlap <= 1.0:
            raise ConfigError(f"overlap {self.overlap} outside [0, 1]")
        if self.imbalance_ratio <= 0.0:
            raise ConfigError("imbalance_ratio must be positive")
        if not 0.0 <= self.noise < 1.0:
            raise ConfigError(f"noise {self.noise} outside [0, 1)")
        for name, n in (("n_train", self.n_train), ("n_val", self.n_val), ("n_test", self.n_test)):
            if n < self.num_classes:
                raise ConfigError(f"{name}={n} cannot cover {self.num_classes} classes")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown dataset fields: {sorted(extra)}")
        if "kind" not in doc:
            raise ConfigError("dataset spec needs a 'kind'")
        spec = cls(**doc)
        spec.validate()
        return spec


@dataclass
class DatasetSplits:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    spec: DatasetSpec
    seed: int

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes


def _class_counts(n: int, num_classes: int) -> np.ndarray:
    counts = np.full(num_classes, n // num_classes, dtype=np.int64)
    counts[: n % num_classes] += 1
    return counts


def _class_means(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    """Means for paired classes: (2i, 2i+1) share a center and sit on
    opposite sides of it; an unpaired trailing class sits at its center."""
    d = spec.dim
    basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    means = np.zeros((spec.num_classes, d))
    half_gap = 0.5 * PAIR_SEPARATION * (1.0 - spec.overlap)
    for pair in range((spec.num_classes + 1) // 2):
        center = CENTER_SCALE * basis[:, (2 * pair) % d]
        axis = basis[:, (2 * pair + 1) % d]
        lo = 2 * pair
        means[lo] = center + half_gap * axis
        if lo + 1 < spec.num_classes:
            means[lo + 1] = center - half_gap * axis
    return means


def _sample_split(means: np.ndarray, counts: np.ndarray, rng: np.random.Generator):
    labels = np.repeat(np.arange(len(counts)), counts)
    x = means[labels] + rng.standard_normal((len(labels), means.shape[1]))
    perm = rng.permutation(len(labels))
    return x[perm], labels[perm]


def _flip_labels(y: np.ndarray, num_classes: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    if noise <= 0.0:
        return y
    y = y.copy()
    n_flip = int(round(noise * len(y)))
    victims = rng.choice(len(y), size=n_flip, replace=False)
    # shift by 1..C-1 so the flipped label always differs from the original
    shifts = rng.integers(1, num_classes, size=n_flip)
    y[victims] = (y[victims] + shifts) % num_classes
    return y


def _binary_counts(n: int, ratio: float) -> np.ndarray:
    n_pos = int(round(n / (1.0 + ratio)))
    n_pos = min(max(n_pos, 1), n - 1)
    return np.asarray([n - n_pos, n_pos], dtype=np.int64)


def generate_dataset(spec: DatasetSpec, seed: int) -> DatasetSplits:
    """Draw train/validation/test splits; a pure function of (spec, seed)."""
    spec.validate()
    rng = stream(seed, "dataset", spec.kind)
    if spec.kind == "imbalanced-binary":
        u = rng.standard_normal(spec.dim)
        u /= np.linalg.norm(u)
        half_gap = 0.5 * PAIR_SEPARATION * (1.0 - spec.overlap)
        means = np.stack([-half_gap * u, half_gap * u])
        count_of = lambda n: _binary_counts(n, spec.imbalance_ratio)
    else:
        means = _class_means(spec, rng)
        count_of = lambda n: _class_counts(n, spec.num_classes)

    x_train, y_train = _sample_split(means, count_of(spec.n_train), rng)
    x_val, y_val = _sample_split(means, count_of(spec.n_val), rng)
    x_test, y_test = _sample_split(means, count_of(spec.n_test), rng)
    y_train = _flip_labels(y_train, spec.num_classes, spec.noise, rng)
    return DatasetSplits(x_train, y_train, x_val, y_val, x_test, y_test, spec, seed)


def save_splits(path: str, splits: DatasetSplits) -> None:
    np.savez(
        path,
        x_train=splits.x_train,
        y_train=splits.y_train,
        x_val=splits.x_val,
        y_val=splits.y_val,
        x_test=splits.x_test,
        y_test=splits.y_test,
        spec=np.frombuffer(json.dumps(splits.spec.to_dict()).encode(), dtype=np.uint8),
        seed=np.asarray(splits.seed),
    )


def load_splits(path: str) -> DatasetSplits:
    with np.load(path) as z:
        spec = DatasetSpec.from_dict(json.loads(bytes(z["spec"]).decode()))
        return DatasetSplits(
            z["x_train"], z["y_train"], z["x_val"], z["y_val"],
            z["x_test"], z["y_test"], spec, int(z["seed"]),
        )


# -- IDX image files (optional, read-only) ---------------------------------------

_IDX_DTYPES = {
    0x08: np.uint8, 0x09: np.int8, 0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8"),
}


def load_idx(path: str) -> np.ndarray:
    """Read one IDX file (gzipped or raw) into an array."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise InputError(f"{path}: not an IDX file (bad magic)")
    type_code, ndim = raw[2], raw[3]
    if type_code not in _IDX_DTYPES:
        raise InputError(f"{path}: unknown IDX element type 0x{type_code:02x}")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise InputError(f"{path}: truncated IDX header")
    shape = struct.unpack(f">{ndim}i", raw[4:header_end])
    dtype = _IDX_DTYPES[type_code]
    data = np.frombuffer(raw, dtype=dtype, offset=header_end)
    if data.size != int(np.prod(shape)):
        raise InputError(f"{path}: IDX payload size does not match header {shape}")
    return data.reshape(shape)


def load_idx_dataset(
    images_path: str,
    labels_path: str,
    limit: int | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Read an (images, labels) IDX pair, flatten images to rows scaled to
    [0, 1], and optionally subsample without replacement."""
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise InputError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    x = images.reshape(images.shape[0], -1).astype(np.float64)
    if x.size and x.max() > 1.0:
        x = x / 255.0
    y = labels.astype(np.int64).ravel()
    if limit is not None and limit < len(x):
        picks = stream(seed, "idx-subsample").choice(len(x), size=limit, replace=False)
        x, y = x[picks], y[picks]
    return x, y
