"""Datasets, synthetic generators, raw binary records and Dirichlet partitioning."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class PartitionError(RuntimeError):
    pass


class RawFormatError(ValueError):
    pass


@dataclass
class LabeledDataset:
    x: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} samples but {len(self.y)} labels")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.x.shape[1:])

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.x[idx], self.y[idx], self.n_classes)


@dataclass
class PublicDataset:
    """Unlabeled samples; there is deliberately no label field."""

    x: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.x.shape[1:])


@dataclass(frozen=True)
class PartitionSpec:
    n_clients: int
    alpha: float = 1.0
    seed: int = 0
    min_size: int = 32
    max_retries: int = 1000

    def __post_init__(self) -> None:
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


def class_counts(ds: LabeledDataset) -> np.ndarray:
    return np.bincount(ds.y, minlength=ds.n_classes).astype(np.int64)


def dirichlet_partition_indices(
    labels: np.ndarray, n_classes: int, spec: PartitionSpec
) -> list[np.ndarray]:
    """Per class, split the shuffled class indices by Dirichlet(alpha) client shares."""
    labels = np.asarray(labels)
    n = spec.n_clients
    if len(labels) == 0:
        raise PartitionError("cannot partition an empty dataset")
    if n == 1:
        return [np.arange(len(labels))]
    if n * spec.min_size > len(labels):
        raise PartitionError(
            f"{len(labels)} samples cannot give {n} clients {spec.min_size} samples each"
        )
    rng = np.random.default_rng(spec.seed)
    by_class = [np.flatnonzero(labels == t) for t in range(n_classes)]
    for _ in range(spec.max_retries):
        shards: list[list[np.ndarray]] = [[] for _ in range(n)]
        for idx in by_class:
            if len(idx) == 0:
                continue
            idx = rng.permutation(idx)
            share = rng.dirichlet(np.full(n, spec.alpha))
            cuts = (np.cumsum(share) * len(idx)).astype(int)[:-1]
            for c, part in enumerate(np.split(idx, cuts)):
                shards[c].append(part)
        out = [np.sort(np.concatenate(s)) for s in shards]
        if min(len(s) for s in out) >= spec.min_size:
            return out
    raise PartitionError(
        f"no Dirichlet draw gave every client >= {spec.min_size} samples after "
        f"{spec.max_retries} attempts; use a larger alpha or fewer clients"
    )


def dirichlet_partition(ds: LabeledDataset, spec: PartitionSpec) -> list[LabeledDataset]:
    return [ds.subset(idx) for idx in dirichlet_partition_indices(ds.y, ds.n_classes, spec)]


@dataclass
class GaussianBlobs:
    """Isotropic Gaussian classes in pixel space.

    Class ``t`` draws ``separation * centroid[t] + N(0, noise^2)``; the public
    domain instead draws around random convex mixtures of two centroids, so it
    shares the label geometry without reproducing any class distribution.
    """

    n_classes: int
    input_shape: tuple[int, ...]
    separation: float = 1.0
    noise: float = 1.0
    seed: int = 0
    centroids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.separation < 0:
            raise ValueError("separation must be >= 0")
        self.input_shape = tuple(self.input_shape)
        d = int(np.prod(self.input_shape))
        rng = np.random.default_rng([self.seed, 0])
        self.centroids = rng.standard_normal((self.n_classes, d))

    def labeled(self, per_class: int, seed: int) -> LabeledDataset:
        rng = np.random.default_rng([self.seed, 1, seed])
        y = np.repeat(np.arange(self.n_classes), per_class)
        y = y[rng.permutation(len(y))]
        x = self.separation * self.centroids[y] + self.noise * rng.standard_normal(
            (len(y), self.centroids.shape[1])
        )
        return LabeledDataset(x.reshape(len(y), *self.input_shape).astype(np.float32), y, self.n_classes)

    def public(self, n: int, seed: int) -> PublicDataset:
        rng = np.random.default_rng([self.seed, 2, seed])
        a = rng.integers(self.n_classes, size=n)
        b = rng.integers(self.n_classes, size=n)
        lam = rng.uniform(size=(n, 1))
        mix = lam * self.centroids[a] + (1.0 - lam) * self.centroids[b]
        x = self.separation * mix + self.noise * rng.standard_normal(mix.shape)
        return PublicDataset(x.reshape(n, *self.input_shape).astype(np.float32))


def synth_dataset(
    classes: int,
    per_class: int,
    input_shape: Sequence[int],
    separation: float,
    seed: int,
) -> LabeledDataset:
    return GaussianBlobs(classes, tuple(input_shape), separation, seed=seed).labeled(per_class, 0)


@dataclass(frozen=True)
class RawFormat:
    """Fixed-size records: label bytes then C*H*W pixel bytes in channel-major order.

    With 1 label byte and (3, 32, 32) this is the CIFAR-10 binary layout.
    """

    channels: int
    height: int
    width: int
    n_classes: int
    label_bytes: int = 1
    mean: tuple[float, ...] | None = None
    std: tuple[float, ...] | None = None

    @property
    def pixel_bytes(self) -> int:
        return self.channels * self.height * self.width

    @property
    def record_size(self) -> int:
        return self.label_bytes + self.pixel_bytes


def load_raw(path: str | os.PathLike, fmt: RawFormat) -> LabeledDataset:
    data = np.fromfile(path, dtype=np.uint8)
    if len(data) % fmt.record_size:
        whole = len(data) // fmt.record_size
        raise RawFormatError(
            f"{path}: truncated record at byte offset {whole * fmt.record_size} "
            f"(file has {len(data)} bytes, record size {fmt.record_size})"
        )
    recs = data.reshape(-1, fmt.record_size)
    # last label byte carries the class (CIFAR-100 stores coarse, fine)
    y = recs[:, fmt.label_bytes - 1].astype(np.int64)
    bad = np.flatnonzero(y >= fmt.n_classes)
    if len(bad):
        i = int(bad[0])
        raise RawFormatError(
            f"{path}: label {y[i]} >= {fmt.n_classes} at byte offset {i * fmt.record_size + fmt.label_bytes - 1}"
        )
    x = recs[:, fmt.label_bytes :].reshape(-1, fmt.channels, fmt.height, fmt.width)
    x = x.astype(np.float32) / 255.0
    if fmt.mean is not None or fmt.std is not None:
        mean = np.asarray(fmt.mean or (0.0,) * fmt.channels, np.float32)[:, None, None]
        std = np.asarray(fmt.std or (1.0,) * fmt.channels, np.float32)[:, None, None]
        x = (x - mean) / std
    return LabeledDataset(x, y, fmt.n_classes)


def write_raw(path: str | os.PathLike, ds: LabeledDataset, label_bytes: int = 1) -> None:
    """Inverse of ``load_raw`` for un-normalized data in [0, 1]."""
    n = len(ds)
    pix = np.clip(np.rint(ds.x.reshape(n, -1) * 255.0), 0, 255).astype(np.uint8)
    labels = np.zeros((n, label_bytes), np.uint8)
    labels[:, -1] = ds.y
    np.concatenate([labels, pix], axis=1).tofile(path)


def public_from_raw(path: str | os.PathLike, fmt: RawFormat) -> PublicDataset:
    """Load a raw file as unlabeled public data (labels are discarded)."""
    return PublicDataset(load_raw(path, fmt).x)
