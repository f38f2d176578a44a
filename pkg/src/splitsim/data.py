"""Synthetic image data, IDX loading, client partitioning and poisoning.

The synthetic task is deliberately easy: each class is a fixed random
grayscale pattern and samples are noisy copies of it, so a small dense
network separates the classes within a few rounds and experiment behavior
is dominated by the protocol rather than the dataset.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IdxFormatError, InputError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

MIN_PATTERN_SEPARATION = 1.0


@dataclass
class Dataset:
    """Feature matrix in [0, 1] with integer labels.

    ``image_dims`` is set when samples are flattened (height, width) images;
    trigger stamping requires it. Instances are treated as immutable: every
    transformation returns a new Dataset over copied arrays.
    """

    samples: np.ndarray
    labels: np.ndarray
    classes: int
    image_dims: tuple[int, int] | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2 or self.labels.shape != (self.samples.shape[0],):
            raise InputError("samples must be (n, d) with one label per row")
        if self.samples.size and (self.samples.min() < 0.0 or self.samples.max() > 1.0):
            raise InputError("features must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise InputError("labels must lie in [0, classes)")
        if self.image_dims is not None:
            h, w = self.image_dims
            if h * w != self.samples.shape[1]:
                raise InputError("image_dims do not match the feature width")

    def __len__(self) -> int:
        return self.samples.shape[0]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.samples[indices].copy(), self.labels[indices].copy(),
                       self.classes, self.image_dims)


@dataclass
class TriggerSpec:
    """Square pixel-block trigger stamped into the image corner."""

    block_origin: tuple[int, int] = (0, 0)
    block_size: tuple[int, int] = (2, 2)
    intensity: float = 1.0
    target_label: int = 0

    def __post_init__(self):
        if self.block_size[0] < 1 or self.block_size[1] < 1:
            raise ConfigError("trigger block must be at least 1x1")
        if not 0.0 <= self.intensity <= 1.0:
            raise ConfigError("trigger intensity must lie in [0, 1]")


@dataclass
class PartitionPlan:
    """Per-client sample indices plus how they were drawn."""

    client_indices: list[np.ndarray]
    main_labels: list[int]
    iid_rate: float
    with_replacement: bool = False  # set when a main label ran out of samples


def generate_synthetic(
    classes: int,
    per_class: int,
    dims: tuple[int, int],
    noise_sigma: float,
    seed: int,
    pattern_seed: int | None = None,
) -> Dataset:
    """Noisy copies of one fixed random pattern per class, clipped to [0, 1].

    Patterns are drawn from their own stream (``pattern_seed``, derived from
    ``seed`` when omitted) so train and test sets can share patterns while
    using independent noise. Patterns are redrawn until all pairwise
    distances reach the minimum separation; with reasonably sized images
    the first draw always satisfies it.
    """
    if classes < 2:
        raise ConfigError("need at least two classes")
    if per_class < 1:
        raise ConfigError("need at least one sample per class")
    h, w = dims
    if h * w < classes:
        raise ConfigError(f"{h}x{w} images cannot hold {classes} separated patterns")
    if noise_sigma < 0.0:
        raise ConfigError("noise_sigma must be nonnegative")

    pattern_rng = np.random.default_rng(
        pattern_seed if pattern_seed is not None else seed + 0x5EED
    )
    for _ in range(100):
        patterns = pattern_rng.uniform(0.0, 1.0, size=(classes, h * w))
        gaps = np.linalg.norm(patterns[:, None, :] - patterns[None, :, :], axis=2)
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() >= MIN_PATTERN_SEPARATION:
            break
    else:
        raise ConfigError("could not draw sufficiently separated class patterns")

    rng = np.random.default_rng(seed)
    samples = np.repeat(patterns, per_class, axis=0)
    samples = samples + rng.normal(0.0, noise_sigma, size=samples.shape)
    np.clip(samples, 0.0, 1.0, out=samples)
    labels = np.repeat(np.arange(classes), per_class)
    return Dataset(samples, labels, classes, (h, w))


def _read_exact(handle, count: int, offset: int, what: str) -> bytes:
    data = handle.read(count)
    if len(data) != count:
        raise IdxFormatError(f"truncated IDX file while reading {what}", offset)
    return data


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair into a Dataset.

    Both files are big-endian: images carry magic 0x00000803 followed by
    count/rows/cols and raw bytes, labels carry magic 0x00000801 followed
    by count and one byte per label. Pixels are scaled to [0, 1] by 255.
    """
    with open(images_path, "rb") as f:
        (magic,) = struct.unpack(">i", _read_exact(f, 4, 0, "image magic"))
        if magic != IDX_IMAGE_MAGIC:
            raise IdxFormatError(f"bad image magic 0x{magic:08x}", 0)
        count, rows, cols = struct.unpack(">iii", _read_exact(f, 12, 4, "image header"))
        if count < 0 or rows < 1 or cols < 1:
            raise IdxFormatError("nonsensical image header", 4)
        pixels = _read_exact(f, count * rows * cols, 16, "pixel data")
    with open(labels_path, "rb") as f:
        (magic,) = struct.unpack(">i", _read_exact(f, 4, 0, "label magic"))
        if magic != IDX_LABEL_MAGIC:
            raise IdxFormatError(f"bad label magic 0x{magic:08x}", 0)
        (label_count,) = struct.unpack(">i", _read_exact(f, 4, 4, "label header"))
        raw_labels = _read_exact(f, label_count, 8, "label data")
    if label_count != count:
        raise IdxFormatError(
            f"image count {count} does not match label count {label_count}", 4
        )
    samples = np.frombuffer(pixels, dtype=np.uint8).astype(np.float64) / 255.0
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    classes = int(labels.max()) + 1 if count else 1
    return Dataset(samples.reshape(count, rows * cols), labels, classes, (rows, cols))


def partition_main_label(
    dataset: Dataset,
    n_clients: int,
    iid_rate: float,
    seed: int,
) -> PartitionPlan:
    """Split a dataset into disjoint, near-equal client shards.

    Each client is assigned a main label and fills a ``1 - iid_rate``
    fraction of its shard from that label only; the rest is drawn uniformly
    from the remaining pool. Main-label draws happen for all clients before
    any uniform draws so late clients are not starved of their label. If a
    label still runs out, the shortfall is drawn with replacement and the
    plan is flagged.
    """
    if n_clients < 1:
        raise ConfigError("need at least one client")
    if not 0.0 <= iid_rate <= 1.0:
        raise ConfigError("iid_rate must lie in [0, 1]")
    if len(dataset) < n_clients:
        raise ConfigError("fewer samples than clients")

    rng = np.random.default_rng(seed)
    if n_clients <= dataset.classes:
        main_labels = rng.permutation(dataset.classes)[:n_clients]
    else:
        main_labels = rng.integers(0, dataset.classes, size=n_clients)
    main_labels = [int(l) for l in main_labels]

    base, extra = divmod(len(dataset), n_clients)
    shard_sizes = [base + (1 if i < extra else 0) for i in range(n_clients)]
    main_counts = [size - int(round(iid_rate * size)) for size in shard_sizes]

    by_label = {
        label: list(np.flatnonzero(dataset.labels == label))
        for label in range(dataset.classes)
    }
    taken: list[list[int]] = [[] for _ in range(n_clients)]
    with_replacement = False

    for client in range(n_clients):
        label = main_labels[client]
        pool = by_label[label]
        want = main_counts[client]
        grab = min(want, len(pool))
        if grab:
            picked = rng.choice(len(pool), size=grab, replace=False)
            picked_set = set(int(p) for p in picked)
            taken[client].extend(pool[p] for p in picked_set)
            by_label[label] = [x for i, x in enumerate(pool) if i not in picked_set]
        if grab < want:
            with_replacement = True
            all_of_label = np.flatnonzero(dataset.labels == label)
            taken[client].extend(
                int(x) for x in rng.choice(all_of_label, size=want - grab, replace=True)
            )

    remaining = np.array(
        sorted(x for pool in by_label.values() for x in pool), dtype=np.int64
    )
    rng.shuffle(remaining)
    cursor = 0
    for client in range(n_clients):
        need = shard_sizes[client] - len(taken[client])
        taken[client].extend(int(x) for x in remaining[cursor:cursor + need])
        cursor += need

    return PartitionPlan(
        [np.array(sorted(t), dtype=np.int64) for t in taken],
        main_labels, iid_rate, with_replacement,
    )


def stamp_trigger(dataset: Dataset, trigger: TriggerSpec) -> Dataset:
    """Stamp the trigger block into every sample; labels stay untouched."""
    if dataset.image_dims is None:
        raise InputError("trigger stamping needs image-shaped samples")
    h, w = dataset.image_dims
    r0, c0 = trigger.block_origin
    bh, bw = trigger.block_size
    if r0 < 0 or c0 < 0 or r0 + bh > h or c0 + bw > w:
        raise InputError("trigger block falls outside the image")
    images = dataset.samples.reshape(-1, h, w).copy()
    images[:, r0:r0 + bh, c0:c0 + bw] = trigger.intensity
    return Dataset(images.reshape(len(dataset), h * w), dataset.labels.copy(),
                   dataset.classes, dataset.image_dims)


def poison_pixel_trigger(
    shard: Dataset,
    trigger: TriggerSpec,
    pdr: float,
    seed: int = 0,
) -> Dataset:
    """Stamp the trigger into a ``pdr`` fraction of the shard (seeded choice)
    and relabel those samples to the trigger's target. The count is exact:
    ``int(pdr * n + 0.5)`` samples are poisoned; the rest are byte-identical
    to the input.
    """
    if not 0.0 < pdr <= 1.0:
        raise InputError("pdr must lie in (0, 1]")
    if not 0 <= trigger.target_label < shard.classes:
        raise InputError("trigger target outside the label range")
    rng = np.random.default_rng(seed)
    n_poison = int(pdr * len(shard) + 0.5)
    chosen = rng.choice(len(shard), size=n_poison, replace=False)
    stamped = stamp_trigger(shard.subset(chosen), trigger)
    samples = shard.samples.copy()
    labels = shard.labels.copy()
    samples[chosen] = stamped.samples
    labels[chosen] = trigger.target_label
    return Dataset(samples, labels, shard.classes, shard.image_dims)


def poison_label_swap(shard: Dataset, class_a: int, class_b: int) -> Dataset:
    """Swap the labels of two classes; features are untouched (involution)."""
    if class_a == class_b:
        raise InputError("label swap needs two distinct classes")
    for c in (class_a, class_b):
        if not 0 <= c < shard.classes:
            raise InputError("swap class outside the label range")
    labels = shard.labels.copy()
    labels[shard.labels == class_a] = class_b
    labels[shard.labels == class_b] = class_a
    return Dataset(shard.samples.copy(), labels, shard.classes, shard.image_dims)
