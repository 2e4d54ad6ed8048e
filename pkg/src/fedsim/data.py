"""Dataset ingestion and the client partitioners.

Two sources: IDX image/label file pairs (the classic big-endian format:
4-byte magic 0x00000803 for images / 0x00000801 for labels, big-endian
4-byte dimension sizes, then raw unsigned bytes), and a synthetic
Gaussian-blob generator so the test suite and recipes run without any
downloads. Pixels are scaled by 1/255 into [0, 1].

Partitioners split a dataset's example indices across k simulated client
devices. All of them are deterministic functions of their stream and
produce pairwise-disjoint, covering, non-empty index lists:

  partition_iid           shuffle, then near-equal contiguous slices
  partition_label_skew    client i holds only class (i mod num_classes);
                          a class's examples split evenly among its clients
  partition_quantity_skew client sizes follow a geometric progression with
                          max/min close to the requested ratio, labels IID
"""
from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .models import Batch
from .tensor import DTYPE, Tensor

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxError(ValueError):
    """Malformed IDX input."""


class IdxMagicError(IdxError):
    """File does not start with the expected IDX magic number."""


class IdxTruncatedError(IdxError):
    """File ends before the declared payload is complete."""


class IdxCountMismatchError(IdxError):
    """Image and label files declare different example counts."""


class PartitionError(ValueError):
    """A partitioner cannot satisfy its contract for these arguments."""


@dataclass(frozen=True)
class Dataset:
    """Flat feature matrix in [0, 1] plus integer labels."""

    inputs: Tensor
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        if len(self.inputs.shape) != 2 or self.inputs.shape[0] != len(labels):
            raise ValueError("inputs must be N x d with one label per row")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        arr = self.inputs.array
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("inputs must be finite and within [0, 1]")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class ClientPartition:
    """Pairwise-disjoint, non-empty index lists, one per client."""

    clients: tuple[np.ndarray, ...]

    def __post_init__(self):
        frozen = []
        seen = 0
        merged = []
        for idx in self.clients:
            arr = np.asarray(idx, dtype=np.int64)
            if arr.size == 0:
                raise PartitionError("every client must be non-empty")
            arr.flags.writeable = False
            frozen.append(arr)
            seen += arr.size
            merged.append(arr)
        object.__setattr__(self, "clients", tuple(frozen))
        if not frozen:
            raise PartitionError("a partition needs at least one client")
        union = np.concatenate(merged)
        if len(np.unique(union)) != seen:
            raise PartitionError("client index lists overlap")
        if union.min() < 0:
            raise PartitionError("negative example index")

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    @property
    def sizes(self) -> tuple[int, ...]:
        """n_k per client."""
        return tuple(len(c) for c in self.clients)


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise IdxTruncatedError(f"unexpected end of file while reading {what}")
    return buf


def _open_maybe_gz(path):
    p = Path(path)
    if p.suffix == ".gz":
        return gzip.open(p, "rb")
    return open(p, "rb")


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Load an IDX image/label file pair into a flat [0, 1] dataset."""
    with _open_maybe_gz(images_path) as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != IMAGE_MAGIC:
            raise IdxMagicError(f"image file magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
        pixels = np.frombuffer(
            _read_exact(f, count * rows * cols, "image pixels"), dtype=np.uint8
        )
    with _open_maybe_gz(labels_path) as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != LABEL_MAGIC:
            raise IdxMagicError(f"label file magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")
        labels = np.frombuffer(_read_exact(f, label_count, "labels"), dtype=np.uint8)
    if label_count != count:
        raise IdxCountMismatchError(f"{count} images but {label_count} labels")
    inputs = Tensor._wrap(pixels.astype(DTYPE).reshape(count, rows * cols) / DTYPE(255.0))
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return Dataset(inputs=inputs, labels=labels.astype(np.int64), num_classes=num_classes)


# Class centers come from a fixed internal stream so the same class always
# means the same region of feature space, whatever dataset stream is used.
_CENTER_SEED = 727_565_350
_DEFAULT_NOISE = 0.15
_SUPPORT_FRACTION = 0.3
_CLASS_CONTRAST = 0.15


def _class_center(c: int, input_dim: int) -> np.ndarray:
    # Pixel-like centers: a bright pattern shared by every class on ~30% of
    # the dims, zero elsewhere, with a small class-specific contrast on the
    # same support. Shared support keeps classes confusable (so learning
    # does not saturate instantly) and keeps most dims dark (so gradient
    # norms stay in the range the default learning rates expect).
    active = max(1, round(_SUPPORT_FRACTION * input_dim))
    dims = rng.sample_without_replacement(
        rng.RngStream(_CENTER_SEED, ("support",)), input_dim, active
    )
    center = np.zeros(input_dim, dtype=DTYPE)
    base = rng.uniform(rng.RngStream(_CENTER_SEED, ("base",)), 0.3, 0.7, active).data
    offset = rng.uniform(
        rng.RngStream(_CENTER_SEED, (c, "pattern")), -_CLASS_CONTRAST, _CLASS_CONTRAST, active
    ).data
    center[dims] = np.clip(base + offset, 0.0, 1.0)
    return center


def synth_dataset(
    stream: rng.RngStream,
    n_per_class: int,
    num_classes: int,
    input_dim: int,
    noise: float = _DEFAULT_NOISE,
) -> Dataset:
    """Noisy copies of fixed per-class centers, clipped to [0, 1].

    Each class lights up its own random ~15% of the dims; everything else
    is clipped noise around zero. Examples are laid out class-major: the
    first n_per_class rows are class 0, and so on.
    """
    if n_per_class < 1 or num_classes < 1 or input_dim < 1:
        raise ValueError("n_per_class, num_classes and input_dim must all be >= 1")
    blocks = []
    for c in range(num_classes):
        center = _class_center(c, input_dim)
        noise_flat = rng.normal(stream.child(c), 0.0, noise, n_per_class * input_dim).data
        block = center + noise_flat.reshape(n_per_class, input_dim)
        blocks.append(np.clip(block, 0.0, 1.0))
    inputs = Tensor._wrap(np.concatenate(blocks, axis=0))
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), n_per_class)
    return Dataset(inputs=inputs, labels=labels, num_classes=num_classes)


def partition_iid(dataset: Dataset, k: int, stream: rng.RngStream) -> ClientPartition:
    """Random shuffle, then contiguous split; client sizes differ by at most 1."""
    n = len(dataset)
    if k < 1 or k > n:
        raise PartitionError(f"need 1 <= k <= {n}, got k={k}")
    perm = rng.shuffle(stream, n)
    return ClientPartition(tuple(np.array_split(perm, k)))


def partition_label_skew(dataset: Dataset, k: int, stream: rng.RngStream) -> ClientPartition:
    """Each client holds exactly one class: client i gets class i mod num_classes.

    A class's examples are split evenly (sizes differ by at most 1) among
    the clients assigned to it. Rejected when k < num_classes, since some
    client would otherwise need a second class.
    """
    c = dataset.num_classes
    if k < c:
        raise PartitionError(f"single-label partition needs k >= num_classes ({c}), got k={k}")
    client_indices: list[np.ndarray | None] = [None] * k
    for cls in range(c):
        owners = list(range(cls, k, c))
        members = np.flatnonzero(dataset.labels == cls)
        if len(members) < len(owners):
            raise PartitionError(
                f"class {cls} has {len(members)} examples for {len(owners)} clients"
            )
        order = members[rng.shuffle(stream.child(cls), len(members))]
        for owner, part in zip(owners, np.array_split(order, len(owners))):
            client_indices[owner] = part
    return ClientPartition(tuple(client_indices))


def _geometric_sizes(n: int, k: int, ratio: float) -> list[int]:
    # Ascending sizes a*g^i rounded by largest remainder so they sum to n.
    if k == 1:
        return [n]
    g = ratio ** (1.0 / (k - 1))
    raw = np.array([g**i for i in range(k)], dtype=np.float64)
    raw *= n / raw.sum()
    floors = np.floor(raw).astype(np.int64)
    remainder = n - int(floors.sum())
    by_fraction = sorted(range(k), key=lambda i: (raw[i] - floors[i], i), reverse=True)
    for i in by_fraction[:remainder]:
        floors[i] += 1
    return [int(s) for s in floors]


def partition_quantity_skew(
    dataset: Dataset, k: int, ratio: float, stream: rng.RngStream
) -> ClientPartition:
    """Client sizes follow a geometric progression with max/min ~ ratio; labels IID."""
    n = len(dataset)
    if ratio < 1.0:
        raise PartitionError(f"ratio must be >= 1, got {ratio}")
    if k < 1 or k > n:
        raise PartitionError(f"need 1 <= k <= {n}, got k={k}")
    sizes = _geometric_sizes(n, k, ratio)
    if min(sizes) < 1:
        raise PartitionError(f"smallest client size rounds to zero for n={n}, k={k}, ratio={ratio}")
    perm = rng.shuffle(stream, n)
    bounds = np.cumsum(sizes)[:-1]
    return ClientPartition(tuple(np.split(perm, bounds)))


def batches(
    dataset: Dataset, client_indices: np.ndarray, batch_size: int, stream: rng.RngStream
) -> list[Batch]:
    """The client's examples reshuffled and chunked; the last batch may be short."""
    n = len(client_indices)
    if n < 1:
        raise ValueError("client has no examples")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.asarray(client_indices)[rng.shuffle(stream, n)]
    out = []
    for start in range(0, n, batch_size):
        rows = order[start : start + batch_size]
        out.append(Batch(Tensor(dataset.inputs.array[rows]), dataset.labels[rows]))
    return out


def label_histogram(dataset: Dataset, partition: ClientPartition) -> np.ndarray:
    """Per-client class counts: a num_clients x num_classes integer matrix."""
    counts = np.zeros((partition.num_clients, dataset.num_classes), dtype=np.int64)
    for i, idx in enumerate(partition.clients):
        counts[i] = np.bincount(dataset.labels[idx], minlength=dataset.num_classes)
    return counts


def write_partition_jsonl(dataset: Dataset, partition: ClientPartition, path) -> None:
    """One record per client: {client_id, n_k, label_counts}."""
    hist = label_histogram(dataset, partition)
    with open(path, "w", newline="\n") as f:
        for i, idx in enumerate(partition.clients):
            record = {"client_id": i, "n_k": int(len(idx)), "label_counts": hist[i].tolist()}
            f.write(json.dumps(record) + "\n")
