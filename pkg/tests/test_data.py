import gzip
import json
import struct

import numpy as np
import pytest

from fedsim import data
from fedsim.data import (
    ClientPartition,
    Dataset,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    PartitionError,
    batches,
    label_histogram,
    load_idx,
    partition_iid,
    partition_label_skew,
    partition_quantity_skew,
    synth_dataset,
    write_partition_jsonl,
)
from fedsim.rng import RngStream
from fedsim.tensor import Tensor


def _idx_pair(tmp_path, pixels, labels, rows=2, cols=2, gz=False):
    count = len(labels)
    image_bytes = struct.pack(">IIII", 0x00000803, count, rows, cols) + bytes(pixels)
    label_bytes = struct.pack(">II", 0x00000801, count) + bytes(labels)
    suffix = ".gz" if gz else ""
    images = tmp_path / f"images{suffix}"
    labelf = tmp_path / f"labels{suffix}"
    images.write_bytes(gzip.compress(image_bytes) if gz else image_bytes)
    labelf.write_bytes(gzip.compress(label_bytes) if gz else label_bytes)
    return images, labelf


def test_load_idx_scales_and_flattens(tmp_path):
    images, labels = _idx_pair(tmp_path, [0, 128, 255, 64, 10, 20, 30, 40], [3, 1])
    ds = load_idx(images, labels)
    assert ds.input_dim == 4
    assert len(ds) == 2
    assert ds.inputs.array[0].tolist() == pytest.approx(
        [0.0, 128 / 255, 1.0, 64 / 255], abs=1e-7
    )
    assert ds.labels.tolist() == [3, 1]
    assert ds.num_classes == 4  # max label + 1 when not declared


def test_load_idx_gzip(tmp_path):
    images, labels = _idx_pair(tmp_path, [255, 0, 0, 0], [1], gz=True)
    ds = load_idx(images, labels)
    assert ds.inputs.array[0, 0] == 1.0


def test_load_idx_explicit_num_classes(tmp_path):
    images, labels = _idx_pair(tmp_path, [0, 0, 0, 0], [1], gz=False)
    assert load_idx(images, labels, num_classes=10).num_classes == 10


def test_load_idx_bad_image_magic(tmp_path):
    images, labels = _idx_pair(tmp_path, [0, 0, 0, 0], [0])
    images.write_bytes(struct.pack(">IIII", 0x00000801, 1, 2, 2) + bytes(4))
    with pytest.raises(IdxMagicError):
        load_idx(images, labels)


def test_load_idx_truncated_pixels(tmp_path):
    images, labels = _idx_pair(tmp_path, [0, 0, 0, 0], [0])
    images.write_bytes(images.read_bytes()[:-2])
    with pytest.raises(IdxTruncatedError):
        load_idx(images, labels)


def test_load_idx_count_mismatch(tmp_path):
    images, _ = _idx_pair(tmp_path, [0, 0, 0, 0], [0])
    labels = tmp_path / "labels2"
    labels.write_bytes(struct.pack(">II", 0x00000801, 2) + bytes([0, 1]))
    with pytest.raises(IdxCountMismatchError):
        load_idx(images, labels)


def test_synth_dataset_shapes_and_range():
    ds = synth_dataset(RngStream(0, ("d",)), n_per_class=20, num_classes=3, input_dim=15)
    assert len(ds) == 60
    assert ds.input_dim == 15
    arr = ds.inputs.array
    assert arr.min() >= 0.0 and arr.max() <= 1.0
    assert ds.labels.tolist() == [0] * 20 + [1] * 20 + [2] * 20


def test_synth_dataset_deterministic_and_stream_sensitive():
    a = synth_dataset(RngStream(5, ("d",)), 10, 2, 8)
    b = synth_dataset(RngStream(5, ("d",)), 10, 2, 8)
    c = synth_dataset(RngStream(6, ("d",)), 10, 2, 8)
    assert np.array_equal(a.inputs.array, b.inputs.array)
    assert not np.array_equal(a.inputs.array, c.inputs.array)


def test_synth_dataset_classes_are_learnably_distinct():
    ds = synth_dataset(RngStream(1, ("d",)), 50, 2, 64)
    class_means = [ds.inputs.array[ds.labels == c].mean(axis=0) for c in (0, 1)]
    assert float(np.abs(class_means[0] - class_means[1]).max()) > 0.05


def test_dataset_rejects_out_of_range_labels():
    with pytest.raises(ValueError):
        Dataset(Tensor([[0.5]]), np.array([2]), num_classes=2)


def test_dataset_rejects_out_of_range_inputs():
    with pytest.raises(ValueError):
        Dataset(Tensor([[1.5]]), np.array([0]), num_classes=2)


def _toy_dataset(n=60, num_classes=3, seed=0):
    gen = np.random.default_rng(seed)
    inputs = Tensor(gen.random((n, 4)).astype(np.float32))
    labels = gen.integers(0, num_classes, n)
    return Dataset(inputs, labels, num_classes=num_classes)


def _assert_sound(partition, n):
    union = np.concatenate(partition.clients)
    assert len(union) == n
    assert len(np.unique(union)) == n
    assert all(len(c) > 0 for c in partition.clients)


def test_partition_iid_sizes_near_equal():
    ds = _toy_dataset(n=64)
    part = partition_iid(ds, 6, RngStream(0, ("p",)))
    _assert_sound(part, 64)
    assert max(part.sizes) - min(part.sizes) <= 1


def test_partition_iid_k_bounds():
    ds = _toy_dataset(n=10)
    with pytest.raises(PartitionError):
        partition_iid(ds, 0, RngStream(0, ("p",)))
    with pytest.raises(PartitionError):
        partition_iid(ds, 11, RngStream(0, ("p",)))


def test_partition_label_skew_single_class_per_client():
    ds = synth_dataset(RngStream(2, ("d",)), 30, 4, 6)
    part = partition_label_skew(ds, 8, RngStream(0, ("p",)))
    _assert_sound(part, len(ds))
    hist = label_histogram(ds, part)
    assert (np.count_nonzero(hist, axis=1) == 1).all()
    # client i holds class i mod num_classes
    for i in range(8):
        assert hist[i].argmax() == i % 4


def test_partition_label_skew_rejects_small_k():
    ds = synth_dataset(RngStream(2, ("d",)), 10, 4, 6)
    with pytest.raises(PartitionError):
        partition_label_skew(ds, 3, RngStream(0, ("p",)))


def test_partition_quantity_skew_hand_case():
    # N=150, k=3, ratio=4 splits as a geometric ladder
    ds = _toy_dataset(n=150)
    part = partition_quantity_skew(ds, 3, 4.0, RngStream(0, ("p",)))
    _assert_sound(part, 150)
    assert list(part.sizes) == [21, 43, 86]


def test_partition_quantity_skew_single_client():
    ds = _toy_dataset(n=37)
    part = partition_quantity_skew(ds, 1, 4.0, RngStream(0, ("p",)))
    assert part.sizes == (37,)


def test_partition_quantity_skew_rejects_bad_ratio():
    ds = _toy_dataset(n=30)
    with pytest.raises(PartitionError):
        partition_quantity_skew(ds, 3, 0.5, RngStream(0, ("p",)))


def test_partition_quantity_skew_rejects_vanishing_client():
    ds = _toy_dataset(n=20)
    with pytest.raises(PartitionError):
        partition_quantity_skew(ds, 10, 1000.0, RngStream(0, ("p",)))


def test_client_partition_rejects_overlap():
    with pytest.raises(PartitionError):
        ClientPartition((np.array([0, 1]), np.array([1, 2])))


def test_client_partition_rejects_empty_client():
    with pytest.raises(PartitionError):
        ClientPartition((np.array([0]), np.array([], dtype=np.int64)))


def test_batches_cover_client_exactly():
    ds = _toy_dataset(n=50)
    idx = np.arange(17)
    got = batches(ds, idx, 5, RngStream(0, ("b",)))
    assert [len(b) for b in got] == [5, 5, 5, 2]
    seen = np.concatenate([b.labels for b in got])
    assert sorted(seen.tolist()) == sorted(ds.labels[idx].tolist())


def test_batches_reshuffle_differs_by_stream():
    ds = _toy_dataset(n=30)
    idx = np.arange(30)
    a = batches(ds, idx, 30, RngStream(0, ("e", 0)))[0]
    b = batches(ds, idx, 30, RngStream(0, ("e", 1)))[0]
    assert not np.array_equal(a.inputs.array, b.inputs.array)


def test_label_histogram_counts():
    ds = _toy_dataset(n=40, num_classes=4)
    part = partition_iid(ds, 5, RngStream(1, ("p",)))
    hist = label_histogram(ds, part)
    assert hist.shape == (5, 4)
    assert hist.sum() == 40
    assert np.array_equal(hist.sum(axis=1), np.array(part.sizes))


def test_write_partition_jsonl(tmp_path):
    ds = _toy_dataset(n=30, num_classes=3)
    part = partition_iid(ds, 3, RngStream(2, ("p",)))
    path = tmp_path / "partition.jsonl"
    write_partition_jsonl(ds, part, path)
    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["client_id"] for r in records] == [0, 1, 2]
    assert sum(r["n_k"] for r in records) == 30
    for r in records:
        assert sum(r["label_counts"]) == r["n_k"]
