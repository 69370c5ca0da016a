"""Dataset generators, persistence, and the IDX reader."""

import gzip
import struct

import numpy as np
import pytest

from lossalign.data import (
    DatasetSpec,
    generate_dataset,
    load_idx,
    load_idx_dataset,
    load_splits,
    save_splits,
)
from lossalign.exceptions import ConfigError, InputError


def spec(**kw):
    base = dict(kind="confusable-gaussians", num_classes=4, dim=6,
                n_train=64, n_val=32, n_test=32)
    base.update(kw)
    return DatasetSpec(**base)


def test_spec_validation():
    spec().validate()
    with pytest.raises(ConfigError):
        spec(kind="mystery").validate()
    with pytest.raises(ConfigError):
        spec(kind="imbalanced-binary", num_classes=4).validate()
    with pytest.raises(ConfigError):
        spec(num_classes=1).validate()
    with pytest.raises(ConfigError):
        spec(overlap=1.5).validate()
    with pytest.raises(ConfigError):
        spec(imbalance_ratio=0.0).validate()
    with pytest.raises(ConfigError):
        spec(noise=1.0).validate()
    with pytest.raises(ConfigError):
        spec(n_val=3).validate()


def test_spec_from_dict_rejects_unknown_fields():
    with pytest.raises(ConfigError):
        DatasetSpec.from_dict({"kind": "confusable-gaussians", "shape": 3})
    with pytest.raises(ConfigError):
        DatasetSpec.from_dict({"num_classes": 4})
    roundtrip = DatasetSpec.from_dict(spec().to_dict())
    assert roundtrip == spec()


def test_generation_is_deterministic_and_seed_sensitive():
    a = generate_dataset(spec(), seed=0)
    b = generate_dataset(spec(), seed=0)
    c = generate_dataset(spec(), seed=1)
    np.testing.assert_array_equal(a.x_train, b.x_train)
    np.testing.assert_array_equal(a.y_test, b.y_test)
    assert not np.array_equal(a.x_train, c.x_train)


def test_split_shapes_and_label_coverage():
    s = spec(num_classes=5, n_train=67, n_val=33, n_test=40)
    d = generate_dataset(s, seed=3)
    assert d.x_train.shape == (67, 6) and d.y_train.shape == (67,)
    assert d.x_val.shape == (33, 6) and d.x_test.shape == (40, 6)
    for y in (d.y_train, d.y_val, d.y_test):
        assert set(np.unique(y)) == set(range(5))
    # 67 over 5 classes: two classes get the extra sample
    counts = np.bincount(d.y_train, minlength=5)
    assert sorted(counts) == [13, 13, 13, 14, 14]


def test_pair_structure_controls_separation():
    near = generate_dataset(spec(overlap=0.9, n_train=400), seed=5)
    far = generate_dataset(spec(overlap=0.1, n_train=400), seed=5)

    def pair_gap(d):
        m0 = d.x_train[d.y_train == 0].mean(axis=0)
        m1 = d.x_train[d.y_train == 1].mean(axis=0)
        return np.linalg.norm(m0 - m1)

    def cross_gap(d):
        m0 = d.x_train[d.y_train == 0].mean(axis=0)
        m2 = d.x_train[d.y_train == 2].mean(axis=0)
        return np.linalg.norm(m0 - m2)

    assert pair_gap(near) < pair_gap(far)
    # different pairs stay far apart regardless of overlap
    assert cross_gap(near) > 3 * pair_gap(near)


def test_label_noise_flip_fraction():
    s = spec(noise=0.1, n_train=640)
    noisy = generate_dataset(s, seed=7)
    clean = generate_dataset(spec(noise=0.0, n_train=640), seed=7)
    flips = (noisy.y_train != clean.y_train).sum()
    assert flips == round(0.1 * 640)
    # only the training labels are corrupted
    np.testing.assert_array_equal(noisy.y_val, clean.y_val)
    np.testing.assert_array_equal(noisy.y_test, clean.y_test)


def test_imbalanced_binary_ratio():
    s = DatasetSpec(kind="imbalanced-binary", num_classes=2, dim=4,
                    imbalance_ratio=9.0, n_train=200, n_val=100, n_test=100)
    d = generate_dataset(s, seed=11)
    counts = np.bincount(d.y_train, minlength=2)
    assert counts[1] == 20 and counts[0] == 180
    val_counts = np.bincount(d.y_val, minlength=2)
    assert val_counts[1] == 10


def test_imbalanced_binary_keeps_one_positive():
    s = DatasetSpec(kind="imbalanced-binary", num_classes=2, dim=3,
                    imbalance_ratio=500.0, n_train=50, n_val=50, n_test=50)
    d = generate_dataset(s, seed=13)
    assert np.bincount(d.y_train, minlength=2)[1] == 1


def test_save_load_roundtrip(tmp_path):
    d = generate_dataset(spec(noise=0.05), seed=17)
    path = str(tmp_path / "splits.npz")
    save_splits(path, d)
    back = load_splits(path)
    np.testing.assert_array_equal(back.x_train, d.x_train)
    np.testing.assert_array_equal(back.y_train, d.y_train)
    np.testing.assert_array_equal(back.x_test, d.x_test)
    assert back.spec == d.spec
    assert back.seed == 17


# -- IDX reader -------------------------------------------------------------------


def write_idx(path, array, type_code=0x08):
    header = bytes([0, 0, type_code, array.ndim])
    header += struct.pack(f">{array.ndim}i", *array.shape)
    data = header + array.tobytes()
    if str(path).endswith(".gz"):
        with gzip.open(path, "wb") as f:
            f.write(data)
    else:
        path.write_bytes(data)


def test_load_idx_roundtrip(tmp_path):
    img = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
    p = tmp_path / "images.idx"
    write_idx(p, img)
    np.testing.assert_array_equal(load_idx(str(p)), img)


def test_load_idx_gzip(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    p = tmp_path / "images.idx.gz"
    write_idx(p, img)
    np.testing.assert_array_equal(load_idx(str(p)), img)


def test_load_idx_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.idx"
    p.write_bytes(b"\x01\x00\x08\x01\x00\x00\x00\x01x")
    with pytest.raises(InputError):
        load_idx(str(p))


def test_load_idx_rejects_unknown_type(tmp_path):
    p = tmp_path / "bad.idx"
    p.write_bytes(b"\x00\x00\x42\x01" + struct.pack(">i", 1) + b"x")
    with pytest.raises(InputError):
        load_idx(str(p))


def test_load_idx_rejects_short_payload(tmp_path):
    p = tmp_path / "bad.idx"
    p.write_bytes(b"\x00\x00\x08\x01" + struct.pack(">i", 10) + b"abc")
    with pytest.raises(InputError):
        load_idx(str(p))


def test_load_idx_dataset_scales_and_subsamples(tmp_path):
    images = np.full((10, 2, 2), 255, dtype=np.uint8)
    labels = np.arange(10, dtype=np.uint8)
    ip, lp = tmp_path / "i.idx", tmp_path / "l.idx"
    write_idx(ip, images)
    write_idx(lp, labels)
    x, y = load_idx_dataset(str(ip), str(lp))
    assert x.shape == (10, 4)
    assert x.max() == 1.0
    x2, y2 = load_idx_dataset(str(ip), str(lp), limit=4, seed=0)
    assert x2.shape == (4, 4) and len(y2) == 4
    x3, y3 = load_idx_dataset(str(ip), str(lp), limit=4, seed=0)
    np.testing.assert_array_equal(y2, y3)


def test_load_idx_dataset_rejects_count_mismatch(tmp_path):
    write_idx(tmp_path / "i.idx", np.zeros((3, 2, 2), dtype=np.uint8))
    write_idx(tmp_path / "l.idx", np.zeros(4, dtype=np.uint8))
    with pytest.raises(InputError):
        load_idx_dataset(str(tmp_path / "i.idx"), str(tmp_path / "l.idx"))
