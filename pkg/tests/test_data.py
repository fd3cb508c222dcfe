import gzip

import numpy as np
import pytest
from scipy.special import expit

from ngd_sampling.data import (
    Dataset,
    IdxFormatError,
    columnar_to_idx,
    generate_synthetic_logistic,
    load_dataset_text,
    load_mnist_projected,
    random_projection,
    read_idx,
    read_magic,
    save_dataset_text,
    write_idx,
)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 2)), np.zeros(0))
    assert len(Dataset(np.zeros((3, 2)), np.zeros(3))) == 3


def test_synthetic_shapes_and_label_law():
    rng = np.random.default_rng(0)
    d = generate_synthetic_logistic(1000, [16.0, 0.0], rng)
    assert d.inputs.shape == (1000, 2) and set(np.unique(d.labels)) <= {-1, 1}
    big = generate_synthetic_logistic(20000, [1.0, 0.0], np.random.default_rng(1))
    # +1 has probability sigmoid(-w.x): check the mean in a slab of x1 values
    slab = np.abs(big.inputs[:, 0] - 1.0) < 0.1
    assert np.mean(big.labels[slab] == 1) == pytest.approx(expit(-1.0), abs=0.03)


def test_synthetic_saturated_labels():
    d = generate_synthetic_logistic(2000, [1e6, 0.0], np.random.default_rng(2))
    assert np.array_equal(d.labels, -np.sign(d.inputs[:, 0]).astype(int))


def test_idx_round_trip(tmp_path):
    a = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
    for name in ("a.idx", "a.idx.gz"):
        write_idx(tmp_path / name, a)
        b = read_idx(tmp_path / name)
        assert b.dtype == np.uint8 and np.array_equal(a, b)
    f = np.linspace(0, 1, 5)
    write_idx(tmp_path / "f.idx", f)
    assert np.array_equal(read_idx(tmp_path / "f.idx"), f)


def test_idx_errors_report_byte_offsets(tmp_path):
    (tmp_path / "short").write_bytes(b"\x00\x00")
    with pytest.raises(IdxFormatError, match="byte 0"):
        read_idx(tmp_path / "short")
    (tmp_path / "badtype").write_bytes(b"\x00\x00\x42\x01\x00\x00\x00\x01\x00")
    with pytest.raises(IdxFormatError, match="byte 2"):
        read_idx(tmp_path / "badtype")
    (tmp_path / "trunc").write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x05\x01\x02")
    with pytest.raises(IdxFormatError, match="byte 8"):
        read_idx(tmp_path / "trunc")


def _fake_mnist(tmp_path, n=12):
    r = np.random.default_rng(0)
    imgs = r.integers(0, 256, size=(n, 28, 28), dtype=np.uint8)
    labs = r.integers(0, 10, size=n).astype(np.uint8)
    write_idx(tmp_path / "img", imgs)
    write_idx(tmp_path / "lab", labs)
    return imgs, labs


def test_mnist_magic_and_projection(tmp_path):
    imgs, labs = _fake_mnist(tmp_path)
    assert read_magic(tmp_path / "img") == 0x00000803
    assert read_magic(tmp_path / "lab") == 0x00000801
    d = load_mnist_projected(tmp_path / "img", tmp_path / "lab", projection_dim=10, N=5, seed=4)
    P = random_projection(784, 10, 4)
    assert d.inputs.shape == (5, 10)
    assert np.allclose(d.inputs, imgs[:5].reshape(5, -1) / 255.0 @ P)
    again = load_mnist_projected(tmp_path / "img", tmp_path / "lab", projection_dim=10, N=5, seed=4)
    assert np.array_equal(d.inputs, again.inputs)
    with pytest.raises(IdxFormatError):
        load_mnist_projected(tmp_path / "lab", tmp_path / "img")


def test_text_round_trip(tmp_path):
    d = generate_synthetic_logistic(20, [1.0, 2.0, 3.0], np.random.default_rng(5))
    save_dataset_text(d, tmp_path / "d.txt")
    e = load_dataset_text(tmp_path / "d.txt")
    assert np.array_equal(d.inputs, e.inputs) and np.array_equal(d.labels, e.labels)


def test_columnar_to_idx(tmp_path):
    r = np.random.default_rng(1)
    rows = np.column_stack([r.integers(0, 256, size=(30, 784)), np.repeat(np.arange(10), 3)])
    with gzip.open(tmp_path / "t.csv.gz", "wt") as f:
        np.savetxt(f, rows, fmt="%d", delimiter=",")
    paths = columnar_to_idx(tmp_path / "t.csv.gz", tmp_path / "out", n_test=6, seed=0)
    tr, te = read_idx(paths["train_labels"]), read_idx(paths["test_labels"])
    assert tr.size == 24 and te.size == 6
    assert sorted(np.concatenate([tr, te])) == sorted(rows[:, -1])
    assert read_idx(paths["train_images"]).shape == (24, 28, 28)
