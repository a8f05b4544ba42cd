import numpy as np
import pytest

from paglab import data


@pytest.fixture(scope="module")
def toy():
    return data.toy_generate(seed=0)


def test_toy_sizes(toy):
    train, test = toy
    assert len(train) == 6000 and len(test) == 600
    assert np.bincount(train.y).tolist() == [3000, 3000]
    assert np.bincount(test.y).tolist() == [300, 300]


def test_toy_points_on_line(toy):
    for ds in toy:
        assert np.all(ds.X[:, 1] == 2.0 * ds.X[:, 0])


def test_toy_mode_means(toy):
    train, _ = toy
    centers = data.CLASS0_CENTERS + data.CLASS1_CENTERS
    for k, c in enumerate(centers):
        x1 = train.X[k * 1000:(k + 1) * 1000, 0]
        assert abs(x1.mean() - c) < 0.15
        assert np.all(train.y[k * 1000:(k + 1) * 1000] == (0 if k < 3 else 1))


def test_toy_deterministic_and_splits_independent():
    a_tr, a_te = data.toy_generate(seed=3, per_mode=10, test_per_mode=10)
    b_tr, b_te = data.toy_generate(seed=3, per_mode=10, test_per_mode=10)
    assert a_tr.X.tobytes() == b_tr.X.tobytes() and a_te.X.tobytes() == b_te.X.tobytes()
    assert not np.array_equal(a_tr.X, a_te.X)


def test_toy_rejects_zero_count():
    with pytest.raises(data.DataError):
        data.toy_generate(per_mode=0)


def test_csv_round_trip(tmp_path):
    ds = data.Dataset(np.array([[0.5, -1.0], [2.0, 3.25], [1e-3, 7.0]]), np.array([0, 2, 1]), 3)
    p = tmp_path / "d.csv"
    data.save_csv(ds, p)
    back = data.load_csv(p)
    assert back.X.tobytes() == ds.X.tobytes()
    assert back.y.tolist() == [0, 2, 1] and back.num_classes == 3


def test_csv_without_header(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2,0\n3,4,1\n")
    ds = data.load_csv(p)
    assert ds.X.shape == (2, 2) and ds.dim == 2


@pytest.mark.parametrize("text, match", [
    ("1,2,0\n3,4,2\n", "line 2: label 2 out of range"),
    ("1,2,0\n3,0\n", "line 2: expected 3 fields"),
    ("1,2,0\n3,x,1\n", "line 2: non-numeric"),
    ("1,nan,0\n", "line 1: NaN"),
    ("", "no data rows"),
])
def test_csv_errors(tmp_path, text, match):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(data.DataError, match=match):
        data.load_csv(p, num_classes=2)


def _write_batch(path, n, fill=None, seed=0):
    rng = np.random.default_rng(seed)
    pix = rng.integers(0, 256, size=(n, 3072)) if fill is None else np.full((n, 3072), fill)
    labels = rng.integers(0, 10, size=n)
    data.write_image_batches(path, pix, labels)
    return pix, labels


def test_image_batches(tmp_path):
    p = tmp_path / "batch.bin"
    pix, labels = _write_batch(p, 30)
    ds = data.load_image_batches(p)
    assert ds.X.shape == (30, 3072) and ds.num_classes == 10
    assert ds.y.tolist() == labels.tolist()
    np.testing.assert_array_equal(ds.X, pix / 255.0)
    assert ds.X.min() >= 0 and ds.X.max() <= 1


def test_image_batch_edge_values(tmp_path):
    p = tmp_path / "z.bin"
    _write_batch(p, 2, fill=0)
    assert np.all(data.load_image_batches(p).X == 0.0)
    _write_batch(p, 2, fill=255)
    assert np.all(data.load_image_batches(p).X == 1.0)


def test_image_batch_limit(tmp_path):
    p = tmp_path / "big.bin"
    _write_batch(p, 10000, fill=7)
    assert len(data.load_image_batches(p, limit=100)) == 100


def test_image_batch_truncated(tmp_path):
    p = tmp_path / "t.bin"
    _write_batch(p, 3)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(data.DataError, match="truncated"):
        data.load_image_batches(p)


def test_dataset_rejects_nonfinite():
    with pytest.raises(data.DataError):
        data.Dataset(np.array([[np.inf, 0.0]]), np.array([0]), 2)
