import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from hybridseg.evalio.synthetic import render_sample
from hybridseg.evalio import (
    CSV_COLUMNS,
    HDTError,
    MetricReport,
    SyntheticDataset,
    accuracy,
    boundary,
    confusion,
    dice,
    gen_synthetic,
    hd95,
    hdt_decode,
    hdt_encode,
    hdt_read,
    hdt_write,
    iou,
    pgm_export,
    read_pgm,
    recall,
    write_csv,
)


def test_dice_half_overlap():
    gt = np.zeros((20, 20))
    gt[:10] = 1
    pred = np.zeros((20, 20))
    pred[5:15] = 1
    assert dice(pred, gt) == pytest.approx(0.5)


def test_dice_empty_pair_and_shape_error():
    z = np.zeros((4, 4))
    assert dice(z, z) == 1.0
    with pytest.raises(ValueError):
        dice(z, np.zeros((4, 5)))


def test_hd95_single_pixels():
    a = np.zeros((10, 10))
    b = np.zeros((10, 10))
    a[2, 2] = 1
    b[2, 5] = 1
    assert hd95(a, b) == pytest.approx(3.0)
    assert hd95(a, a) == 0.0


def test_hd95_empty_is_undefined():
    a = np.zeros((8, 8))
    b = np.zeros((8, 8))
    b[3, 3] = 1
    assert hd95(a, b) is None and hd95(b, a) is None
    rep = MetricReport(1)
    rep.add(a, b)
    rep.add(b, b)
    m = rep.mean()
    assert m["nan_ratio"] == 0.5 and m["defined"] == 1


def test_boundary_of_square():
    m = np.zeros((6, 6), dtype=bool)
    m[1:5, 1:5] = True
    b = boundary(m)
    assert b.sum() == 12 and not b[2:4, 2:4].any()


def _hausdorff(a, b):
    pa, pb = np.argwhere(boundary(a)), np.argwhere(boundary(b))
    d = cdist(pa, pb)
    return max(d.min(1).max(), d.min(0).max())


masks = st.integers(0, 2**31).map(lambda s: np.random.default_rng(s).random((12, 12)) < 0.3)


@given(masks, masks)
def test_hd95_bounded_and_symmetric(a, b):
    h = hd95(a, b)
    if not a.any() or not b.any():
        assert h is None
        return
    assert 0.0 <= h <= _hausdorff(a, b) + 1e-9
    assert h == pytest.approx(hd95(b, a))


def test_confusion_metrics_example():
    gt = np.array([[1, 1, 0, 0]])
    pred = np.array([[1, 0, 1, 0]])
    assert confusion(pred, gt) == (1, 1, 1, 1)
    assert iou(pred, gt) == pytest.approx(1 / 3)
    assert recall(pred, gt) == 0.5
    assert accuracy(pred, gt) == 0.5


@given(masks, masks)
def test_confusion_against_brute_force(a, b):
    tp = fp = fn = tn = 0
    for p, g in zip(a.ravel(), b.ravel()):
        tp += p and g
        fp += p and not g
        fn += g and not p
        tn += not p and not g
    assert confusion(a, b) == (tp, fp, fn, tn)
    d = dice(a, b)
    assert d == pytest.approx(1.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn))


def test_csv_columns_and_note(tmp_path):
    rep = MetricReport(2)
    m = np.zeros((8, 8, 2))
    m[2:4, 2:4, 0] = 1
    rep.add(m, m)
    text = write_csv({"prior": rep}, tmp_path / "m.csv", note="hd95 computed per 2D sample")
    lines = text.splitlines()
    assert lines[0].startswith("#")
    assert lines[1].split(",") == list(CSV_COLUMNS)
    assert [l.split(",")[0] for l in lines[2:]] == ["prior:1", "prior:2", "prior:mean"]
    assert (tmp_path / "m.csv").read_text() == text


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.uint8])
def test_hdt_roundtrip(tmp_path, dtype):
    a = (np.random.default_rng(0).random((3, 4, 5)) * 200).astype(dtype)
    hdt_write(tmp_path / "a.hdt", a)
    b = hdt_read(tmp_path / "a.hdt")
    assert b.dtype == a.dtype and b.shape == a.shape
    np.testing.assert_array_equal(a, b)


def test_hdt_errors(tmp_path):
    buf = hdt_encode(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(HDTError):
        hdt_decode(b"XXXX" + buf[4:])
    with pytest.raises(HDTError):
        hdt_decode(buf[:-1])
    with pytest.raises(HDTError):
        hdt_encode(np.zeros(2, dtype=np.int32))
    (tmp_path / "t.hdt").write_bytes(buf + b"\0")
    with pytest.raises(HDTError):
        hdt_read(tmp_path / "t.hdt")


def test_pgm_export_channels(tmp_path):
    m = np.zeros((5, 7, 2), dtype=np.uint8)
    m[1, 2, 1] = 1
    paths = pgm_export(m, tmp_path / "mask.pgm")
    assert [os.path.basename(p) for p in paths] == ["mask_c0.pgm", "mask_c1.pgm"]
    img = read_pgm(paths[1])
    assert img.shape == (5, 7) and img[1, 2] == 255 and img.sum() == 255
    g = pgm_export(np.linspace(0, 1, 12).reshape(3, 4), tmp_path / "g.pgm")
    out = read_pgm(g[0])
    assert out.min() == 0 and out.max() == 255


def test_synthetic_is_deterministic():
    a = gen_synthetic(6, seed=3)
    b = gen_synthetic(6, seed=3)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.masks.tobytes() == b.masks.tobytes()
    assert a.meta == b.meta
    c = gen_synthetic(6, seed=4)
    assert a.images.tobytes() != c.images.tobytes()


def test_synthetic_shapes_and_exclusive_classes():
    d = gen_synthetic(20, size=32, classes=3)
    assert d.images.shape == (20, 32, 32) and d.images.dtype == np.float32
    assert d.masks.shape == (20, 32, 32, 3) and d.masks.dtype == np.uint8
    assert d.masks.sum(-1).max() <= 1


def test_noise_free_image_equals_clean():
    img, clean, _, _ = render_sample(32, 2, 0.5, 0.0, 7)
    np.testing.assert_array_equal(img, clean)


def test_small_object_rate_one():
    d = gen_synthetic(30, small_object_rate=1.0, seed=2)
    assert d.has_small_object().all()
    for m in d.meta:
        small = [o for o in m["objects"] if o["small"]]
        assert all(0 < o["area"] < 0.01 * 32 * 32 for o in small)
    none = gen_synthetic(30, small_object_rate=0.0, seed=2)
    assert not any(o["kind"] == "small" for m in none.meta for o in m["objects"])


def test_synthetic_save_load(tmp_path):
    d = gen_synthetic(4, seed=1)
    d.save(tmp_path / "ds")
    e = SyntheticDataset.load(tmp_path / "ds")
    np.testing.assert_array_equal(d.images, e.images)
    np.testing.assert_array_equal(d.masks, e.masks)
    assert e.params == d.params and len(e.subset([0, 2])) == 2
    with pytest.raises(FileNotFoundError):
        SyntheticDataset.load(tmp_path / "missing")


def test_synthetic_rejects_bad_args():
    with pytest.raises(ValueError):
        gen_synthetic(0)
    with pytest.raises(ValueError):
        gen_synthetic(2, small_object_rate=1.5)
    with pytest.raises(ValueError):
        gen_synthetic(2, noise_level=-1)
