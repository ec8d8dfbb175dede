import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from segfix.volume import (Box3, LabelVolume, RawVolume, VolumeError, label_bboxes, object_mask,
                           odd_shape, read_volume, sidecar_path, valid_domain, window_sums,
                           window_view, window_volumes, write_volume)
from oracles import window_count


def test_read_small_label_file(tmp_path):
    path = tmp_path / "v.raw"
    path.write_bytes(bytes(range(16)))
    (tmp_path / "v.raw.json").write_text(json.dumps(
        {"dims": [4, 4, 1], "kind": "label", "bytes_per_element": 1, "voxel_size_nm": [3.6, 3.6, 40]}))
    vol = read_volume(path)
    assert isinstance(vol, LabelVolume)
    assert vol.shape == (4, 4, 1)
    # x varies fastest on disk
    assert vol.data[1, 0, 0] == 1 and vol.data[0, 1, 0] == 4


def test_size_mismatch(tmp_path):
    path = tmp_path / "v.raw"
    path.write_bytes(bytes(15))
    (tmp_path / "v.raw.json").write_text(json.dumps(
        {"dims": [4, 4, 1], "kind": "label", "bytes_per_element": 1}))
    with pytest.raises(VolumeError, match="expected 16 bytes"):
        read_volume(path)


def test_missing_sidecar(tmp_path):
    (tmp_path / "v.raw").write_bytes(bytes(16))
    with pytest.raises(VolumeError, match="sidecar"):
        read_volume(tmp_path / "v.raw")


def test_unknown_width(tmp_path):
    (tmp_path / "v.raw").write_bytes(bytes(48))
    (tmp_path / "v.raw.json").write_text(json.dumps(
        {"dims": [4, 4, 1], "kind": "label", "bytes_per_element": 3}))
    with pytest.raises(VolumeError):
        read_volume(tmp_path / "v.raw")


def test_write_small(tmp_path):
    vol = LabelVolume(np.arange(16, dtype=np.uint8).reshape(4, 4, 1))
    write_volume(vol, tmp_path / "a")
    assert (tmp_path / "a").stat().st_size == 16
    meta = json.loads(open(sidecar_path(tmp_path / "a")).read())
    assert meta["dims"] == [4, 4, 1] and meta["kind"] == "label"


def test_empty_volume_rejected():
    with pytest.raises(VolumeError):
        LabelVolume(np.zeros((0, 4, 4), np.uint8))
    with pytest.raises(VolumeError):
        LabelVolume(np.zeros((4, 4), np.uint8))


@pytest.mark.parametrize("width", [1, 2, 4, 8])
def test_label_roundtrip_32(tmp_path, rng, width):
    top = {1: 255, 2: 65535, 4: 2 ** 32 - 1, 8: 2 ** 63}[width]
    data = rng.integers(0, top, size=(32, 32, 32), dtype=np.uint64)
    vol = LabelVolume(data, (4.0, 4.0, 30.0))
    write_volume(vol, tmp_path / "v", width)
    back = read_volume(tmp_path / "v")
    np.testing.assert_array_equal(back.data, data)
    assert back.voxel_size == (4.0, 4.0, 30.0)


@pytest.mark.parametrize("width", [1, 2, 4, 8])
def test_raw_roundtrip(tmp_path, rng, width):
    data = rng.random((9, 7, 5)) * 200
    if width <= 2:
        data = data.astype(np.uint8 if width == 1 else np.uint16)
    vol = RawVolume(data)
    write_volume(vol, tmp_path / "r", width)
    back = read_volume(tmp_path / "r")
    assert isinstance(back, RawVolume)
    np.testing.assert_allclose(back.data, data, rtol=1e-6)


def test_labels_that_do_not_fit(tmp_path):
    with pytest.raises(VolumeError):
        write_volume(LabelVolume(np.full((2, 2, 2), 300, np.uint16)), tmp_path / "x", 1)


def test_object_mask(rng):
    vol = np.array([1, 2, 1, 0]).reshape(4, 1, 1)
    assert object_mask(vol, 1).ravel().tolist() == [True, False, True, False]
    assert not object_mask(vol, 7).any()
    big = rng.integers(0, 5, (16, 16, 16))
    assert object_mask(big, 3).sum() == np.bincount(big.ravel())[3]
    with pytest.raises(VolumeError):
        object_mask(vol, 0)


def test_window_view_examples():
    vol = np.arange(16).reshape(4, 4, 1)
    box, data = window_view(vol, (1, 1, 0), (3, 3, 1), "valid")
    assert box == Box3((0, 0, 0), (3, 3, 1))
    np.testing.assert_array_equal(data, vol[:3, :3])
    with pytest.raises(VolumeError):
        window_view(vol, (0, 0, 0), (3, 3, 1), "valid")
    box, data = window_view(vol, (0, 0, 0), (3, 3, 1), "clipped")
    assert box == Box3((0, 0, 0), (2, 2, 1))
    assert data.shape == (2, 2, 1)
    with pytest.raises(VolumeError):
        window_view(vol, (1, 1, 0), (2, 3, 1))


def test_odd_shape():
    assert odd_shape((46, 46, 7)) == (45, 45, 7)
    assert odd_shape((80, 80, 8)) == (79, 79, 7)
    assert odd_shape((1, 2, 3)) == (1, 1, 3)


def test_box_ops():
    a = Box3((0, 0, 0), (4, 4, 4))
    b = Box3((2, 3, 1), (6, 5, 2))
    assert a.intersect(b) == Box3((2, 3, 1), (4, 4, 2))
    assert a.union(b) == Box3((0, 0, 0), (6, 5, 4))
    assert a.dilate((1, 1, 0)).clip((5, 5, 5)) == Box3((0, 0, 0), (5, 5, 4))
    assert Box3.around((5, 5, 5), (3, 5, 1)) == Box3((4, 3, 5), (7, 8, 6))
    assert a.intersect(Box3((9, 9, 9), (10, 10, 10))).is_empty()
    assert b.contains((2, 3, 1)) and not b.contains((6, 3, 1))
    with pytest.raises(VolumeError):
        Box3((3, 0, 0), (2, 1, 1))


@given(hnp.arrays(np.bool_, st.tuples(*(st.integers(1, 7),) * 3)),
       st.tuples(*(st.integers(0, 3),) * 3))
def test_window_sums_match_direct_counts(mask, rad):
    sums = window_sums(mask, rad)
    vols = window_volumes(mask.shape, rad, Box3.full(mask.shape))
    for c in np.ndindex(mask.shape):
        assert (sums[c], vols[c]) == window_count(mask, c, rad)


@given(st.tuples(*(st.integers(1, 9),) * 3), st.tuples(*(st.integers(0, 3),) * 3))
def test_valid_domain(shape, rad):
    dom = valid_domain(shape, rad)
    for c in np.ndindex(shape):
        fits = all(ci - r >= 0 and ci + r < n for ci, r, n in zip(c, rad, shape))
        assert dom[c] == fits


def test_label_bboxes(rng):
    lab = rng.integers(0, 6, (10, 8, 4))
    boxes = label_bboxes(lab)
    for v in range(1, 6):
        idx = np.argwhere(lab == v)
        assert boxes[v] == Box3(tuple(idx.min(0)), tuple(idx.max(0) + 1))
    assert label_bboxes(np.zeros((2, 2, 2), int)) == {}
