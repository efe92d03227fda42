import struct

import numpy as np
import pytest

from hbfuse import formats
from hbfuse.formats import FormatError


def test_image_archive_round_trip(tmp_path):
    imgs = np.random.default_rng(0).random((3, 5, 5)).astype(np.float32)
    p = tmp_path / "gaf.bin"
    formats.write_image_archive(p, [10, 11, 12], "gaf", imgs)
    ids, tags, back = formats.read_image_archive(p)
    assert ids.tolist() == [10, 11, 12]
    assert tags == ["gaf"] * 3
    assert np.array_equal(back, imgs)
    # record = 8 + 4 + 4 header bytes + 25 floats
    assert p.stat().st_size == 3 * (16 + 100)


def test_image_archive_byte_layout(tmp_path):
    p = tmp_path / "rp.bin"
    formats.write_image_archive(p, [7], "rp", np.array([[[0.5, 1.0], [0.0, 0.25]]]))
    raw = p.read_bytes()
    assert raw[:16] == struct.pack("<Q", 7) + b"RP  " + struct.pack("<I", 2)
    assert struct.unpack("<4f", raw[16:]) == (0.5, 1.0, 0.0, 0.25)


def test_features_round_trip(tmp_path):
    f = np.random.default_rng(1).normal(size=(4, 9)).astype(np.float32)
    p = tmp_path / "f.fv"
    formats.write_features(p, range(4), "gfn", f)
    ids, tags, back = formats.read_features(p)
    assert ids.tolist() == [0, 1, 2, 3] and tags == ["gfn"] * 4
    assert np.array_equal(back, f)


def test_truncated_archive(tmp_path):
    p = tmp_path / "t.bin"
    formats.write_image_archive(p, [1], "mtf", np.zeros((1, 3, 3)))
    p.write_bytes(p.read_bytes()[:-2])
    with pytest.raises(FormatError, match="truncated"):
        formats.read_image_archive(p)


def test_bad_tag():
    with pytest.raises(FormatError):
        formats._tag("toolong")


def test_labels_round_trip(tmp_path):
    p = tmp_path / "labels.csv"
    formats.write_labels(p, [3, 1, 2], [0, 4, 1])
    assert formats.read_labels(p) == {3: 0, 1: 4, 2: 1}
    assert p.read_text().splitlines()[0] == "3,0"


def test_container_round_trip(tmp_path):
    p = tmp_path / "m.bin"
    tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "s": np.array([1.5], np.float32)}
    formats.write_container(p, "svm", {"x": 1}, tensors)
    sec, head, back = formats.read_container(p, "svm")
    assert sec == "svm" and head == {"x": 1}
    assert np.array_equal(back["a"], tensors["a"])
    raw = p.read_bytes()
    assert raw[:4] == b"HBFM" and raw[6:10] == b"SVM "


def test_container_errors(tmp_path):
    p = tmp_path / "m.bin"
    formats.write_container(p, "cnn", {}, {"w": np.ones((2, 2), np.float32)})
    with pytest.raises(FormatError, match="expected section"):
        formats.read_container(p, "svm")
    raw = p.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        formats.read_container(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="truncated"):
        formats.read_container(tmp_path / "short.bin")
    (tmp_path / "ver.bin").write_bytes(raw[:4] + struct.pack("<H", 9) + raw[6:])
    with pytest.raises(FormatError, match="version"):
        formats.read_container(tmp_path / "ver.bin")
