"""Binary file formats. All integers and floats are little-endian.

Image archive (``.bin``), a bare sequence of records, one per beat::

    u64  beat id
    4s   encoder tag, ASCII, space padded ("GAF ", "RP  ", "MTF ")
    u32  n
    f32  n*n pixels, row-major

Feature file (``.fv``), a bare sequence of records::

    u64  beat id
    4s   modality tag, ASCII, space padded ("GAF ", "RP  ", "MTF ", "GFN ", ...)
    u32  D
    f32  D values

Model container (CNN and SVM)::

    4s   magic b"HBFM"
    u16  format version (1)
    4s   section tag: b"CNN " or b"SVM "
    u32  header length H
    H    UTF-8 JSON header (architecture / hyperparameters / metadata)
    u32  tensor count T
    T x tensor:
        u16  name length, then the UTF-8 name
        u8   ndim, then ndim x u32 dims
        f32  prod(dims) values, C order

Labels accompanying archives are plain ``beat_id,label`` CSV lines.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"HBFM"
VERSION = 1
_REC = struct.Struct("<Q4sI")


class FormatError(ValueError):
    pass


def _tag(name: str) -> bytes:
    t = name.upper().encode("ascii")
    if len(t) > 4:
        raise FormatError(f"tag {name!r} longer than 4 characters")
    return t.ljust(4)


def _untag(raw: bytes) -> str:
    return raw.decode("ascii").rstrip().lower()


def _write_records(path, ids, tag, arrays, per_record_shape):
    arrays = np.asarray(arrays, dtype="<f4")
    with open(path, "wb") as fh:
        for beat_id, arr in zip(ids, arrays):
            fh.write(_REC.pack(int(beat_id), _tag(tag), per_record_shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_records(path, square: bool):
    raw = Path(path).read_bytes()
    ids, tags, out = [], [], []
    pos = 0
    while pos < len(raw):
        if pos + _REC.size > len(raw):
            raise FormatError(f"{path}: truncated record header at byte {pos}")
        beat_id, tag, n = _REC.unpack_from(raw, pos)
        pos += _REC.size
        count = n * n if square else n
        end = pos + 4 * count
        if end > len(raw):
            raise FormatError(f"{path}: truncated record payload at byte {pos}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=pos)
        out.append(arr.reshape((n, n) if square else (n,)))
        ids.append(beat_id)
        tags.append(_untag(tag))
        pos = end
    return np.array(ids, dtype=np.uint64), tags, out


def write_image_archive(path, ids, tag: str, images) -> None:
    images = np.asarray(images)
    if images.ndim != 3 or images.shape[1] != images.shape[2]:
        raise FormatError("image archive expects an (n, s, s) stack")
    _write_records(path, ids, tag, images, images.shape[1])


def read_image_archive(path):
    """Return ``(ids, tags, images)`` with ``images`` an ``(n, s, s)`` float32 array."""
    ids, tags, imgs = _read_records(path, square=True)
    sizes = {im.shape for im in imgs}
    if len(sizes) > 1:
        raise FormatError(f"{path}: mixed image sizes {sorted(sizes)}")
    stack = np.stack(imgs).astype(np.float32) if imgs else np.zeros((0, 0, 0), np.float32)
    return ids, tags, stack


def write_features(path, ids, tag: str, features) -> None:
    features = np.asarray(features)
    if features.ndim != 2:
        raise FormatError("feature file expects an (n, D) matrix")
    _write_records(path, ids, tag, features, features.shape[1])


def read_features(path):
    """Return ``(ids, tags, features)`` with ``features`` an ``(n, D)`` float32 array."""
    ids, tags, vecs = _read_records(path, square=False)
    dims = {v.shape for v in vecs}
    if len(dims) > 1:
        raise FormatError(f"{path}: mixed feature dimensions {sorted(dims)}")
    mat = np.stack(vecs).astype(np.float32) if vecs else np.zeros((0, 0), np.float32)
    return ids, tags, mat


def write_labels(path, ids, labels) -> None:
    with open(path, "w") as fh:
        for i, y in zip(ids, labels):
            fh.write(f"{int(i)},{int(y)}\n")


def read_labels(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                i, y = line.split(",")
                out[int(i)] = int(y)
    return out


def write_container(path, section: str, header: dict, tensors: dict) -> None:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(_tag(section))
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_container(path, section: str | None = None):
    """Return ``(section, header, tensors)``; tensors come back as float32."""
    raw = Path(path).read_bytes()
    try:
        return _parse_container(raw, path, section)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: corrupt or truncated model file ({exc})") from exc


def _parse_container(raw: bytes, path, section):
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    sec = _untag(raw[6:10])
    if section is not None and sec != section.lower():
        raise FormatError(f"{path}: expected section {section!r}, found {sec!r}")
    (hlen,) = struct.unpack_from("<I", raw, 10)
    pos = 14
    header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape)
        tensors[name] = arr.astype(np.float32)
        pos += 4 * size
    return sec, header, tensors
