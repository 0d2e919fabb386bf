"""
Feature file reading and writing.

Binary layout (little endian)::

    magic    4 bytes  b"CMRF"
    version  u32      1
    N        u64
    d_i      u32
    d_t      u32
    labels   u8       1 if a label column follows each record
    N records:
        image  f32 x d_i
        text   f32 x d_t
        label  u32          (only when labels == 1)
        flags  u8           bit0 clean subset, bit1 injected noisy,
                            bits2-3 split (0 train, 1 query, 2 retrieval)
    optional trailer:
        b"CMID" followed by N x u64 record ids

Without the trailer, ids are the record positions 0..N-1. Features are stored
as float32; datasets produced by this package are float32-representable, so a
save/load round trip is exact.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .datagen import TRAIN, Dataset
from .errors import DataError, FormatError

MAGIC = b"CMRF"
ID_MAGIC = b"CMID"
VERSION = 1
_HEADER = struct.Struct("<4sIQIIB")


def _record_dtype(d_i, d_t, has_labels):
    fields = [("image", "<f4", (d_i,)), ("text", "<f4", (d_t,))]
    if has_labels:
        fields.append(("label", "<u4"))
    fields.append(("flags", "u1"))
    return np.dtype(fields)


def save_features(ds, path):
    has_labels = ds.labels is not None
    dt = _record_dtype(ds.d_i, ds.d_t, has_labels)
    rec = np.zeros(len(ds), dtype=dt)
    rec["image"] = ds.image
    rec["text"] = ds.text
    if has_labels:
        rec["label"] = ds.labels
    rec["flags"] = ds.clean.astype(np.uint8) | (ds.noisy.astype(np.uint8) << 1) \
        | (ds.split.astype(np.uint8) << 2)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(ds), ds.d_i, ds.d_t, int(has_labels)))
        fh.write(rec.tobytes())
        if not np.array_equal(ds.ids, np.arange(len(ds))):
            fh.write(ID_MAGIC)
            fh.write(ds.ids.astype("<u8").tobytes())


def load_features(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"file is {len(data)} bytes, shorter than the header", len(data))
    magic, version, n, d_i, d_t, has_labels = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if d_i < 1 or d_t < 1:
        raise FormatError("feature dimensions must be positive", 16)
    if has_labels not in (0, 1):
        raise FormatError(f"label flag must be 0 or 1, got {has_labels}", 24)
    dt = _record_dtype(d_i, d_t, has_labels)
    body = _HEADER.size
    end = body + n * dt.itemsize
    if len(data) < end:
        complete = (len(data) - body) // dt.itemsize
        raise FormatError(f"truncated after {complete} of {n} records", body + complete * dt.itemsize)
    rec = np.frombuffer(data, dtype=dt, count=n, offset=body)

    ids = np.arange(n)
    if len(data) > end:
        if data[end:end + 4] != ID_MAGIC:
            raise FormatError("unexpected bytes after the last record", end)
        if len(data) != end + 4 + 8 * n:
            raise FormatError("id trailer has the wrong length", end + 4)
        ids = np.frombuffer(data, dtype="<u8", count=n, offset=end + 4).astype(np.int64)

    flags = rec["flags"]
    if np.any(flags >> 4) or np.any(((flags >> 2) & 3) == 3):
        bad = int(np.flatnonzero((flags >> 4) | (((flags >> 2) & 3) == 3))[0])
        raise FormatError(f"record {bad} has invalid flag bits", body + (bad + 1) * dt.itemsize - 1)
    try:
        return Dataset(
            ids=ids,
            image=rec["image"].astype(np.float64),
            text=rec["text"].astype(np.float64),
            labels=rec["label"].astype(np.int64) if has_labels else None,
            clean=(flags & 1).astype(bool),
            noisy=(flags & 2).astype(bool),
            split=((flags >> 2) & 3).astype(np.int8),
        )
    except DataError as exc:
        raise FormatError(f"invalid dataset content: {exc}", body) from exc


def import_csv(path):
    """Read ``id,label,img_0..,txt_0..`` rows into an all-train dataset."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty CSV file") from None
        rows = [r for r in reader if r]
    if header[:2] != ["id", "label"]:
        raise DataError(f"{path}: header must start with id,label")
    img_cols = [i for i, h in enumerate(header) if h.startswith("img_")]
    txt_cols = [i for i, h in enumerate(header) if h.startswith("txt_")]
    if not img_cols or not txt_cols or len(img_cols) + len(txt_cols) + 2 != len(header):
        raise DataError(f"{path}: expected img_* and txt_* feature columns only")
    if not rows:
        raise DataError(f"{path}: no records")
    try:
        table = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if table.shape[1] != len(header):
        raise DataError(f"{path}: ragged rows")
    n = len(table)
    return Dataset(
        ids=table[:, 0].astype(np.int64),
        image=table[:, img_cols].astype(np.float32).astype(np.float64),
        text=table[:, txt_cols].astype(np.float32).astype(np.float64),
        labels=table[:, 1].astype(np.int64),
        clean=np.zeros(n, bool), noisy=np.zeros(n, bool), split=np.full(n, TRAIN, np.int8),
    )
