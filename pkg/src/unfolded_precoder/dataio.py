"""Binary channel datasets, CSV traces and JSON sidecars.

Dataset layout (little endian)::

    offset  size  field
    0       4     magic b"UFPD"
    4       4     format version (uint32)
    8       4     K (uint32)
    12      4     M (uint32)
    16      8     sample count N (uint64)
    24      8     RNG seed (uint64)
    32      4     flags (uint32, bit 0: labels present)
    36      ...   N channels, then optionally N labels; each matrix is
                  K*M complex values as interleaved float64 (re, im),
                  row-major.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError

MAGIC = b"UFPD"
VERSION = 1
HEADER = struct.Struct("<4sIIIQQI")
FLAG_LABELS = 1
FLOAT_FORMAT = "%.17g"


@dataclass
class ChannelDataset:
    channels: np.ndarray
    labels: np.ndarray | None = None
    seed: int = 0

    @property
    def K(self):
        return self.channels.shape[1]

    @property
    def M(self):
        return self.channels.shape[2]

    def __len__(self):
        return len(self.channels)


def _umask():
    mask = os.umask(0)
    os.umask(mask)
    return mask


def _atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    _atomic_write(path, text.encode("utf-8"))


def encode_dataset(ds: ChannelDataset) -> bytes:
    H = np.ascontiguousarray(ds.channels, dtype="<c16")
    if H.ndim != 3:
        raise DataFormatError(f"channels must have shape (N, K, M), got {H.shape}")
    N, K, M = H.shape
    flags = 0
    parts = [H.tobytes()]
    if ds.labels is not None:
        L = np.ascontiguousarray(ds.labels, dtype="<c16")
        if L.shape != H.shape:
            raise DataFormatError(f"labels shape {L.shape} does not match channels {H.shape}")
        flags |= FLAG_LABELS
        parts.append(L.tobytes())
    header = HEADER.pack(MAGIC, VERSION, K, M, N, int(ds.seed) & (2 ** 64 - 1), flags)
    return header + b"".join(parts)


def decode_dataset(blob: bytes) -> ChannelDataset:
    if len(blob) < HEADER.size:
        raise DataFormatError("file too short for a dataset header")
    magic, version, K, M, N, seed, flags = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DataFormatError(f"unsupported dataset version {version}")
    block = N * K * M * 16
    expected = HEADER.size + block * (2 if flags & FLAG_LABELS else 1)
    if len(blob) != expected:
        raise DataFormatError(f"payload size {len(blob) - HEADER.size} does not match header "
                              f"(expected {expected - HEADER.size})")
    H = np.frombuffer(blob, dtype="<c16", count=N * K * M, offset=HEADER.size)
    H = H.reshape(N, K, M).astype(np.complex128)
    labels = None
    if flags & FLAG_LABELS:
        labels = np.frombuffer(blob, dtype="<c16", count=N * K * M, offset=HEADER.size + block)
        labels = labels.reshape(N, K, M).astype(np.complex128)
    return ChannelDataset(H, labels, seed)


def write_dataset(path, ds: ChannelDataset):
    _atomic_write(path, encode_dataset(ds))


def read_dataset(path) -> ChannelDataset:
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise DataFormatError(f"dataset not found: {path}") from exc
    return decode_dataset(blob)


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return FLOAT_FORMAT % float(x)


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


TRACE_COLUMNS = ("run_id", "index", "lagrangian", "residual", "pcg", "sum_rate", "active_columns")


def write_trace(path, rows, run_id):
    rows = [dict(r, run_id=run_id) for r in rows]
    atomic_write_text(path, rows_to_csv(rows, TRACE_COLUMNS))


def read_trace(path):
    """Parse a trace CSV back into a list of dicts with numeric values."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise DataFormatError(f"{path}: unexpected trace columns {reader.fieldnames}")
        out = []
        for r in reader:
            row = {"run_id": r["run_id"], "index": int(r["index"])}
            row.update({c: float(r[c]) for c in TRACE_COLUMNS[2:]})
            out.append(row)
    return out


def write_history(path, history):
    atomic_write_text(path, rows_to_csv(history.epochs, history.COLUMNS))


def sidecar_path(path):
    return Path(str(path) + ".config.json")


def write_json(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise DataFormatError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc
