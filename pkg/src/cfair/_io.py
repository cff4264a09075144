"""Small on-disk helpers shared by the dataset, centroid, target and checkpoint files."""

import json
import os
import tempfile
import zlib
from pathlib import Path

import numpy as np


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=False) + "\n"
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def matrix_bytes(mat: np.ndarray, dtype: str) -> bytes:
    """Row-major little-endian bytes of ``mat`` cast to ``dtype`` ('<f4' or '<f8')."""
    return np.ascontiguousarray(mat, dtype=np.dtype(dtype)).tobytes(order="C")


def read_matrix(path, rows: int, cols: int, dtype: str, checksum=None) -> np.ndarray:
    """Read a raw row-major matrix, validating size and optional CRC32.

    Raises ``ValueError`` with a message naming the file on any mismatch.
    """
    path = Path(path)
    data = path.read_bytes()
    itemsize = np.dtype(dtype).itemsize
    expected = rows * cols * itemsize
    if len(data) != expected:
        raise ValueError(
            f"{path.name}: expected {expected} bytes for a {rows}x{cols} {dtype} matrix, "
            f"found {len(data)}"
        )
    if checksum is not None and crc32(data) != int(checksum):
        raise ValueError(f"{path.name}: checksum mismatch (file is corrupted)")
    return np.frombuffer(data, dtype=np.dtype(dtype)).reshape(rows, cols).astype(np.float64)
