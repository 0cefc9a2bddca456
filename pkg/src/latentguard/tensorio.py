"""Binary container for named tensors, and Dataset import/export on top.

Layout (all integers little-endian):

    magic    4 bytes  b"LGTC"
    version  u16      currently 1
    count    u16      number of entries
    then per entry:
        name_len u16, name utf-8 bytes
        dtype    u8   (1=float32, 2=float64, 3=int64, 4=uint8)
        rank     u8
        extents  rank * u64
        payload  product(extents) * itemsize bytes, C order

Round-trips are bit-exact; datasets and adversarial batches use this format
directly of the wire, checkpoints add a metadata entry on top.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .data import Dataset
from .exceptions import ParseError

MAGIC = b"LGTC"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<i8"): 3,
    np.dtype("uint8"): 4,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays to the container format (insertion order preserved)."""
    path = Path(path)
    blobs = [MAGIC, struct.pack("<HH", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        code = _DTYPE_CODES.get(np.dtype(dtype))
        if code is None:
            raise ParseError(f"cannot serialize dtype {arr.dtype} for entry {name!r}")
        encoded = name.encode("utf-8")
        blobs.append(struct.pack("<H", len(encoded)))
        blobs.append(encoded)
        blobs.append(struct.pack("<BB", code, arr.ndim))
        blobs.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        blobs.append(arr.astype(dtype, copy=False).tobytes())
    path.write_bytes(b"".join(blobs))


def read_tensors(path) -> dict[str, np.ndarray]:
    """Read a container back into an ordered name -> array mapping."""
    path = Path(path)
    blob = path.read_bytes()
    off = 0

    def take(count: int, what: str) -> bytes:
        nonlocal off
        if off + count > len(blob):
            raise ParseError(f"{path}: truncated reading {what} at byte {off}")
        out = blob[off:off + count]
        off += count
        return out

    if take(4, "magic") != MAGIC:
        raise ParseError(f"{path}: bad magic at byte 0, not a tensor container")
    version, count = struct.unpack("<HH", take(4, "header"))
    if version != VERSION:
        raise ParseError(f"{path}: container version {version} unsupported (expected {VERSION})")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        code, rank = struct.unpack("<BB", take(2, "entry header"))
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise ParseError(f"{path}: unknown dtype code {code} for entry {name!r} at byte {off}")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, "extents")) if rank else ()
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = take(size * dtype.itemsize, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if off != len(blob):
        raise ParseError(f"{path}: {len(blob) - off} trailing bytes after byte {off}")
    return out


def save_dataset(path, dataset: Dataset) -> None:
    write_tensors(path, {
        "images": dataset.images,
        "labels": dataset.labels,
        "split": np.frombuffer(dataset.split.encode("utf-8"), dtype=np.uint8).copy(),
    })


def load_dataset(path) -> Dataset:
    entries = read_tensors(path)
    try:
        split = entries["split"].tobytes().decode("utf-8")
        return Dataset(entries["images"], entries["labels"], split)
    except KeyError as exc:
        raise ParseError(f"{path}: missing dataset entry {exc}") from exc
