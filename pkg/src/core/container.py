"""
Binary Container Codec

Layout (all integers little-endian):
    magic "SVDA" (4 bytes), u32 version=1, u32 blob count,
    then per blob: u16 name length, name bytes, u8 dtype tag, u8 rank,
    u32 dims[rank], raw little-endian payload.

Used for checkpoints, adversarial batches and activation dumps. Writes are
atomic (temp file then rename).
"""

import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from .exceptions import (
    BadMagicError,
    DimensionOverflowError,
    StructureError,
    TruncatedFileError,
    UnsupportedVersionError,
)

logger = logging.getLogger(__name__)

MAGIC = b"SVDA"
VERSION = 1
MAX_ELEMENTS = 1 << 31

DTYPE_TAGS: Dict[int, np.dtype] = {
    0: np.dtype("<f4"),
    1: np.dtype("u1"),
    2: np.dtype("<f8"),
    3: np.dtype("<i8"),
}


def _tag_for(dtype: np.dtype):
    for tag, known in DTYPE_TAGS.items():
        if known.kind == dtype.kind and known.itemsize == dtype.itemsize:
            return tag
    return None


def atomic_write_bytes(path: Union[str, Path], payload: bytes) -> Path:
    """Write to a sibling temp file and rename over the target"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def encode_container(blobs: Mapping[str, np.ndarray], magic: bytes = MAGIC) -> bytes:
    parts = [magic, struct.pack("<II", VERSION, len(blobs))]
    for name, array in blobs.items():
        array = np.asarray(array)
        tag = _tag_for(array.dtype)
        if tag is None:
            raise StructureError(f"blob '{name}' has unsupported dtype {array.dtype}")
        encoded_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded_name)))
        parts.append(encoded_name)
        parts.append(struct.pack("<BB", tag, array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes())
    return b"".join(parts)


class _Reader:
    """Cursor over a byte buffer that reports truncation precisely"""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        end = self.pos + count
        if end > len(self.data):
            raise TruncatedFileError(
                f"file truncated while reading {what}: need {count} bytes at offset {self.pos}, "
                f"only {len(self.data) - self.pos} left"
            )
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_container(data: bytes, magic: bytes = MAGIC) -> Dict[str, np.ndarray]:
    reader = _Reader(data)
    head = reader.take(len(magic), "magic")
    if head != magic:
        raise BadMagicError(f"bad magic {head!r}, expected {magic!r}")
    version, count = reader.unpack("<II", "header")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}, expected {VERSION}")

    blobs: Dict[str, np.ndarray] = {}
    for index in range(count):
        (name_len,) = reader.unpack("<H", f"name length of blob {index}")
        name = reader.take(name_len, f"name of blob {index}").decode("utf-8")
        tag, rank = reader.unpack("<BB", f"dtype/rank of '{name}'")
        if tag not in DTYPE_TAGS:
            raise StructureError(f"blob '{name}' has unknown dtype tag {tag}")
        dims = reader.unpack(f"<{rank}I", f"dims of '{name}'") if rank else ()
        elements = int(np.prod(dims, dtype=np.int64)) if dims else 1
        if elements > MAX_ELEMENTS:
            raise DimensionOverflowError(f"blob '{name}' declares {dims} ({elements} elements)")
        dtype = DTYPE_TAGS[tag]
        raw = reader.take(elements * dtype.itemsize, f"payload of '{name}'")
        blobs[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    if reader.pos != len(data):
        logger.warning(f"{len(data) - reader.pos} trailing bytes after {count} blobs ignored")
    return blobs


def write_container(path: Union[str, Path], blobs: Mapping[str, np.ndarray]) -> Path:
    return atomic_write_bytes(path, encode_container(blobs))


def read_container(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    return decode_container(Path(path).read_bytes())
