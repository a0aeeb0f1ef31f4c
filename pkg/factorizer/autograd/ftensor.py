"""
FTensor v1 binary tensor files.

Layout: magic b"FTSR", u8 version (1), u8 dtype code (0 = float32, 1 = float64),
u8 rank, rank little-endian u64 extents, then the row-major little-endian data.
"""
import io
import logging
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from factorizer.autograd.tensor import Tensor
from factorizer.exceptions import FormatError

logger = logging.getLogger(__name__)

MAGIC = b"FTSR"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}


def encode(array: Union[np.ndarray, Tensor]) -> bytes:
    """Serialize an array to FTensor v1 bytes."""
    if isinstance(array, Tensor):
        array = array.data
    array = np.asarray(array)
    dtype = array.dtype.newbyteorder("<")
    if dtype not in _DTYPE_CODES:
        raise FormatError(f"FTensor stores float32 or float64, got {array.dtype}")
    if array.ndim > 255:
        raise FormatError(f"FTensor rank is limited to 255, got {array.ndim}")
    header = MAGIC + struct.pack("<BBB", VERSION, _DTYPE_CODES[dtype], array.ndim)
    extents = struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + extents + np.ascontiguousarray(array, dtype=dtype).tobytes()


def read_from(stream: BinaryIO) -> np.ndarray:
    """Read one FTensor from the current position of a binary stream."""
    head = stream.read(7)
    if len(head) != 7 or head[:4] != MAGIC:
        raise FormatError(f"not an FTensor stream (header {head[:4]!r})")
    version, code, rank = struct.unpack("<BBB", head[4:])
    if version != VERSION:
        raise FormatError(f"unsupported FTensor version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown FTensor dtype code {code}")
    raw_extents = stream.read(8 * rank)
    if len(raw_extents) != 8 * rank:
        raise FormatError("truncated FTensor extents")
    shape = struct.unpack(f"<{rank}Q", raw_extents)
    dtype = _CODE_DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = stream.read(nbytes)
    if len(payload) != nbytes:
        raise FormatError(f"truncated FTensor payload: expected {nbytes} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def decode(data: bytes) -> np.ndarray:
    stream = io.BytesIO(data)
    array = read_from(stream)
    if stream.read(1):
        raise FormatError("trailing bytes after FTensor payload")
    return array


def save(path: Union[str, Path], array: Union[np.ndarray, Tensor]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(array))
    logger.debug(f"Wrote FTensor {path}")


def load(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"FTensor file not found: {path}")
    return decode(path.read_bytes())
