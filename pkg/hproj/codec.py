"""codec module for hproj files

MATF layout (little endian):
    magic "MATF" | version u32 | rows u32 | cols u32 | rows*cols float64, row-major

CSV layout: one matrix row per line, comma separated, shortest round-trip decimals.
"""

import functools
import pathlib
import struct
from typing import Tuple, Union

import numpy as np

from . import const
from .errors import MalformedFileError, ShapeError

PathLike = Union[str, pathlib.Path]

_HEADER_SIZE = struct.calcsize(const.MATF_HEADER_FORMAT)


def dump(f):
    """
    Dump encoded bytes, with this decorator every encoder may also write a file

    The wrapped encoder takes an extra keyword ``path``; the bytes are written
    there when given and returned in any case.
    """

    @functools.wraps(f)
    def inner(*args, path: PathLike = None, **kwargs) -> bytes:
        package = f(*args, **kwargs)
        if path is not None:
            pathlib.Path(path).write_bytes(package)
        return package

    return inner


@dump
def encode_matrix(a) -> bytes:
    """
    Encode a matrix as a MATF block

    Args:
        a: two dimensional array, zero rows allowed
    """
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"MATF stores two dimensional arrays, got shape {m.shape}")
    rows, cols = m.shape
    header = struct.pack(const.MATF_HEADER_FORMAT, const.MATF_MAGIC, const.MATF_VERSION, rows, cols)
    return header + np.ascontiguousarray(m, dtype="<f8").tobytes()


def decode_matrix(buffer: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """
    Decode one MATF block

    Args:
        buffer: raw bytes
        offset: position of the block in buffer

    Returns:
        the matrix and the offset just after the block
    """
    if len(buffer) - offset < _HEADER_SIZE:
        raise MalformedFileError(f"Truncated MATF header at byte {offset}")
    magic, version, rows, cols = struct.unpack_from(const.MATF_HEADER_FORMAT, buffer, offset)
    if magic != const.MATF_MAGIC:
        raise MalformedFileError(f"Bad MATF magic {magic!r}")
    if version != const.MATF_VERSION:
        raise MalformedFileError(f"Unsupported MATF version {version}")
    start = offset + _HEADER_SIZE
    end = start + rows * cols * 8
    if len(buffer) < end:
        raise MalformedFileError(f"Truncated MATF payload, expected {rows}x{cols} values")
    if rows * cols == 0:
        return np.zeros((rows, cols)), end
    data = np.frombuffer(buffer, dtype="<f8", count=rows * cols, offset=start)
    return data.astype(np.float64).reshape(rows, cols), end


def read_matrix(path: PathLike) -> np.ndarray:
    buffer = pathlib.Path(path).read_bytes()
    m, end = decode_matrix(buffer)
    if end != len(buffer):
        raise MalformedFileError(f"{path}: {len(buffer) - end} trailing bytes after MATF block")
    return m


@dump
def encode_csv(a) -> bytes:
    """
    Encode a matrix as CSV text with repr() decimals
    """
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"CSV stores two dimensional arrays, got shape {m.shape}")
    lines = [",".join(repr(float(x)) for x in row) for row in m]
    return ("\n".join(lines) + "\n").encode("utf-8")


def decode_csv(buffer: bytes) -> np.ndarray:
    try:
        text = buffer.decode("utf-8")
    except UnicodeDecodeError as e:
        raise MalformedFileError(f"CSV is not UTF-8 text: {e}") from e
    rows = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError as e:
            raise MalformedFileError(f"CSV line {number}: {e}") from e
    if not rows:
        raise MalformedFileError("CSV holds no rows")
    if len({len(r) for r in rows}) != 1:
        raise MalformedFileError("CSV rows have different lengths")
    return np.array(rows, dtype=np.float64)


def read_csv(path: PathLike) -> np.ndarray:
    return decode_csv(pathlib.Path(path).read_bytes())


def read_any(path: PathLike) -> np.ndarray:
    """
    Read a matrix, CSV for a .csv suffix and MATF otherwise
    """
    if pathlib.Path(path).suffix.lower() == ".csv":
        return read_csv(path)
    return read_matrix(path)


def write_any(a, path: PathLike) -> bytes:
    if pathlib.Path(path).suffix.lower() == ".csv":
        return encode_csv(a, path=path)
    return encode_matrix(a, path=path)
