"""Grid conventions, field shapes, error types and the EVSF field container.

Fields are plain float64 numpy arrays laid out as ``(n0, n1, n2, ...)`` with
time slowest, so the flat index of ``(t, i, j)`` is ``t*n1*n2 + i*n2 + j``.
Trailing axes hold components (3 for ambient vectors, 2 for frame
coordinates).

EVSF layout (all little-endian)::

    magic    4 bytes  b"EVSF"
    version  u8       1
    dtype    u8       1   (float64)
    reserved 2 bytes  zero
    ndim     u8
    dims     ndim x u32
    payload  prod(dims) x float64, row-major
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class EvflowError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(EvflowError, ValueError):
    pass


class DimMismatch(ValidationError):
    pass


class GridTooSmall(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class BadMagic(EvflowError):
    pass


class UnsupportedVersion(EvflowError):
    pass


class TruncatedPayload(EvflowError):
    pass


EVSF_MAGIC = b"EVSF"
EVSF_VERSION = 1
EVSF_DTYPE_F64 = 1
_PREFIX = struct.Struct("<4sBB2sB")


@dataclass(frozen=True)
class Grid3:
    """Spatiotemporal index space: ``n0`` frames of ``n1 x n2`` samples."""

    n0: int
    n1: int
    n2: int
    h0: float
    h1: float
    h2: float

    def __post_init__(self):
        if self.n0 < 1 or self.n1 < 3 or self.n2 < 3:
            raise GridTooSmall(f"grid {self.shape} too small: need n1, n2 >= 3")
        for h in (self.h0, self.h1, self.h2):
            if not (h > 0 and math.isfinite(h)):
                raise ValidationError(f"grid spacing must be positive, got {h}")
        if self.h1 != self.h2:
            raise ValidationError(f"h1 must equal h2 (got {self.h1} vs {self.h2})")

    @classmethod
    def unit_cube(cls, n0: int, n1: int, n2: int) -> "Grid3":
        """Grid over the unit cube with spacing ``h_s = 1/n_s``.

        A square spatial grid is required since ``h1 == h2``.
        """
        if n1 != n2:
            raise ValidationError(f"unit_cube needs n1 == n2 for h1 == h2 (got {n1}, {n2})")
        return cls(n0, n1, n2, 1.0 / n0, 1.0 / n1, 1.0 / n2)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n0, self.n1, self.n2)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.h0, self.h1, self.h2)

    @property
    def size(self) -> int:
        return self.n0 * self.n1 * self.n2

    def coords(self, axis: int) -> np.ndarray:
        """Sample positions ``k*h`` along ``axis`` (0 = time)."""
        n = self.shape[axis]
        return np.arange(n, dtype=np.float64) * self.spacing[axis]

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcast coordinate arrays ``(t, xi1, xi2)`` of shape ``self.shape``."""
        return np.meshgrid(self.coords(0), self.coords(1), self.coords(2), indexing="ij")

    def flat_index(self, t, i, j):
        return (t * self.n1 + i) * self.n2 + j

    def frame(self) -> "Grid3":
        """Single-frame grid with the same spatial layout."""
        return Grid3(1, self.n1, self.n2, self.h0, self.h1, self.h2)

    def require_frames(self, n: int = 2):
        if self.n0 < n:
            raise GridTooSmall(f"need at least {n} frames for temporal differences, got {self.n0}")


def check_field(values: np.ndarray, grid: Grid3, ncomp: int | None = None, name: str = "field") -> np.ndarray:
    """Validate shape and finiteness of a gridded field and return it as float64."""
    arr = np.asarray(values, dtype=np.float64)
    expected = grid.shape if ncomp is None else grid.shape + (ncomp,)
    if arr.shape != expected:
        raise DimMismatch(f"{name} has shape {arr.shape}, expected {expected}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains non-finite values")
    return arr


def evsf_nbytes(dims) -> int:
    """Exact size in bytes of an EVSF file holding an array of shape ``dims``."""
    dims = list(dims)
    return _PREFIX.size + 4 * len(dims) + 8 * math.prod(dims)


def write_evsf(path, dims, values) -> None:
    dims = [int(d) for d in dims]
    if any(d < 0 or d >= 2**32 for d in dims) or len(dims) > 255:
        raise DimMismatch(f"dims {dims} not representable")
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size != math.prod(dims):
        raise DimMismatch(f"{arr.size} values do not match dims {dims}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("refusing to write non-finite values")
    header = _PREFIX.pack(EVSF_MAGIC, EVSF_VERSION, EVSF_DTYPE_F64, b"\0\0", len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype("<f8", copy=False).tobytes())


def read_evsf(path) -> tuple[list[int], np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size or data[:4] != EVSF_MAGIC:
        raise BadMagic(f"{path}: not an EVSF file")
    _, version, dtype, _, ndim = _PREFIX.unpack_from(data)
    if version != EVSF_VERSION or dtype != EVSF_DTYPE_F64:
        raise UnsupportedVersion(f"{path}: version {version}, dtype {dtype}")
    off = _PREFIX.size
    if len(data) < off + 4 * ndim:
        raise TruncatedPayload(f"{path}: header truncated")
    dims = list(struct.unpack_from(f"<{ndim}I", data, off))
    off += 4 * ndim
    n = math.prod(dims)
    if len(data) != off + 8 * n:
        raise TruncatedPayload(f"{path}: expected {8 * n} payload bytes, found {len(data) - off}")
    values = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{path}: payload contains non-finite values")
    return dims, values


def save_field(path, arr) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    write_evsf(path, arr.shape, arr)


def load_field(path) -> np.ndarray:
    dims, values = read_evsf(path)
    return values.reshape(dims)
