"""Minimal dense n-dimensional array substrate.

Everything is 64-bit float and row-major (last index varies fastest).
The binary "TTEN1" container is the on-disk interchange format for
dense tensors throughout the toolkit.
"""

from __future__ import annotations

import struct
from typing import Iterable, Sequence

import numpy as np

from .errors import ExtentMismatch, IndexOutOfRange, MalformedHeader

TTEN_MAGIC = b"TTEN1"
TTEN_DTYPE_F64 = 0x00


class DenseTensor:
    """Row-major n-dimensional array of 64-bit floats."""

    __slots__ = ("array",)

    def __init__(self, array):
        if isinstance(array, DenseTensor):
            array = array.array
        self.array = np.ascontiguousarray(array, dtype=np.float64)

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "DenseTensor":
        return cls(np.zeros(shape, dtype=np.float64))

    @classmethod
    def from_flat(cls, data: Iterable[float], shape: Sequence[int]) -> "DenseTensor":
        flat = np.asarray(list(data), dtype=np.float64)
        if flat.size != int(np.prod(shape, dtype=np.int64)):
            raise ExtentMismatch(
                f"flat data of length {flat.size} cannot fill shape {tuple(shape)}"
            )
        return cls(flat.reshape(shape))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def ndim(self) -> int:
        return self.array.ndim

    @property
    def size(self) -> int:
        return self.array.size

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the payload."""
        return self.array.reshape(-1)

    def __getitem__(self, idx):
        return self.array[idx]

    def __repr__(self):
        return f"DenseTensor(shape={self.shape})"


def as_array(t) -> np.ndarray:
    """Coerce a DenseTensor or array-like to a float64 ndarray."""
    if isinstance(t, DenseTensor):
        return t.array
    return np.asarray(t, dtype=np.float64)


def reshape(t: DenseTensor, new_shape: Sequence[int]) -> DenseTensor:
    """Reinterpret the flat data under a new shape (zero-copy)."""
    arr = as_array(t)
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape, dtype=np.int64)) != arr.size:
        raise ExtentMismatch(f"cannot reshape size {arr.size} into {new_shape}")
    return DenseTensor(arr.reshape(new_shape))


def flat_index(shape: Sequence[int], mi: Sequence[int]) -> int:
    """Row-major flat offset of a multi-index."""
    if len(shape) != len(mi):
        raise IndexOutOfRange(f"index {tuple(mi)} has wrong arity for shape {tuple(shape)}")
    off = 0
    for extent, i in zip(shape, mi):
        if not 0 <= i < extent:
            raise IndexOutOfRange(f"index {tuple(mi)} out of range for shape {tuple(shape)}")
        off = off * extent + i
    return off


def unflat_index(shape: Sequence[int], offset: int) -> tuple[int, ...]:
    """Inverse of :func:`flat_index`."""
    total = int(np.prod(shape, dtype=np.int64))
    if not 0 <= offset < total:
        raise IndexOutOfRange(f"offset {offset} out of range for shape {tuple(shape)}")
    out = []
    for extent in reversed(shape):
        out.append(offset % extent)
        offset //= extent
    return tuple(reversed(out))


def matmul(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    aa, bb = as_array(a), as_array(b)
    if aa.ndim != 2 or bb.ndim != 2:
        raise ExtentMismatch("matmul expects rank-2 tensors")
    if aa.shape[1] != bb.shape[0]:
        raise ExtentMismatch(f"inner extents differ: {aa.shape} x {bb.shape}")
    return DenseTensor(aa @ bb)


def contract(a: DenseTensor, b: DenseTensor, axes: Sequence[tuple[int, int]]) -> DenseTensor:
    """Generalized tensordot over pairs of (a-mode, b-mode).

    Result modes are the unpaired modes of ``a`` followed by the
    unpaired modes of ``b``, each in their original order.
    """
    aa, bb = as_array(a), as_array(b)
    a_axes = [p[0] for p in axes]
    b_axes = [p[1] for p in axes]
    for ai, bi in axes:
        if not (-aa.ndim <= ai < aa.ndim and -bb.ndim <= bi < bb.ndim):
            raise ExtentMismatch(f"contraction axes ({ai},{bi}) out of range")
        if aa.shape[ai] != bb.shape[bi]:
            raise ExtentMismatch(
                f"paired extents differ: a.shape[{ai}]={aa.shape[ai]} vs b.shape[{bi}]={bb.shape[bi]}"
            )
    return DenseTensor(np.tensordot(aa, bb, axes=(a_axes, b_axes)))


def frobenius_norm(t: DenseTensor) -> float:
    return float(np.sqrt(np.sum(as_array(t) ** 2)))


def to_tten_bytes(t: DenseTensor) -> bytes:
    """Serialize to the TTEN1 container (little-endian throughout)."""
    arr = as_array(t)
    header = TTEN_MAGIC + bytes([TTEN_DTYPE_F64]) + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.astype("<f8").tobytes(order="C")


def from_tten_bytes(raw: bytes) -> DenseTensor:
    """Parse a TTEN1 container; round-trips bit-exactly with serialization."""
    if len(raw) < 10 or raw[:5] != TTEN_MAGIC:
        raise MalformedHeader("not a TTEN1 container")
    if raw[5] != TTEN_DTYPE_F64:
        raise MalformedHeader(f"unsupported dtype code {raw[5]:#x}")
    (ndim,) = struct.unpack_from("<I", raw, 6)
    off = 10
    if len(raw) < off + 4 * ndim:
        raise MalformedHeader("truncated extent list")
    shape = struct.unpack_from(f"<{ndim}I", raw, off)
    off += 4 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(raw) != off + 8 * count:
        raise MalformedHeader("payload length disagrees with extents")
    arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
    return DenseTensor(arr.reshape(shape))


def write_tten(path, t: DenseTensor) -> None:
    with open(path, "wb") as f:
        f.write(to_tten_bytes(t))


def read_tten(path) -> DenseTensor:
    with open(path, "rb") as f:
        return from_tten_bytes(f.read())
