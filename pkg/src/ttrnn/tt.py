"""Tensor-train representation of vectors and matrices.

A TT matrix stores a D x M matrix (D = prod d_k, M = prod m_k) as a
chain of 4-mode cores of shape (d_k, m_k, r_{k-1}, r_k); a TT vector
stores a length-P vector as 3-mode cores (p_k, r_{k-1}, r_k).  Element
access is the product of rank-indexed core matrices, and matrix-vector
products are evaluated core by core without ever materializing the
dense matrix.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ExtentMismatch, IndexOutOfRange, NotFactorizable, SVDFailure
from .tensor import DenseTensor, as_array, read_tten, unflat_index, write_tten


@dataclass
class TTMatrix:
    """TT factorization of a D x M matrix.

    cores[k] has shape (d_k, m_k, r_{k-1}, r_k); boundary ranks are 1.
    """

    cores: list = field(default_factory=list)
    row_factorization: tuple = ()
    col_factorization: tuple = ()

    def __post_init__(self):
        self.cores = [np.ascontiguousarray(c, dtype=np.float64) for c in self.cores]
        self.row_factorization = tuple(int(d) for d in self.row_factorization)
        self.col_factorization = tuple(int(m) for m in self.col_factorization)
        if len(self.cores) != len(self.row_factorization) or len(self.cores) != len(
            self.col_factorization
        ):
            raise ExtentMismatch("one core per (d_k, m_k) pair is required")
        prev = 1
        for k, (core, d, m) in enumerate(
            zip(self.cores, self.row_factorization, self.col_factorization)
        ):
            if core.ndim != 4 or core.shape[0] != d or core.shape[1] != m:
                raise ExtentMismatch(f"core {k} has shape {core.shape}, expected ({d},{m},r,r')")
            if core.shape[2] != prev:
                raise ExtentMismatch(f"core {k} left rank {core.shape[2]} != {prev}")
            prev = core.shape[3]
        if self.cores and (self.cores[0].shape[2] != 1 or self.cores[-1].shape[3] != 1):
            raise ExtentMismatch("boundary TT ranks must be 1")

    @property
    def n_cores(self) -> int:
        return len(self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        """Full rank profile r_0 .. r_n."""
        return (1,) + tuple(c.shape[3] for c in self.cores)

    @property
    def rows(self) -> int:
        return int(np.prod(self.row_factorization, dtype=np.int64))

    @property
    def cols(self) -> int:
        return int(np.prod(self.col_factorization, dtype=np.int64))


@dataclass
class TTVector:
    """TT factorization of a length-P vector; cores (p_k, r_{k-1}, r_k)."""

    cores: list = field(default_factory=list)
    factorization: tuple = ()

    def __post_init__(self):
        self.cores = [np.ascontiguousarray(c, dtype=np.float64) for c in self.cores]
        self.factorization = tuple(int(p) for p in self.factorization)
        if len(self.cores) != len(self.factorization):
            raise ExtentMismatch("one core per mode is required")
        prev = 1
        for k, (core, p) in enumerate(zip(self.cores, self.factorization)):
            if core.ndim != 3 or core.shape[0] != p:
                raise ExtentMismatch(f"core {k} has shape {core.shape}, expected ({p},r,r')")
            if core.shape[1] != prev:
                raise ExtentMismatch(f"core {k} left rank {core.shape[1]} != {prev}")
            prev = core.shape[2]
        if self.cores and (self.cores[0].shape[1] != 1 or self.cores[-1].shape[2] != 1):
            raise ExtentMismatch("boundary TT ranks must be 1")

    @property
    def ranks(self) -> tuple[int, ...]:
        return (1,) + tuple(c.shape[2] for c in self.cores)

    @property
    def length(self) -> int:
        return int(np.prod(self.factorization, dtype=np.int64))


def tt_element(m, mi) -> float:
    """Evaluate one entry as the product of rank-indexed core matrices.

    For a TTVector ``mi`` is a per-mode multi-index; for a TTMatrix it
    is a global (row, col) pair, mapped row-major onto the per-core
    (i_k, j_k) indices.
    """
    if isinstance(m, TTVector):
        idx = tuple(int(i) for i in mi)
        if len(idx) != len(m.cores):
            raise IndexOutOfRange(f"multi-index {idx} has wrong arity")
        vec = None
        for core, p, i in zip(m.cores, m.factorization, idx):
            if not 0 <= i < p:
                raise IndexOutOfRange(f"index {i} out of range for extent {p}")
            mat = core[i]
            vec = mat if vec is None else vec @ mat
        return float(vec[0, 0])
    i, j = int(mi[0]), int(mi[1])
    if not (0 <= i < m.rows and 0 <= j < m.cols):
        raise IndexOutOfRange(f"({i},{j}) out of range for {m.rows}x{m.cols} TT matrix")
    ridx = unflat_index(m.row_factorization, i)
    cidx = unflat_index(m.col_factorization, j)
    vec = None
    for core, ik, jk in zip(m.cores, ridx, cidx):
        mat = core[ik, jk]
        vec = mat if vec is None else vec @ mat
    return float(vec[0, 0])


def tt_to_dense(m) -> DenseTensor:
    """Contract the core chain into the global dense matrix or vector."""
    if isinstance(m, TTVector):
        acc = m.cores[0][:, 0, :]  # (p_1, r_1)
        for core in m.cores[1:]:
            acc = np.tensordot(acc, core, axes=([-1], [1]))  # (..., p_k, r_k)
        return DenseTensor(acc.reshape(m.length))
    acc = m.cores[0][:, :, 0, :]  # (d_1, m_1, r_1)
    for core in m.cores[1:]:
        acc = np.tensordot(acc, core, axes=([-1], [2]))  # (..., d_k, m_k, r_k)
    acc = acc[..., 0]  # drop trailing rank
    n = m.n_cores
    row_then_col = tuple(range(0, 2 * n, 2)) + tuple(range(1, 2 * n, 2))
    return DenseTensor(acc.transpose(row_then_col).reshape(m.rows, m.cols))


def _truncation_rank(s: np.ndarray, max_rank, delta: float) -> int:
    r = len(s)
    if delta > 0.0:
        # keep the smallest prefix whose discarded tail has norm <= delta
        tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]
        keep = np.nonzero(tail > delta)[0]
        r = int(keep[-1]) + 1 if len(keep) else 1
    if max_rank is not None:
        r = min(r, int(max_rank))
    return max(r, 1)


def tt_svd_vector(
    dense, factorization: Sequence[int], max_ranks=None, tol: float = 0.0
) -> TTVector:
    """Sequential SVD decomposition of a dense vector (or tensor).

    ``max_ranks`` bounds the internal ranks r_1..r_{n-1} (an int applies
    uniformly); ``tol`` is a relative Frobenius-error budget distributed
    evenly over the n-1 truncation steps.  Exact at full rank.
    """
    arr = as_array(dense).reshape(-1)
    factorization = tuple(int(p) for p in factorization)
    n = len(factorization)
    if int(np.prod(factorization, dtype=np.int64)) != arr.size:
        raise ExtentMismatch(f"factorization {factorization} does not cover length {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise SVDFailure("input contains non-finite values")
    if isinstance(max_ranks, int):
        max_ranks = [max_ranks] * (n - 1)
    delta = tol * float(np.linalg.norm(arr)) / np.sqrt(max(n - 1, 1)) if tol > 0 else 0.0

    cores = []
    rank = 1
    rest = arr
    for k in range(n - 1):
        mat = rest.reshape(rank * factorization[k], -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        cap = None if max_ranks is None else max_ranks[k]
        r_new = _truncation_rank(s, cap, delta)
        cores.append(u[:, :r_new].reshape(rank, factorization[k], r_new).transpose(1, 0, 2))
        rest = (s[:r_new, None] * vt[:r_new]).reshape(-1)
        rank = r_new
    cores.append(rest.reshape(rank, factorization[-1], 1).transpose(1, 0, 2))
    return TTVector(cores, factorization)


def tt_svd(
    dense,
    row_factorization: Sequence[int],
    col_factorization: Sequence[int],
    max_ranks=None,
    tol: float = 0.0,
) -> TTMatrix:
    """TT-SVD of a dense D x M matrix with interleaved (d_k, m_k) pairing.

    Row and column indices are factorized row-major, the matrix is
    permuted into per-core (i_k, j_k) pairs, and the standard sequential
    SVD sweep produces the cores.  Full-rank decompositions reconstruct
    the input to machine precision.
    """
    arr = as_array(dense)
    if arr.ndim != 2:
        raise ExtentMismatch("tt_svd expects a rank-2 tensor")
    row_factorization = tuple(int(d) for d in row_factorization)
    col_factorization = tuple(int(m) for m in col_factorization)
    if len(row_factorization) != len(col_factorization):
        raise ExtentMismatch("row and column factorizations must have equal length")
    n = len(row_factorization)
    if (
        int(np.prod(row_factorization, dtype=np.int64)) != arr.shape[0]
        or int(np.prod(col_factorization, dtype=np.int64)) != arr.shape[1]
    ):
        raise ExtentMismatch(
            f"factorizations {row_factorization}/{col_factorization} do not cover {arr.shape}"
        )
    # interleave (d_1, m_1, d_2, m_2, ...) and fuse each pair into one mode
    interleave = [ax for k in range(n) for ax in (k, n + k)]
    fused = arr.reshape(row_factorization + col_factorization).transpose(interleave)
    pair_sizes = tuple(d * m for d, m in zip(row_factorization, col_factorization))
    vec = tt_svd_vector(fused.reshape(-1), pair_sizes, max_ranks=max_ranks, tol=tol)
    cores = [
        c.reshape(d, m, c.shape[1], c.shape[2])
        for c, d, m in zip(vec.cores, row_factorization, col_factorization)
    ]
    return TTMatrix(cores, row_factorization, col_factorization)


def tt_matvec_cores(cores: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    """Left-to-right TT matrix-vector product over raw cores.

    ``x`` may carry a leading batch axis.  The intermediate has shape
    (batch, rows-done, rank, cols-remaining), so total work stays at the
    O(n r^2 d M) cost of the sequential contraction scheme.
    """
    batched = x.ndim == 2
    xb = x if batched else x[None, :]
    b = xb.shape[0]
    t = xb.reshape(b, 1, 1, xb.shape[1])  # (B, D_done, r, M_rest)
    for core in cores:
        d, m, r0, r1 = core.shape
        dd, mrest = t.shape[1], t.shape[3] // m
        t = t.reshape(b, dd, r0, m, mrest).transpose(0, 1, 4, 2, 3)
        g = core.transpose(2, 1, 0, 3).reshape(r0 * m, d * r1)
        t = (t.reshape(b * dd * mrest, r0 * m) @ g).reshape(b, dd, mrest, d, r1)
        t = t.transpose(0, 1, 3, 4, 2).reshape(b, dd * d, r1, mrest)
    out = t.reshape(b, t.shape[1])
    return out if batched else out[0]


def tt_matvec(m: TTMatrix, x) -> DenseTensor:
    """y = (global matrix of m) @ x, without materializing the matrix."""
    xa = as_array(x).reshape(-1)
    if xa.size != m.cols:
        raise ExtentMismatch(f"input length {xa.size} != {m.cols}")
    return DenseTensor(tt_matvec_cores(m.cores, xa))


def tt_affine(m: TTMatrix, x, b) -> DenseTensor:
    ba = as_array(b).reshape(-1)
    if ba.size != m.rows:
        raise ExtentMismatch(f"bias length {ba.size} != {m.rows}")
    return DenseTensor(tt_matvec(m, x).array + ba)


def param_count(m) -> int:
    """Exact number of stored core entries."""
    return int(sum(c.size for c in m.cores))


def _sorted_factorizations(n: int, k: int, low: int):
    if k == 1:
        if n >= low:
            yield (n,)
        return
    d = low
    while d * d <= n * n:  # d can be as large as n itself
        if d > n:
            break
        if n % d == 0:
            for rest in _sorted_factorizations(n // d, k - 1, d):
                yield (d,) + rest
        d += 1


def balanced_factorization(n: int, n_cores: int) -> tuple[int, ...]:
    """Deterministic n_cores-way factorization minimizing the max factor.

    Factors come out sorted non-decreasing; when n has fewer prime
    factors than n_cores the result is padded with 1s.
    """
    if n < 1 or n_cores < 1:
        raise NotFactorizable(f"cannot factorize {n} into {n_cores} factors")
    best = min(
        _sorted_factorizations(int(n), int(n_cores), 1),
        key=lambda f: (max(f), f),
    )
    return best


def random_tt_matrix(
    rng: np.random.Generator,
    row_factorization: Sequence[int],
    col_factorization: Sequence[int],
    ranks: Sequence[int],
    scale: float = 1.0,
) -> TTMatrix:
    """Gaussian-core TT matrix with the given internal ranks r_1..r_{n-1}."""
    row_factorization = tuple(row_factorization)
    col_factorization = tuple(col_factorization)
    full = (1,) + tuple(int(r) for r in ranks) + (1,)
    if len(full) != len(row_factorization) + 1:
        raise ExtentMismatch("need n-1 internal ranks for n cores")
    cores = [
        scale * rng.standard_normal((d, m, full[k], full[k + 1]))
        for k, (d, m) in enumerate(zip(row_factorization, col_factorization))
    ]
    return TTMatrix(cores, row_factorization, col_factorization)


def save_checkpoint(directory, m: TTMatrix) -> None:
    """Write a TT checkpoint: manifest.json plus one TTEN1 file per core."""
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "kind": "tt_matrix",
        "row_factorization": list(m.row_factorization),
        "col_factorization": list(m.col_factorization),
        "ranks": list(m.ranks),
        "n_cores": m.n_cores,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    for k, core in enumerate(m.cores):
        write_tten(os.path.join(directory, f"core_{k}.tten"), DenseTensor(core))


def load_checkpoint(directory) -> TTMatrix:
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    cores = [
        read_tten(os.path.join(directory, f"core_{k}.tten")).array
        for k in range(manifest["n_cores"])
    ]
    return TTMatrix(cores, manifest["row_factorization"], manifest["col_factorization"])
