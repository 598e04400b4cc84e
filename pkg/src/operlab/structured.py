"""Structured operator representations and the black-box matvec oracle.

Operators are immutable after construction and expose apply / apply_transpose
for vectors or column-stacked probe matrices, plus exact dense
materialization (capped, to keep tests from accidentally going O(N^2) in
memory at large N).
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, fft_forward, fft_inverse

DENSE_CAP = 4096


def _check_probe(x, n: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.size != n:
            raise ValueError(f"probe length {arr.size} does not match dimension {n}")
        return arr[:, None], True
    if arr.ndim == 2:
        if arr.shape[0] != n:
            raise ValueError(f"probe has {arr.shape[0]} rows, expected {n}")
        return arr, False
    raise ValueError("probe must be a vector or a matrix")


class StructuredOperator:
    """Base class: a square operator with matvec, transpose matvec, and dense form."""

    n: int

    def _apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _apply_transpose(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply(self, x) -> np.ndarray:
        mat, squeeze = _check_probe(x, self.n)
        out = self._apply(mat)
        return out[:, 0] if squeeze else out

    def apply_transpose(self, x) -> np.ndarray:
        mat, squeeze = _check_probe(x, self.n)
        out = self._apply_transpose(mat)
        return out[:, 0] if squeeze else out

    def materialize(self, cap: int = DENSE_CAP) -> np.ndarray:
        if self.n > cap:
            raise ValueError(f"dimension {self.n} exceeds dense cap {cap}")
        return self._materialize()

    def _materialize(self) -> np.ndarray:
        return self._apply(np.eye(self.n))


class DenseOperator(StructuredOperator):
    """Plain dense matrix, mostly used as a reference in tests."""

    def __init__(self, matrix):
        a = np.array(matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("dense operator must be a square matrix")
        if not np.all(np.isfinite(a)):
            raise ValueError("dense operator entries must be finite")
        self.matrix = a
        self.n = a.shape[0]

    def _apply(self, x):
        return self.matrix @ x

    def _apply_transpose(self, x):
        return self.matrix.T @ x

    def _materialize(self):
        return self.matrix.copy()


class LowRankOperator(StructuredOperator):
    """Product form A = C R with C of shape (n, k) and R of shape (k, n)."""

    def __init__(self, col_factor, row_factor):
        c = np.array(col_factor, dtype=float)
        r = np.array(row_factor, dtype=float)
        if c.ndim != 2 or r.ndim != 2 or c.shape[1] != r.shape[0] or c.shape[0] != r.shape[1]:
            raise ValueError("factors must have shapes (n, k) and (k, n)")
        self.col_factor = c
        self.row_factor = r
        self.n = c.shape[0]

    @property
    def rank_bound(self) -> int:
        return self.col_factor.shape[1]

    def _apply(self, x):
        return self.col_factor @ (self.row_factor @ x)

    def _apply_transpose(self, x):
        return self.row_factor.T @ (self.col_factor.T @ x)

    def _materialize(self):
        return self.col_factor @ self.row_factor


class CirculantOperator(StructuredOperator):
    """Circulant matrix parameterized by its first column; applied via FFT."""

    def __init__(self, first_column):
        c = np.array(first_column, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("first column must be a nonempty vector")
        self.first_column = c
        self.n = c.size

    def _symbol(self) -> np.ndarray:
        return fft_forward(self.first_column)

    def _apply(self, x):
        xhat = np.fft.fft(x, axis=0)
        return np.fft.ifft(self._symbol()[:, None] * xhat, axis=0).real

    def _apply_transpose(self, x):
        # A^T is circulant with first column c[(n - i) mod n]
        xhat = np.fft.fft(x, axis=0)
        sym = np.conj(self._symbol())
        return np.fft.ifft(sym[:, None] * xhat, axis=0).real

    def _materialize(self):
        cols = [np.roll(self.first_column, j) for j in range(self.n)]
        return np.column_stack(cols)


class BandedOperator(StructuredOperator):
    """Banded matrix with A[i, j] = 0 whenever |i - j| > bandwidth.

    Stored as 2w+1 diagonals indexed by row: diagonals[w + o, i] = A[i, i + o]
    for offsets o in [-w, w]; out-of-range slots are zero.
    """

    def __init__(self, n: int, bandwidth: int, diagonals):
        d = np.array(diagonals, dtype=float)
        if bandwidth < 0 or bandwidth >= n:
            raise ValueError("need 0 <= bandwidth < n")
        if d.shape != (2 * bandwidth + 1, n):
            raise ValueError(f"diagonals must have shape {(2 * bandwidth + 1, n)}")
        self.n = n
        self.bandwidth = bandwidth
        self.diagonals = d

    def _apply(self, x):
        y = np.zeros_like(x)
        w = self.bandwidth
        for offset in range(-w, w + 1):
            lo = max(0, -offset)
            hi = self.n - max(0, offset)
            band = self.diagonals[w + offset, lo:hi]
            y[lo:hi] += band[:, None] * x[lo + offset:hi + offset]
        return y

    def _apply_transpose(self, x):
        y = np.zeros_like(x)
        w = self.bandwidth
        for offset in range(-w, w + 1):
            lo = max(0, -offset)
            hi = self.n - max(0, offset)
            band = self.diagonals[w + offset, lo:hi]
            y[lo + offset:hi + offset] += band[:, None] * x[lo:hi]
        return y

    def _materialize(self):
        a = np.zeros((self.n, self.n))
        w = self.bandwidth
        for offset in range(-w, w + 1):
            lo = max(0, -offset)
            hi = self.n - max(0, offset)
            rows = np.arange(lo, hi)
            a[rows, rows + offset] = self.diagonals[w + offset, lo:hi]
        return a


@dataclass(frozen=True)
class HodlrBlock:
    """One off-diagonal low-rank block: rows/cols give its position, and the
    block equals col_factor @ row_factor.T."""

    level: int
    row_start: int
    col_start: int
    size: int
    col_factor: np.ndarray
    row_factor: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.col_factor, dtype=float)
        r = np.asarray(self.row_factor, dtype=float)
        if c.shape[0] != self.size or r.shape[0] != self.size or c.shape[1] != r.shape[1]:
            raise ValueError("block factors must be (size, r) with matching rank")
        object.__setattr__(self, "col_factor", c)
        object.__setattr__(self, "row_factor", r)


class HodlrOperator(StructuredOperator):
    """Hierarchically off-diagonal low-rank matrix.

    The index range [0, n) is split dyadically for `levels` levels; every
    off-diagonal sibling block carries a rank-limited factorization and the
    finest diagonal blocks are stored densely.  n must be a power of two
    divisible by 2^levels.
    """

    def __init__(self, n: int, levels: int, block_rank: int, blocks, leaves):
        if n < 2 or n & (n - 1):
            raise ValueError("dimension must be a power of two")
        if levels < 1 or n % (1 << levels):
            raise ValueError("2^levels must divide the dimension")
        if block_rank < 1:
            raise ValueError("block rank must be positive")
        leaf = n >> levels
        expected = []
        for level in range(1, levels + 1):
            size = n >> level
            for pair in range(1 << (level - 1)):
                base = 2 * pair * size
                expected.append((level, base, base + size, size))        # upper
                expected.append((level, base + size, base, size))        # lower
        got = [(b.level, b.row_start, b.col_start, b.size) for b in blocks]
        if sorted(got) != sorted(expected):
            raise ValueError("blocks do not tile the off-diagonal structure")
        for b in blocks:
            if b.col_factor.shape[1] > block_rank:
                raise ValueError("block factor rank exceeds the declared block rank")
        if len(leaves) != (1 << levels) or any(
            np.asarray(m).shape != (leaf, leaf) for m in leaves
        ):
            raise ValueError(f"need {1 << levels} dense leaf blocks of size {leaf}x{leaf}")
        self.n = n
        self.levels = levels
        self.block_rank = block_rank
        self.blocks = tuple(blocks)
        self.leaves = tuple(np.array(m, dtype=float) for m in leaves)

    def _apply(self, x):
        y = np.zeros_like(x)
        for b in self.blocks:
            rows = slice(b.row_start, b.row_start + b.size)
            cols = slice(b.col_start, b.col_start + b.size)
            y[rows] += b.col_factor @ (b.row_factor.T @ x[cols])
        leaf = self.n >> self.levels
        for j, block in enumerate(self.leaves):
            rows = slice(j * leaf, (j + 1) * leaf)
            y[rows] += block @ x[rows]
        return y

    def _apply_transpose(self, x):
        y = np.zeros_like(x)
        for b in self.blocks:
            rows = slice(b.row_start, b.row_start + b.size)
            cols = slice(b.col_start, b.col_start + b.size)
            y[cols] += b.row_factor @ (b.col_factor.T @ x[rows])
        leaf = self.n >> self.levels
        for j, block in enumerate(self.leaves):
            rows = slice(j * leaf, (j + 1) * leaf)
            y[rows] += block.T @ x[rows]
        return y

    def _materialize(self):
        a = np.zeros((self.n, self.n))
        for b in self.blocks:
            a[b.row_start:b.row_start + b.size, b.col_start:b.col_start + b.size] = (
                b.col_factor @ b.row_factor.T
            )
        leaf = self.n >> self.levels
        for j, block in enumerate(self.leaves):
            a[j * leaf:(j + 1) * leaf, j * leaf:(j + 1) * leaf] = block
        return a


class MatvecOracle:
    """Black-box handle exposing x -> Ax and x -> A^T x with query counters.

    Counters increase by the number of columns in each probe; entries of the
    underlying matrix are never exposed directly.  Counter updates are
    lock-protected so concurrent probing keeps exact counts.
    """

    def __init__(self, n: int, apply_fn, apply_transpose_fn):
        self.n = n
        self._forward = apply_fn
        self._transpose = apply_transpose_fn
        self.forward_queries = 0
        self.transpose_queries = 0
        self._lock = threading.Lock()

    @classmethod
    def from_operator(cls, op: StructuredOperator) -> "MatvecOracle":
        return cls(op.n, op.apply, op.apply_transpose)

    @classmethod
    def from_dense(cls, matrix) -> "MatvecOracle":
        return cls.from_operator(DenseOperator(matrix))

    def _count(self, x) -> int:
        arr = np.asarray(x)
        return 1 if arr.ndim == 1 else arr.shape[1]

    def apply(self, x) -> np.ndarray:
        mat, squeeze = _check_probe(x, self.n)
        with self._lock:
            self.forward_queries += mat.shape[1]
        out = np.asarray(self._forward(mat))
        return out[:, 0] if squeeze else out

    def apply_transpose(self, x) -> np.ndarray:
        mat, squeeze = _check_probe(x, self.n)
        with self._lock:
            self.transpose_queries += mat.shape[1]
        out = np.asarray(self._transpose(mat))
        return out[:, 0] if squeeze else out


def materialize(op: StructuredOperator, cap: int = DENSE_CAP) -> np.ndarray:
    """Exact dense form of a structured operator (refuses n > cap)."""
    return op.materialize(cap=cap)


def random_structured(
    kind: str,
    n: int,
    stream: RngStream,
    *,
    rank: int | None = None,
    bandwidth: int | None = None,
    levels: int | None = None,
) -> StructuredOperator:
    """Random test instance of the requested kind with i.i.d. Gaussian free
    parameters; deterministic per stream."""
    if kind == "dense":
        return DenseOperator(stream.standard_normal((n, n)))
    if kind == "low-rank":
        if rank is None or not 1 <= rank < n:
            raise ValueError("low-rank instance needs 1 <= rank < n")
        return LowRankOperator(
            stream.standard_normal((n, rank)), stream.standard_normal((rank, n))
        )
    if kind == "circulant":
        return CirculantOperator(stream.standard_normal(n))
    if kind == "banded":
        if bandwidth is None or not 0 <= bandwidth < n:
            raise ValueError("banded instance needs 0 <= bandwidth < n")
        w = bandwidth
        diagonals = np.zeros((2 * w + 1, n))
        for offset in range(-w, w + 1):
            lo = max(0, -offset)
            hi = n - max(0, offset)
            diagonals[w + offset, lo:hi] = stream.standard_normal(hi - lo)
        return BandedOperator(n, w, diagonals)
    if kind == "hodlr":
        if rank is None or levels is None:
            raise ValueError("hodlr instance needs rank and levels")
        if n < 2 or n & (n - 1) or levels < 1 or n % (1 << levels):
            raise ValueError("hodlr needs n a power of two with 2^levels | n")
        blocks = []
        for level in range(1, levels + 1):
            size = n >> level
            r = min(rank, size)
            for pair in range(1 << (level - 1)):
                base = 2 * pair * size
                for row_start, col_start in ((base, base + size), (base + size, base)):
                    blocks.append(
                        HodlrBlock(
                            level,
                            row_start,
                            col_start,
                            size,
                            stream.standard_normal((size, r)),
                            stream.standard_normal((size, r)),
                        )
                    )
        leaf = n >> levels
        leaves = [stream.standard_normal((leaf, leaf)) for _ in range(1 << levels)]
        return HodlrOperator(n, levels, rank, blocks, leaves)
    raise ValueError(f"unknown structured kind {kind!r}")
