"""Recovery of structured matrices from matrix-vector product oracles.

Four algorithms: randomized SVD for (numerically) low-rank matrices,
single-query circulant recovery in Fourier space, coloring-based banded
recovery, and level-by-level peeling for HODLR matrices.  Each returns a
RecoveryReport carrying the recovered operator and the exact query counts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, fft_forward, fft_inverse, qr_thin
from .structured import (
    BandedOperator,
    CirculantOperator,
    HodlrBlock,
    HodlrOperator,
    LowRankOperator,
    MatvecOracle,
    StructuredOperator,
)


class ZeroFourierMode(RuntimeError):
    """The circulant probe has a DFT coefficient below the pivot tolerance.

    Retrying with a fresh Gaussian probe is the caller's policy.
    """


class RankDeficitError(RuntimeError):
    """A peeling sketch has residual above tolerance after its rank-limited
    projection: the assumed block rank underestimates the true one."""

    def __init__(self, level: int, pair: int, side: str, residual: float):
        self.level = level
        self.pair = pair
        self.side = side
        self.residual = residual
        super().__init__(
            f"block rank underestimated at level {level}, pair {pair}, {side} block: "
            f"relative sketch residual {residual:.3e} after rank-limited projection"
        )


@dataclass
class RecoveryReport:
    recovered: StructuredOperator
    forward_queries: int
    transpose_queries: int
    residual_frobenius_relative: float | None = None


@dataclass(frozen=True)
class ColoringSchedule:
    """Column groups that can share one probe because their supports are disjoint."""

    num_colors: int
    color_of: np.ndarray


def _relative_residual(recovered: StructuredOperator, reference) -> float | None:
    if reference is None:
        return None
    ref = np.asarray(reference, dtype=float)
    approx = recovered.materialize(cap=max(recovered.n, ref.shape[0]))
    denom = np.linalg.norm(ref)
    if denom == 0.0:
        return float(np.linalg.norm(approx - ref))
    return float(np.linalg.norm(approx - ref) / denom)


def randomized_svd(
    oracle: MatvecOracle,
    rank: int,
    oversampling: int = 5,
    *,
    stream: RngStream,
    reference=None,
) -> RecoveryReport:
    """Recover a (numerically) low-rank matrix from rank + oversampling
    forward and equally many transpose queries.

    Probe with a Gaussian X of width rank + oversampling, orthonormalize the
    response Y = AX = QR, then read off the row action Z = A^T Q; the
    recovery is A ~= Q Z^T.  Inputs of exact rank at most `rank` are
    recovered to roundoff with probability one.
    """
    if rank < 1:
        raise ValueError("target rank must be >= 1")
    if oversampling < 0:
        raise ValueError("oversampling must be >= 0")
    width = rank + oversampling
    if width > oracle.n:
        raise ValueError(f"rank + oversampling = {width} exceeds dimension {oracle.n}")
    probe = stream.standard_normal((oracle.n, width))
    response = oracle.apply(probe)
    q = qr_thin(response).q
    row_action = oracle.apply_transpose(q)
    recovered = LowRankOperator(q, row_action.T)
    return RecoveryReport(
        recovered,
        oracle.forward_queries,
        oracle.transpose_queries,
        _relative_residual(recovered, reference),
    )


def recover_circulant(
    oracle: MatvecOracle,
    stream: RngStream | None = None,
    *,
    probe=None,
    pivot_rtol: float = 1e-8,
    reference=None,
) -> RecoveryReport:
    """Recover a circulant matrix from a single forward query.

    Applying the matrix to a probe g commutes: the response y equals the
    circulant built from g applied to the unknown first column, so the
    column is IFFT(FFT(y) / FFT(g)).  Raises ZeroFourierMode if any DFT
    coefficient of g falls below pivot_rtol * ||g||.
    """
    n = oracle.n
    if probe is None:
        if stream is None:
            raise ValueError("need a stream (or an explicit probe)")
        probe = stream.standard_normal(n)
    g = np.asarray(probe, dtype=float)
    if g.shape != (n,):
        raise ValueError(f"probe must have shape ({n},)")
    g_hat = fft_forward(g)
    tol = pivot_rtol * np.linalg.norm(g)
    small = np.abs(g_hat) <= tol
    if np.any(small):
        mode = int(np.argmin(np.abs(g_hat)))
        raise ZeroFourierMode(
            f"probe DFT coefficient {mode} has magnitude {np.abs(g_hat[mode]):.3e} "
            f"<= tolerance {tol:.3e}"
        )
    response = oracle.apply(g)
    column = fft_inverse(fft_forward(response) / g_hat).real
    recovered = CirculantOperator(column)
    return RecoveryReport(
        recovered,
        oracle.forward_queries,
        oracle.transpose_queries,
        _relative_residual(recovered, reference),
    )


def banded_coloring(n: int, bandwidth: int) -> ColoringSchedule:
    """Color columns by index mod (2w+1); same-colored columns have disjoint
    row support for any matrix of bandwidth <= w."""
    if not 0 <= bandwidth < n:
        raise ValueError("need 0 <= bandwidth < n")
    stride = 2 * bandwidth + 1
    color_of = np.arange(n) % stride
    return ColoringSchedule(min(stride, n), color_of)


def recover_banded(
    oracle: MatvecOracle,
    bandwidth: int,
    *,
    reference=None,
) -> RecoveryReport:
    """Recover a banded matrix exactly in min(2w+1, n) forward queries.

    Columns sharing a color are probed together with one indicator-sum
    vector; their responses occupy disjoint row ranges, so entries can be
    read off directly.
    """
    n = oracle.n
    w = bandwidth
    schedule = banded_coloring(n, w)
    probe = np.zeros((n, schedule.num_colors))
    probe[np.arange(n), schedule.color_of] = 1.0
    response = oracle.apply(probe)
    diagonals = np.zeros((2 * w + 1, n))
    for col in range(n):
        lo = max(0, col - w)
        hi = min(n, col + w + 1)
        rows = np.arange(lo, hi)
        diagonals[w + col - rows, rows] = response[rows, schedule.color_of[col]]
    recovered = BandedOperator(n, w, diagonals)
    return RecoveryReport(
        recovered,
        oracle.forward_queries,
        oracle.transpose_queries,
        _relative_residual(recovered, reference),
    )


def _rank_limited_basis(sketch: np.ndarray, rank: int) -> tuple[np.ndarray, float]:
    """Orthonormal basis of at most `rank` columns for the sketch's column
    space, plus the relative residual left outside it."""
    u, s, _ = np.linalg.svd(sketch, full_matrices=False)
    r = min(rank, *sketch.shape)
    basis = u[:, :r]
    total = np.linalg.norm(s)
    if total == 0.0:
        return basis, 0.0
    tail = np.linalg.norm(s[r:])
    return basis, float(tail / total)


def recover_hodlr(
    oracle: MatvecOracle,
    block_rank: int,
    levels: int,
    oversampling: int = 5,
    *,
    stream: RngStream,
    rank_rtol: float = 1e-8,
    reference=None,
) -> RecoveryReport:
    """Recover a HODLR matrix by top-down peeling.

    At each level the upper and lower sibling block families occupy disjoint
    column (and row) ranges, so each family is sketched with a single
    Gaussian probe block of width block_rank + oversampling supported on its
    column ranges; after subtracting the contributions of already-recovered
    coarser levels, each block's sketch is orthonormalized, truncated to its
    best rank-limited basis, and completed with one transpose projection
    sweep carrying those bases.  The dense diagonal leaf blocks are read off
    last with n/2^levels block-identity probes.

    Query budget per level: 2*(block_rank + oversampling) forward plus
    2*block_rank transpose, with n/2^levels extra forward queries for the
    leaves (see hodlr_query_budget).  A sketch whose residual after the
    rank truncation exceeds rank_rtol raises RankDeficitError naming the
    block.
    """
    n = oracle.n
    if n < 2 or n & (n - 1):
        raise ValueError("dimension must be a power of two")
    if levels < 1 or n % (1 << levels):
        raise ValueError("2^levels must divide the dimension")
    width = block_rank + oversampling
    if width > n // 2:
        raise ValueError("need block_rank + oversampling <= n/2")

    recovered_blocks: list[HodlrBlock] = []

    def apply_known(x: np.ndarray) -> np.ndarray:
        y = np.zeros_like(x)
        for b in recovered_blocks:
            rows = slice(b.row_start, b.row_start + b.size)
            cols = slice(b.col_start, b.col_start + b.size)
            y[rows] += b.col_factor @ (b.row_factor.T @ x[cols])
        return y

    def apply_known_t(x: np.ndarray) -> np.ndarray:
        y = np.zeros_like(x)
        for b in recovered_blocks:
            rows = slice(b.row_start, b.row_start + b.size)
            cols = slice(b.col_start, b.col_start + b.size)
            y[cols] += b.row_factor @ (b.col_factor.T @ x[rows])
        return y

    for level in range(1, levels + 1):
        size = n >> level
        pairs = 1 << (level - 1)
        r = min(block_rank, size)
        # side = "upper": blocks sit at (rows 2t, cols 2t+1); "lower" mirrors it.
        for side, parity in (("upper", 1), ("lower", 0)):
            probe = np.zeros((n, width))
            for t in range(pairs):
                src = (2 * t + parity) * size
                probe[src:src + size] = stream.standard_normal((size, width))
            sketch = oracle.apply(probe) - apply_known(probe)
            bases = []
            for t in range(pairs):
                dst = (2 * t + 1 - parity) * size
                basis, resid = _rank_limited_basis(sketch[dst:dst + size], block_rank)
                if resid > rank_rtol:
                    raise RankDeficitError(level, t, side, resid)
                bases.append(basis)
            projection = np.zeros((n, r))
            for t in range(pairs):
                dst = (2 * t + 1 - parity) * size
                projection[dst:dst + size, : bases[t].shape[1]] = bases[t]
            coeff = oracle.apply_transpose(projection) - apply_known_t(projection)
            for t in range(pairs):
                src = (2 * t + parity) * size
                dst = (2 * t + 1 - parity) * size
                row_factor = coeff[src:src + size, : bases[t].shape[1]]
                recovered_blocks.append(
                    HodlrBlock(level, dst, src, size, bases[t], row_factor)
                )

    leaf = n >> levels
    probe = np.tile(np.eye(leaf), (1 << levels, 1))
    sketch = oracle.apply(probe) - apply_known(probe)
    leaves = [sketch[j * leaf:(j + 1) * leaf] for j in range(1 << levels)]

    recovered = HodlrOperator(n, levels, block_rank, recovered_blocks, leaves)
    return RecoveryReport(
        recovered,
        oracle.forward_queries,
        oracle.transpose_queries,
        _relative_residual(recovered, reference),
    )


def hodlr_query_budget(n: int, block_rank: int, levels: int, oversampling: int = 5):
    """(forward, transpose) query counts of recover_hodlr for these parameters."""
    forward = 2 * (block_rank + oversampling) * levels + (n >> levels)
    transpose = sum(2 * min(block_rank, n >> level) for level in range(1, levels + 1))
    return forward, transpose
