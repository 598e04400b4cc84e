"""Linear kernel models fitted from input/output pairs, plus losses and the
zero-shot super-resolution evaluation.

Every model applies a quadrature-discretized integral kernel to the input
function, so predictions are linear in the input by construction.  Variants
restrict the kernel's structure: full grid kernel, rank-p truncation,
Fourier multiplier (translation-invariant), band-limited kernel, and a
hierarchy of low-rank blocks with dense near-diagonal leaves.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .grids import FunctionSample, Grid1D, Grid2D, OperatorDataset
from .structured import CirculantOperator

LOSS_KINDS = (
    "mse",
    "relative-squared-l2",
    "relative-l2",
    "relative-l1",
    "h1-seminorm-relative",
)

_BOUNDARY_TOL = 1e-12


class KernelModel:
    """Base class for fitted kernel models."""

    variant: str
    grid: Grid1D

    def predict(self, f: FunctionSample) -> FunctionSample:
        raise NotImplementedError

    def _check_grid(self, f: FunctionSample):
        if f.grid != self.grid:
            raise ValueError("sample grid does not match the training grid")


class DenseKernelModel(KernelModel):
    """Grid kernel G with prediction u(x_i) = sum_j G[i, j] w_j f(x_j)."""

    variant = "dense-kernel"

    def __init__(self, grid: Grid1D, kernel: np.ndarray, ridge: float = 0.0):
        kernel = np.asarray(kernel, dtype=float)
        if kernel.shape != (grid.n, grid.n):
            raise ValueError("kernel must be square on the training grid")
        self.grid = grid
        self.kernel = kernel
        self.ridge = float(ridge)

    def predict(self, f: FunctionSample) -> FunctionSample:
        self._check_grid(f)
        weighted = self.grid.quad_weights() * f.values
        return FunctionSample(self.grid, self.kernel @ weighted)


class LowRankKernelModel(KernelModel):
    """Rank-p kernel in factored form: p output basis functions plus a
    coefficient map applied to the input."""

    variant = "low-rank"

    def __init__(self, grid: Grid1D, col_factor: np.ndarray, row_factor: np.ndarray):
        if col_factor.shape[0] != grid.n or row_factor.shape[1] != grid.n:
            raise ValueError("factor shapes must match the grid")
        if col_factor.shape[1] != row_factor.shape[0]:
            raise ValueError("factor ranks must agree")
        self.grid = grid
        self.col_factor = col_factor
        self.row_factor = row_factor

    @property
    def rank(self) -> int:
        return self.col_factor.shape[1]

    def kernel_matrix(self) -> np.ndarray:
        return self.col_factor @ self.row_factor

    def predict(self, f: FunctionSample) -> FunctionSample:
        self._check_grid(f)
        weighted = self.grid.quad_weights() * f.values
        return FunctionSample(self.grid, self.col_factor @ (self.row_factor @ weighted))


class FourierMultiplierModel(KernelModel):
    """Diagonal action in Fourier space on modes |j| <= max_mode.

    The multiplier is resolution-independent, so the model evaluates on any
    periodic grid at least as fine as the training grid (zero-padding the
    multiplier to the finer mode range).
    """

    variant = "fourier-multiplier"

    def __init__(self, grid: Grid1D, max_mode: int, multiplier: np.ndarray, excited: np.ndarray):
        if not grid.periodic:
            raise ValueError("multiplier models need a periodic training grid")
        multiplier = np.asarray(multiplier, dtype=complex)
        if multiplier.shape != (2 * max_mode + 1,):
            raise ValueError("multiplier must cover modes -max_mode..max_mode")
        self.grid = grid
        self.max_mode = int(max_mode)
        self.multiplier = multiplier
        self.excited = np.asarray(excited, dtype=bool)

    def mode_value(self, mode: int) -> complex:
        return self.multiplier[mode + self.max_mode]

    def predict(self, f: FunctionSample) -> FunctionSample:
        grid = f.grid
        if (
            not isinstance(grid, Grid1D)
            or not grid.periodic
            or grid.left != self.grid.left
            or grid.right != self.grid.right
        ):
            raise ValueError("sample must live on a periodic grid over the training domain")
        if grid.n < self.grid.n:
            raise ValueError(
                f"evaluation resolution {grid.n} is below the training resolution {self.grid.n}"
            )
        n = grid.n
        spectrum = np.fft.fft(f.values)
        out = np.zeros(n, dtype=complex)
        for mode in range(-self.max_mode, self.max_mode + 1):
            out[mode % n] = self.mode_value(mode) * spectrum[mode % n]
        return FunctionSample(grid, np.fft.ifft(out).real)

    def to_circulant(self, resolution: int | None = None) -> CirculantOperator:
        """Materialize the multiplier as a circulant matrix at a resolution."""
        n = self.grid.n if resolution is None else resolution
        if n < self.grid.n:
            raise ValueError("materialization resolution below training resolution")
        symbol = np.zeros(n, dtype=complex)
        for mode in range(-self.max_mode, self.max_mode + 1):
            symbol[mode % n] = self.mode_value(mode)
        return CirculantOperator(np.fft.ifft(symbol).real)


class BandedKernelModel(KernelModel):
    """Kernel zeroed outside the band |x - y| <= radius."""

    variant = "banded"

    def __init__(self, grid: Grid1D, kernel: np.ndarray, radius: float, truncation_error: float):
        self.grid = grid
        self.kernel = kernel
        self.radius = float(radius)
        self.truncation_error = float(truncation_error)

    def predict(self, f: FunctionSample) -> FunctionSample:
        self._check_grid(f)
        weighted = self.grid.quad_weights() * f.values
        return FunctionSample(self.grid, self.kernel @ weighted)


@dataclass(frozen=True)
class HierarchicalBlock:
    level: int
    row_start: int
    col_start: int
    size: int
    col_factor: np.ndarray
    row_factor: np.ndarray
    tail: float  # Frobenius norm of the discarded part of this block


class HierarchicalKernelModel(KernelModel):
    """Kernel as a sum of per-level low-rank blocks plus dense near-diagonal
    leaf blocks at the finest level."""

    variant = "hierarchical"

    def __init__(self, grid: Grid1D, levels: int, rank: int, blocks, leaves):
        self.grid = grid
        self.levels = int(levels)
        self.rank = int(rank)
        self.blocks = tuple(blocks)
        self.leaves = tuple(leaves)  # (row_start, col_start, dense block)

    @property
    def total_truncation_error(self) -> float:
        return float(np.sqrt(sum(b.tail ** 2 for b in self.blocks)))

    def kernel_matrix(self) -> np.ndarray:
        m = self.grid.n
        out = np.zeros((m, m))
        for b in self.blocks:
            out[b.row_start:b.row_start + b.size, b.col_start:b.col_start + b.size] = (
                b.col_factor @ b.row_factor
            )
        for r0, c0, block in self.leaves:
            out[r0:r0 + block.shape[0], c0:c0 + block.shape[1]] = block
        return out

    def predict(self, f: FunctionSample) -> FunctionSample:
        self._check_grid(f)
        weighted = self.grid.quad_weights() * f.values
        out = np.zeros(self.grid.n)
        for b in self.blocks:
            seg = weighted[b.col_start:b.col_start + b.size]
            out[b.row_start:b.row_start + b.size] += b.col_factor @ (b.row_factor @ seg)
        for r0, c0, block in self.leaves:
            out[r0:r0 + block.shape[0]] += block @ weighted[c0:c0 + block.shape[1]]
        return FunctionSample(self.grid, out)


def _weighted_norm_sq(values: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sum(weights * values ** 2))


def _prepare_green_fit(ds: OperatorDataset):
    if len(ds) == 0:
        raise ValueError("cannot fit an empty dataset")
    grid = ds.grid
    if not isinstance(grid, Grid1D):
        raise ValueError("kernel fits are defined for 1D datasets")
    w = grid.quad_weights()
    kept_in, kept_out = [], []
    for i, (f, u) in enumerate(zip(ds.inputs, ds.outputs)):
        if _weighted_norm_sq(u.values, w) == 0.0:
            warnings.warn(
                f"pair {i} has zero output norm and is excluded from the relative fit",
                UserWarning,
                stacklevel=3,
            )
            continue
        kept_in.append(f.values)
        kept_out.append(u.values)
    if not kept_in:
        raise ValueError("all pairs are degenerate (zero output norm)")
    return grid, w, np.array(kept_in).T, np.array(kept_out).T  # columns are samples


def fit_green_kernel(ds: OperatorDataset, ridge: float | None = None) -> DenseKernelModel:
    """Fit a grid kernel by relative least squares with a ridge penalty.

    Minimizes the per-pair output-normalized squared error (trapezoid
    quadrature in both the integral operator and the norms) plus
    ridge * ||kernel||_F^2.  The problem separates across output rows; each
    row solve shares one eigendecomposition.  Pairs with zero output norm
    are excluded with a warning.  Default ridge: 1e-8 times the trace scale
    of the data Gram matrix.
    """
    grid, w, f_cols, u_cols = _prepare_green_fit(ds)
    count = f_cols.shape[1]
    phi = w[:, None] * f_cols                       # quadrature-weighted inputs
    rho = 1.0 / np.sum(w[:, None] * u_cols ** 2, axis=0)
    gram = (phi * rho[None, :]) @ phi.T
    if ridge is None:
        ridge = 1e-8 * np.trace(gram) / grid.n
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    cross = (u_cols * rho[None, :]) @ phi.T          # row j holds the row-j target
    eigvals, eigvecs = np.linalg.eigh(gram)
    eigvals = np.clip(eigvals, 0.0, None)
    rotated = cross @ eigvecs
    if ridge == 0.0:
        cutoff = eigvals[-1] * 1e-14 if eigvals[-1] > 0 else np.inf
        inv = np.where(eigvals > cutoff, 1.0 / np.where(eigvals > 0, eigvals, 1.0), 0.0)
        kernel = (rotated * inv[None, :]) @ eigvecs.T
    else:
        denom = eigvals[None, :] + (count * ridge / w)[:, None]
        kernel = (rotated / denom) @ eigvecs.T
    return DenseKernelModel(grid, kernel, ridge)


def green_fit_objective(ds: OperatorDataset, kernel: np.ndarray, ridge: float) -> float:
    """The quantity fit_green_kernel minimizes, for a candidate grid kernel."""
    grid, w, f_cols, u_cols = _prepare_green_fit(ds)
    count = f_cols.shape[1]
    preds = kernel @ (w[:, None] * f_cols)
    num = np.sum(w[:, None] * (preds - u_cols) ** 2, axis=0)
    den = np.sum(w[:, None] * u_cols ** 2, axis=0)
    return float(np.mean(num / den) + ridge * np.sum(kernel ** 2))


def fit_low_rank(ds: OperatorDataset, rank: int, ridge: float | None = None) -> LowRankKernelModel:
    """Dense fit followed by truncation to the best rank-p kernel."""
    dense = fit_green_kernel(ds, ridge)
    if rank < 1 or rank > dense.grid.n:
        raise ValueError("rank must be between 1 and the sensor count")
    u, s, vt = np.linalg.svd(dense.kernel, full_matrices=False)
    return LowRankKernelModel(dense.grid, u[:, :rank] * s[:rank], vt[:rank])


def fit_fourier_multiplier(
    ds: OperatorDataset,
    max_mode: int,
    ridge: float = 0.0,
    excitation_rtol: float = 1e-12,
) -> FourierMultiplierModel:
    """Per-mode least-squares fit of a Fourier multiplier on a periodic grid.

    For each retained mode the multiplier is the ridge-regularized ratio of
    cross- to auto-power summed over the dataset.  Modes whose excitation
    falls below excitation_rtol (relative to the best-excited mode) get a
    zero multiplier and are flagged in the model's excited mask.  Conjugate
    symmetry is enforced so the fitted kernel is real.
    """
    if len(ds) == 0:
        raise ValueError("cannot fit an empty dataset")
    grid = ds.grid
    if not isinstance(grid, Grid1D) or not grid.periodic:
        raise ValueError("multiplier fits need a periodic 1D dataset")
    n = grid.n
    if max_mode < 0 or max_mode > (n - 1) // 2:
        raise ValueError(f"max_mode must be in [0, {(n - 1) // 2}] for resolution {n}")
    f_hat = np.fft.fft(np.array([f.values for f in ds.inputs]), axis=1)
    u_hat = np.fft.fft(np.array([u.values for u in ds.outputs]), axis=1)
    power = np.sum(np.abs(f_hat) ** 2, axis=0)
    cross = np.sum(np.conj(f_hat) * u_hat, axis=0)
    floor = excitation_rtol * power.max()
    multiplier = np.zeros(2 * max_mode + 1, dtype=complex)
    excited = np.zeros(2 * max_mode + 1, dtype=bool)
    for mode in range(-max_mode, max_mode + 1):
        idx = mode % n
        if power[idx] <= floor:
            continue
        multiplier[mode + max_mode] = cross[idx] / (power[idx] + ridge)
        excited[mode + max_mode] = True
    center = max_mode
    multiplier[center] = multiplier[center].real
    for mode in range(1, max_mode + 1):
        avg = 0.5 * (multiplier[center + mode] + np.conj(multiplier[center - mode]))
        if excited[center + mode] and excited[center - mode]:
            multiplier[center + mode] = avg
            multiplier[center - mode] = np.conj(avg)
    return FourierMultiplierModel(grid, max_mode, multiplier, excited)


def _band_mask_and_error(grid: Grid1D, kernel: np.ndarray, radius: float):
    x = grid.points()
    w = grid.quad_weights()
    dist = np.abs(x[:, None] - x[None, :])
    on_cut = np.abs(dist - radius) <= _BOUNDARY_TOL
    outside = dist > radius + _BOUNDARY_TOL
    # trapezoid across the cut: nodes exactly on |x-y| = r carry half weight
    ww = np.outer(w, w)
    err_sq = np.sum(ww[outside] * kernel[outside] ** 2)
    err_sq += 0.5 * np.sum(ww[on_cut] * kernel[on_cut] ** 2)
    return outside, float(np.sqrt(err_sq))


def truncate_band(model: DenseKernelModel, radius: float) -> BandedKernelModel:
    """Zero the kernel outside |x - y| <= radius and report the L2 norm of
    what was removed (quadrature with half weights on the cut itself)."""
    grid = model.grid
    if not (0.0 < radius <= grid.length):
        raise ValueError("radius must lie in (0, domain length]")
    outside, error = _band_mask_and_error(grid, model.kernel, radius)
    banded = model.kernel.copy()
    banded[outside] = 0.0
    return BandedKernelModel(grid, banded, radius, error)


def band_truncation_error(grid: Grid1D, kernel: np.ndarray, radius: float) -> float:
    """Standalone ||K - K_r||_{L2} quadrature (used as a fine-grid oracle)."""
    _, error = _band_mask_and_error(grid, np.asarray(kernel, dtype=float), radius)
    return error


def hierarchical_decompose(
    model: DenseKernelModel, levels: int, rank: int
) -> HierarchicalKernelModel:
    """Split the kernel into per-level low-rank blocks plus dense leaves.

    Dyadic partition of the index square; a block is admissible (compressed
    to the given rank) when its row and column index ranges are at least one
    block apart at that level.  Near-diagonal blocks are subdivided and kept
    dense at the finest level.  Each compressed block records the Frobenius
    norm of its discarded singular values.
    """
    grid = model.grid
    m = grid.n
    if levels < 1 or m % (1 << levels):
        raise ValueError("sensor count must be divisible by 2^levels")
    if rank < 1:
        raise ValueError("rank must be positive")
    kernel = model.kernel
    blocks: list[HierarchicalBlock] = []
    leaves: list[tuple[int, int, np.ndarray]] = []

    def descend(block_row: int, block_col: int, level: int):
        size = m >> level
        r0, c0 = block_row * size, block_col * size
        if level > 0 and abs(block_row - block_col) >= 2:
            sub = kernel[r0:r0 + size, c0:c0 + size]
            u, s, vt = np.linalg.svd(sub, full_matrices=False)
            r = min(rank, size)
            tail = float(np.linalg.norm(s[r:]))
            blocks.append(
                HierarchicalBlock(level, r0, c0, size, u[:, :r] * s[:r], vt[:r], tail)
            )
            return
        if level == levels:
            leaves.append((r0, c0, kernel[r0:r0 + size, c0:c0 + size].copy()))
            return
        for dr in (0, 1):
            for dc in (0, 1):
                descend(2 * block_row + dr, 2 * block_col + dc, level + 1)

    descend(0, 0, 0)
    return HierarchicalKernelModel(grid, levels, rank, blocks, leaves)


def predict(model: KernelModel, f: FunctionSample) -> FunctionSample:
    """Apply a fitted model to an input sample."""
    return model.predict(f)


def _quad_weights(sample: FunctionSample) -> np.ndarray:
    return sample.grid.quad_weights()


def _l2(values: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sqrt(np.sum(weights * values ** 2)))


def _l1(values: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sum(weights * np.abs(values)))


def _h1_seminorm(sample_values: np.ndarray, grid) -> float:
    w = grid.quad_weights()
    if isinstance(grid, Grid1D):
        grad = np.gradient(sample_values, grid.spacing)
        return float(np.sqrt(np.sum(w * grad ** 2)))
    gx, gy = np.gradient(sample_values, grid.spacing, grid.spacing)
    return float(np.sqrt(np.sum(w * (gx ** 2 + gy ** 2))))


def compute_loss(kind: str, predictions, targets) -> float:
    """Dataset-averaged loss with trapezoid-discretized norms.

    Kinds: mse (mean squared L2 error), relative-squared-l2, relative-l2,
    relative-l1, and h1-seminorm-relative (centered differences inside the
    domain, one-sided at the boundary).
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    if len(predictions) != len(targets) or not predictions:
        raise ValueError("need equal, nonzero numbers of predictions and targets")
    terms = []
    for pred, target in zip(predictions, targets):
        if pred.grid != target.grid:
            raise ValueError("prediction and target grids differ")
        w = _quad_weights(target)
        diff = pred.values - target.values
        if kind == "mse":
            terms.append(_l2(diff, w) ** 2)
            continue
        if kind == "relative-squared-l2":
            denom = _l2(target.values, w) ** 2
        elif kind == "relative-l2":
            denom = _l2(target.values, w)
        elif kind == "relative-l1":
            denom = _l1(target.values, w)
        else:
            denom = _h1_seminorm(target.values, target.grid)
        if denom == 0.0:
            raise ValueError("relative loss undefined for a zero-norm target")
        if kind == "relative-squared-l2":
            terms.append(_l2(diff, w) ** 2 / denom)
        elif kind == "relative-l2":
            terms.append(_l2(diff, w) / denom)
        elif kind == "relative-l1":
            terms.append(_l1(diff, w) / denom)
        else:
            terms.append(_h1_seminorm(diff, target.grid) / denom)
    return float(np.mean(terms))


def evaluate_super_resolution(
    model: FourierMultiplierModel, datasets
) -> list[tuple[int, float]]:
    """Relative L2 error of a multiplier model on test sets at resolutions at
    least as fine as the training grid; the multiplier is zero-padded to the
    finer mode range."""
    if not isinstance(model, FourierMultiplierModel):
        raise ValueError("super-resolution evaluation is defined for multiplier models")
    table = []
    for ds in datasets:
        if ds.grid.n < model.grid.n:
            raise ValueError(
                f"dataset resolution {ds.grid.n} is below the training resolution {model.grid.n}"
            )
        preds = [model.predict(f) for f in ds.inputs]
        table.append((ds.grid.n, compute_loss("relative-l2", preds, ds.outputs)))
    return table
