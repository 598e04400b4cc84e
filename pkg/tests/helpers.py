"""Shared builders for the test suite: planted operators and datasets."""
from __future__ import annotations

import numpy as np

from operlab.grids import FunctionSample, Grid1D, OperatorDataset
from operlab.numerics import RngStream
from operlab.probes import CovarianceSpec, kl_decompose, sample_from_coefficients

SMOOTH_PERIODIC = CovarianceSpec(
    "helmholtz-power", smoothness=3.0, amplitude=400.0, shift=9.0, periodic=True
)


def apply_mode_multiplier(values: np.ndarray, multiplier_fn) -> np.ndarray:
    """Independent spectral application: u_hat[j] = fn(j) * f_hat[j] over all
    representable modes (conjugate symmetry enforced by fn(-j) = conj(fn(j)))."""
    n = values.size
    spectrum = np.fft.fft(values)
    modes = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    factors = np.array([multiplier_fn(j) for j in modes], dtype=complex)
    return np.fft.ifft(factors * spectrum).real


def shifted_poisson_factor(mode: int) -> float:
    return 1.0 / (1.0 + mode ** 2)


def planted_multiplier_dataset(
    resolution: int,
    multiplier_fn,
    num_pairs: int,
    seed: int,
    spec: CovarianceSpec = SMOOTH_PERIODIC,
    length: float = 2.0 * np.pi,
) -> OperatorDataset:
    """Periodic dataset whose outputs are an exact Fourier-multiplier applied
    to Gaussian-process inputs; pair i derives its coefficients from seed and
    i only, so datasets at different resolutions share realizations."""
    basis = kl_decompose(spec, resolution)
    grid = Grid1D(resolution, 0.0, length, periodic=True)
    inputs, outputs = [], []
    for i in range(num_pairs):
        coeffs = RngStream(seed).derive(i).standard_normal(basis.draw_count)
        f = sample_from_coefficients(basis, coeffs)
        values = f.values
        inputs.append(FunctionSample(grid, values))
        outputs.append(FunctionSample(grid, apply_mode_multiplier(values, multiplier_fn)))
    return OperatorDataset(inputs, outputs, {"planted": True, "seed": seed})


def white_noise_dataset(
    grid: Grid1D, kernel: np.ndarray, num_pairs: int, seed: int
) -> OperatorDataset:
    """Pairs (f, K W f) with i.i.d. Gaussian nodal inputs: full-rank probes of
    a known grid kernel."""
    w = grid.quad_weights()
    inputs, outputs = [], []
    for i in range(num_pairs):
        f = RngStream(seed).derive(i).standard_normal(grid.n)
        inputs.append(FunctionSample(grid, f))
        outputs.append(FunctionSample(grid, kernel @ (w * f)))
    return OperatorDataset(inputs, outputs, {"planted": True})


def weighted_l2(values: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sqrt(np.sum(weights * values ** 2)))


def kernel_l2_distance(grid: Grid1D, a: np.ndarray, b: np.ndarray) -> float:
    w = grid.quad_weights()
    ww = np.outer(w, w)
    return float(np.sqrt(np.sum(ww * (a - b) ** 2)))
