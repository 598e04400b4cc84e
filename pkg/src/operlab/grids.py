"""Uniform grids, grid-sampled functions, and input/output pair collections."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    """Uniform one-dimensional grid on [left, right].

    Non-periodic grids include both endpoints, so the spacing is
    (right - left)/(n - 1).  Periodic grids exclude the right endpoint
    and have spacing (right - left)/n.
    """

    n: int
    left: float = 0.0
    right: float = 1.0
    periodic: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"grid needs at least 2 points, got n={self.n}")
        if not self.right > self.left:
            raise ValueError("grid interval must have positive length")

    @property
    def length(self) -> float:
        return self.right - self.left

    @property
    def spacing(self) -> float:
        if self.periodic:
            return self.length / self.n
        return self.length / (self.n - 1)

    def points(self) -> np.ndarray:
        if self.periodic:
            return self.left + self.spacing * np.arange(self.n)
        return np.linspace(self.left, self.right, self.n)

    def quad_weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights (uniform weights on a periodic grid)."""
        if self.periodic:
            return np.full(self.n, self.spacing)
        w = np.full(self.n, self.spacing)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w


@dataclass(frozen=True)
class Grid2D:
    """Uniform n-by-n tensor grid on the square [left, right]^2, boundary included."""

    n: int
    left: float = 0.0
    right: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"grid needs at least 2 points per side, got n={self.n}")
        if not self.right > self.left:
            raise ValueError("grid square must have positive side length")

    @property
    def spacing(self) -> float:
        return (self.right - self.left) / (self.n - 1)

    def points_1d(self) -> np.ndarray:
        return np.linspace(self.left, self.right, self.n)

    def quad_weights(self) -> np.ndarray:
        w = np.full(self.n, self.spacing)
        w[0] *= 0.5
        w[-1] *= 0.5
        return np.outer(w, w)


Grid = Union[Grid1D, Grid2D]


@dataclass(frozen=True)
class FunctionSample:
    """Function values sampled on a grid.

    Values are shaped (n,) for 1D grids and (n, n) for 2D grids.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        expected = (self.grid.n,) if isinstance(self.grid, Grid1D) else (self.grid.n, self.grid.n)
        if values.shape != expected:
            raise ValueError(f"values shape {values.shape} does not match grid shape {expected}")
        if not np.all(np.isfinite(values)):
            raise ValueError("sample contains non-finite values")


@dataclass
class OperatorDataset:
    """Paired input/output samples plus how they were made."""

    inputs: list[FunctionSample]
    outputs: list[FunctionSample]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.inputs) != len(self.outputs):
            raise ValueError("inputs and outputs must pair up one-to-one")
        for group in (self.inputs, self.outputs):
            grids = {s.grid for s in group}
            if len(grids) > 1:
                raise ValueError("all samples in a dataset must share one grid")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def grid(self) -> Grid:
        if not self.inputs:
            raise ValueError("empty dataset has no grid")
        return self.inputs[0].grid
