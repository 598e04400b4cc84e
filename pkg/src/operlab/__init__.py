"""Structured-operator recovery and operator-learning laboratory.

Recovers low-rank, circulant, banded, and hierarchically off-diagonal
low-rank matrices from black-box matrix-vector products; generates
Gaussian-process training data; solves three desk-scale model PDEs; and fits
discretized linear kernel models evaluated with relative losses and a
zero-shot super-resolution protocol.
"""

from .grids import FunctionSample, Grid1D, Grid2D, OperatorDataset
from .numerics import RngStream, gaussian_vector
from .probes import CovarianceSpec, KLBasis, kernel_eval, kl_decompose, sample_gp
from .recovery import (
    RecoveryReport,
    banded_coloring,
    randomized_svd,
    recover_banded,
    recover_circulant,
    recover_hodlr,
)
from .structured import (
    BandedOperator,
    CirculantOperator,
    DenseOperator,
    HodlrOperator,
    LowRankOperator,
    MatvecOracle,
    materialize,
    random_structured,
)

__all__ = [
    "BandedOperator",
    "CirculantOperator",
    "CovarianceSpec",
    "DenseOperator",
    "FunctionSample",
    "Grid1D",
    "Grid2D",
    "HodlrOperator",
    "KLBasis",
    "LowRankOperator",
    "MatvecOracle",
    "OperatorDataset",
    "RecoveryReport",
    "RngStream",
    "banded_coloring",
    "gaussian_vector",
    "kernel_eval",
    "kl_decompose",
    "materialize",
    "randomized_svd",
    "random_structured",
    "recover_banded",
    "recover_circulant",
    "recover_hodlr",
    "sample_gp",
]

__version__ = "0.1.0"
