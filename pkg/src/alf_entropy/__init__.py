"""Finite-size dynamical (ALF) entropy for quantum shifts."""
from .quantum_core import (
    CapExceededError,
    ValidationError,
    binary_entropy,
    partial_trace,
    shannon_entropy,
    tensor_product,
    validate_density_matrix,
    von_neumann_entropy,
)
from .partitions import (
    OperationalPartition,
    compose,
    correlation_matrix,
    lemma_bound,
    verify_unity,
)
from .spin_shift import (
    LocalPartition,
    SpinChainSystem,
    fourier_partition,
    refined_correlation,
    split_bound_check,
)
from .fermion_shift import (
    GicarPartition,
    MatrixUnit,
    build_gicar_partition,
    jw_dense,
    matrix_unit_product,
    shift_matrix_unit,
)
from .markov_reduction import (
    FiniteMarkovChain,
    build_fine_chain,
    coarse_grain,
    entropy_rate,
    finite_n_entropy,
    stationary_measure,
)

__version__ = "0.1.0"

__all__ = [
    "binary_entropy",
    "build_fine_chain",
    "build_gicar_partition",
    "CapExceededError",
    "coarse_grain",
    "compose",
    "correlation_matrix",
    "entropy_rate",
    "finite_n_entropy",
    "FiniteMarkovChain",
    "fourier_partition",
    "GicarPartition",
    "jw_dense",
    "lemma_bound",
    "LocalPartition",
    "matrix_unit_product",
    "MatrixUnit",
    "OperationalPartition",
    "partial_trace",
    "refined_correlation",
    "shannon_entropy",
    "shift_matrix_unit",
    "SpinChainSystem",
    "split_bound_check",
    "stationary_measure",
    "tensor_product",
    "validate_density_matrix",
    "ValidationError",
    "verify_unity",
    "von_neumann_entropy",
]
