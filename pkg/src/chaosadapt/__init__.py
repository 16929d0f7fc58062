"""Basis adaptation of Hermite chaos expansions for random fields."""

__version__ = "0.1.0"

from .adaptation import (
    AdaptedExpansion,
    DegenerateGaussianPart,
    IsometryField,
    KernelMatrix,
    complete_isometry,
    eta_kernel,
    gaussian_adaptation,
    global_error_norm,
    project,
    projection_error,
    pure_retained,
    quadratic_adaptation,
    quadratic_form,
    total_retained,
)
from .chaos import (
    ChaosExpansion,
    GaussianSample,
    IndexSet,
    IndexSetTooLarge,
    build_index_set,
    eval_expansion,
    hermite,
    index_set_size,
    load_expansion,
    moments,
    psi,
    psi_matrix,
    save_expansion,
)
from .elliptic import EllipticProblem, SolverError, SourceSpec, assemble_source, solve_pressure, velocity
from .estimation import SampleStore, density_distance, fit_coefficients, kde
from .random_field import KLBasis, RandomFieldSpec, SpatialGrid, kl_decompose
from .rotation import NotAnIsometry, gram_entry, gram_entry_1d, gram_matrix, rotate_coefficients
