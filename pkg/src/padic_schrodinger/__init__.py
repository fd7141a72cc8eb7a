"""Hierarchical Schrodinger operators on truncated p-adic grids."""

from .green import (
    GreenTable,
    TildeMetricEval,
    WeightedGrid,
    assemble_weighted_laplacian,
    compare_QH_forms,
    green_table,
    lambda_tilde,
    ratio_diagnostics,
    tilde_metric,
    transience_index,
)
from .operators import (
    LaplacianMatrix,
    MultiplierSpec,
    OperatorMatrix,
    assemble_laplacian,
    closed_form_spectrum,
    coupling_constant,
    green_L,
    heat_kernel,
    jump_kernel_value,
    lambda_of_rank,
    square_gradient,
    symbol_value,
    tail_constant,
)
from .padic import (
    ZERO_CELL,
    CapExceeded,
    Cell,
    Grid,
    PoleError,
    PrecisionWarning,
    cell_distance,
    cell_norm,
    enumerate_cells,
    gamma_p,
    radial_sum,
)
from .schrodinger import (
    PotentialSpec,
    SpectralResult,
    ThresholdMap,
    apply_D_alpha_radial,
    assemble_hamiltonian,
    b_from_beta,
    b_star,
    beta_from_b,
    bottom_of_spectrum,
    c_alpha,
    cell_average_potential,
    eigen_spectrum,
    negative_witness,
    quadratic_form,
)

__all__ = [name for name in dir() if not name.startswith("_")]
