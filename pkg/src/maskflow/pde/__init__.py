"""PDE coefficient generation, numerical solvers and paired datasets."""

from .dataset import (
    Dataset,
    PairedSample,
    generate_dataset,
    generate_pair,
    generate_pairs,
    pde_residual,
    read_dataset,
    solve,
    write_dataset,
)
from .elliptic import darcy_apply, laplacian, solve_darcy, solve_helmholtz, solve_poisson
from .grf import grf_variance, sample_coefficient, sample_grf, spectral_scaling, threshold_binary
from .navier_stokes import evolve_navier_stokes
from .spec import (
    GRFParams,
    PDEKind,
    PDESpec,
    boundary_ring,
    check_resolution,
    dirichlet_grid,
    periodic_grid,
)

__all__ = [
    "Dataset",
    "GRFParams",
    "PDEKind",
    "PDESpec",
    "PairedSample",
    "boundary_ring",
    "check_resolution",
    "darcy_apply",
    "dirichlet_grid",
    "evolve_navier_stokes",
    "generate_dataset",
    "generate_pair",
    "generate_pairs",
    "grf_variance",
    "laplacian",
    "pde_residual",
    "periodic_grid",
    "read_dataset",
    "sample_coefficient",
    "sample_grf",
    "solve",
    "solve_darcy",
    "solve_helmholtz",
    "solve_poisson",
    "spectral_scaling",
    "threshold_binary",
    "write_dataset",
]
