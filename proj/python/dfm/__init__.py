"""Distribution feature matching for label-shift quantification."""

from ._dfm import (
    IdentifiabilityError,
    NumericInputError,
    ParameterError,
    class_embeddings,
    energy_problem,
    estimate,
    project_to_simplex,
    rff_features,
    sample_mixture,
    select_bandwidth,
    set_threads,
    solve,
    solve_bbse_unconstrained,
    spectrum,
    sym_eigenvalues,
)

__all__ = [
    "IdentifiabilityError",
    "NumericInputError",
    "ParameterError",
    "class_embeddings",
    "energy_problem",
    "estimate",
    "project_to_simplex",
    "rff_features",
    "sample_mixture",
    "select_bandwidth",
    "set_threads",
    "solve",
    "solve_bbse_unconstrained",
    "spectrum",
    "sym_eigenvalues",
]
