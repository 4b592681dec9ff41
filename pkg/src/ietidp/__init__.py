"""IETI-DP solver for conforming multi-patch isogeometric discretizations.

The package assembles tensor B-spline Poisson problems patch by patch,
detects the multi-patch connectivity geometrically, and solves the coupled
problem with a dual-primal tearing and interconnecting method: a PCG
iteration on the multiplier Schur complement, preconditioned by the
multiplicity-scaled Dirichlet preconditioner.
"""

from .splines import (
    KnotVector,
    TensorBasis,
    make_uniform_knots,
    make_tensor_basis,
    eval_basis,
    eval_basis_deriv,
    refine_uniform,
    tensor_eval,
)
from .geometry import (
    Patch,
    MultiPatch,
    eval_geometry,
    make_unit_hypercube_multipatch,
    make_fichera,
    split_patches,
    save_multipatch,
    load_multipatch,
)
from .topology import build_topology, classify_dofs
from .assembly import gauss_rule, assemble_stiffness, assemble_load
from .ieti import IetiSystem, PrimalChoice
from .krylov import pcg, lanczos_extremes, PcgReport
from .cli import ExperimentConfig, RunRecord, run_experiment, sweep

__version__ = "0.1.0"

__all__ = [
    "KnotVector",
    "TensorBasis",
    "make_uniform_knots",
    "make_tensor_basis",
    "eval_basis",
    "eval_basis_deriv",
    "refine_uniform",
    "tensor_eval",
    "Patch",
    "MultiPatch",
    "eval_geometry",
    "make_unit_hypercube_multipatch",
    "make_fichera",
    "split_patches",
    "save_multipatch",
    "load_multipatch",
    "build_topology",
    "classify_dofs",
    "gauss_rule",
    "assemble_stiffness",
    "assemble_load",
    "IetiSystem",
    "PrimalChoice",
    "pcg",
    "lanczos_extremes",
    "PcgReport",
    "ExperimentConfig",
    "RunRecord",
    "run_experiment",
    "sweep",
]
