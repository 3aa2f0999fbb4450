"""Relaxed proximal point and prediction-correction solvers for convex
programs with smooth inequality constraints, plus a QCQP benchmark backend."""

from .problem import (
    BlockMatrix,
    DimensionMismatchError,
    InvalidParameterError,
    IterationTrace,
    PdViolationError,
    PrimalDualPoint,
    ProblemSpec,
    ProxParams,
    SubproblemError,
    build_sigma,
    ergodic_average,
    kkt_residual,
    lagrangian_value,
    monotone_operator,
    sigma_is_pd,
    sigma_norm,
    spectral_norm,
)
from .relaxed_ppa import RelaxedPpaConfig, run_relaxed_ppa
from .pc import PcConfig, run_pc
from .qcqp import (
    LinearInstance,
    QcqpInstance,
    generate_instance,
    generate_linear_instance,
    linear_problem,
    load_instance,
    oracle_solve,
    oracle_solve_linear,
    qcqp_problem,
    save_instance,
)
from .diagnostics import (
    check_ergodic_gap,
    check_monotone,
    check_pc_contraction,
    check_ppa_contraction,
)

__version__ = "0.1.0"

__all__ = [
    "BlockMatrix",
    "DimensionMismatchError",
    "InvalidParameterError",
    "IterationTrace",
    "PdViolationError",
    "PrimalDualPoint",
    "ProblemSpec",
    "ProxParams",
    "SubproblemError",
    "build_sigma",
    "ergodic_average",
    "kkt_residual",
    "lagrangian_value",
    "monotone_operator",
    "sigma_is_pd",
    "sigma_norm",
    "spectral_norm",
    "RelaxedPpaConfig",
    "run_relaxed_ppa",
    "PcConfig",
    "run_pc",
    "LinearInstance",
    "QcqpInstance",
    "generate_instance",
    "generate_linear_instance",
    "linear_problem",
    "load_instance",
    "oracle_solve",
    "oracle_solve_linear",
    "qcqp_problem",
    "save_instance",
    "check_ergodic_gap",
    "check_monotone",
    "check_pc_contraction",
    "check_ppa_contraction",
    "__version__",
]
