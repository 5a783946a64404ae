"""Conic programming backend: program builder, cone projections, ADMM solver."""
from .program import (
    NONNEG,
    PSD,
    RSOC,
    SOC,
    ZERO,
    Affine,
    CompiledProgram,
    ConicProgram,
    bmat,
    concat,
    smat,
    svec,
)
from .solver import (
    DEFAULT_TOL,
    INFEASIBLE,
    MAX_ITERS,
    OFFLINE_MAX_ITERS,
    ONLINE_MAX_ITERS,
    OPTIMAL,
    UNBOUNDED,
    ConicSolution,
    solve,
)
from .cones import psd_project, soc_project

__all__ = [
    "Affine", "CompiledProgram", "ConicProgram", "ConicSolution", "bmat", "concat",
    "smat", "svec", "solve", "psd_project", "soc_project",
    "ZERO", "NONNEG", "SOC", "RSOC", "PSD",
    "OPTIMAL", "INFEASIBLE", "UNBOUNDED", "MAX_ITERS",
    "DEFAULT_TOL", "OFFLINE_MAX_ITERS", "ONLINE_MAX_ITERS",
]
