"""Fixed-point operator splitting for piecewise-affine model predictive control."""
from .a3check import A3Report, A3Violation, ActiveStructure, check_a3, cone_zero_test, subspace_in_cone_union
from .admm import AdmmConfig, AdmmResult, solve_admm
from .errors import (
    BlowUpError,
    CombinatorialCapError,
    DimensionMismatchError,
    MaxPivotsError,
    NoActiveRegionError,
    NotPositiveDefiniteError,
    NotSymmetricError,
    PwaProxError,
    RankDeficientError,
    RankMismatchError,
    StageInfeasibleError,
    TooManyCombinationsError,
    XiTooSmallError,
)
from .mpc import Layout, PwaRegion, PwaSystem, build_consensus, example_51, load_system
from .operator import OperatorData, build_operator, min_admissible_xi, trivial_solution
from .oracle import OracleResult, Trajectory, closed_loop, global_solve
from .polyhedra import Polyhedron, fm_project_cone
from .problem import ConsensusProblem, StagedZ, StageSet, load_problem, objective, project_Z
from .solver import SolveResult, SolverConfig, solve, verify_proximal_kkt

__all__ = [
    "A3Report", "A3Violation", "ActiveStructure", "check_a3", "cone_zero_test", "subspace_in_cone_union",
    "AdmmConfig", "AdmmResult", "solve_admm",
    "BlowUpError", "CombinatorialCapError", "DimensionMismatchError", "MaxPivotsError", "NoActiveRegionError",
    "NotPositiveDefiniteError", "NotSymmetricError", "PwaProxError", "RankDeficientError", "RankMismatchError",
    "StageInfeasibleError", "TooManyCombinationsError", "XiTooSmallError",
    "Layout", "PwaRegion", "PwaSystem", "build_consensus", "example_51", "load_system",
    "OperatorData", "build_operator", "min_admissible_xi", "trivial_solution",
    "OracleResult", "Trajectory", "closed_loop", "global_solve",
    "Polyhedron", "fm_project_cone",
    "ConsensusProblem", "StagedZ", "StageSet", "load_problem", "objective", "project_Z",
    "SolveResult", "SolverConfig", "solve", "verify_proximal_kkt",
]
