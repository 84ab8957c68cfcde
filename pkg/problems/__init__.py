"""
Problems Package
================

Steady-state PDE benchmarks with exact solutions.

Available problems:
- heat: Laplace equation with mixed Dirichlet/Neumann edges (series solution)
- poisson: manufactured Poisson problem with Dirichlet data
- ns: steady incompressible Navier–Stokes at Re = 500
- helmholtz: anisotropic Helmholtz-type problem on a holed square
- toy_poisson: purely homogeneous Dirichlet Poisson problem
- two_phase_poisson: large-amplitude Dirichlet Poisson problem (5×80 network)
"""

from typing import Callable, Dict

from .base import BenchmarkProblem, BoundarySegmentSpec, Fields
from .collocation import CollocationSet, evaluation_grid, export_csv, sample_collocation
from .heat import HeatProblem, heat_exact, heat_problem
from .helmholtz import HelmholtzProblem, helmholtz_problem
from .navier_stokes import NavierStokesProblem, ns_problem
from .poisson import (
    PoissonProblem,
    poisson_problem,
    toy_poisson_problem,
    two_phase_poisson_problem,
)


# Registry of available benchmarks
PROBLEMS: Dict[str, Callable[[], BenchmarkProblem]] = {
    "heat": heat_problem,
    "poisson": poisson_problem,
    "ns": ns_problem,
    "helmholtz": helmholtz_problem,
    "toy_poisson": toy_poisson_problem,
    "two_phase_poisson": two_phase_poisson_problem,
}


def get_problem(name: str) -> BenchmarkProblem:
    """
    Factory function to build a benchmark problem.

    Args:
        name: Benchmark name (see get_available_problems)

    Returns:
        Problem instance

    Raises:
        ValueError: If name is not recognized
    """
    if name not in PROBLEMS:
        available = ", ".join(PROBLEMS.keys())
        raise ValueError(
            f"Unknown benchmark: {name}\n"
            f"Available benchmarks: {available}"
        )
    return PROBLEMS[name]()


def get_available_problems() -> list[str]:
    """Return list of available benchmark names."""
    return list(PROBLEMS.keys())


__all__ = [
    # Factory functions
    "get_problem",
    "get_available_problems",
    # Base types
    "BenchmarkProblem",
    "BoundarySegmentSpec",
    "Fields",
    # Collocation
    "CollocationSet",
    "sample_collocation",
    "export_csv",
    "evaluation_grid",
    # Problems
    "HeatProblem",
    "PoissonProblem",
    "NavierStokesProblem",
    "HelmholtzProblem",
    "heat_problem",
    "heat_exact",
    "poisson_problem",
    "ns_problem",
    "helmholtz_problem",
    "toy_poisson_problem",
    "two_phase_poisson_problem",
    # Registry
    "PROBLEMS",
]
