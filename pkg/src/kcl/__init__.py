"""kcl — kinetic coupling lab.

Simulation and verification toolkit for mean-field kinetic Langevin
particle systems and their kinetic PDE limit: samplers, couplings,
transport metrics, closed-form regime certificates, and a reproducible
experiment harness.
"""

__version__ = "0.1.0"

from .benchmarks import BenchmarkCase, convex_benchmark, nonconvex_benchmark
from .errors import (
    BlowUpError,
    ConvergenceError,
    KclError,
    NumericalError,
    ValidationError,
)
from .potentials import (
    BumpConfinement,
    ConvexSplit,
    DissipativityConstants,
    GaussianKernelInteraction,
    PotentialSpec,
    QuadraticConfinement,
    QuadraticMeanReversion,
    ZeroInteraction,
    eval_potential,
)

__all__ = [
    "__version__",
    "BenchmarkCase",
    "convex_benchmark",
    "nonconvex_benchmark",
    "KclError",
    "ValidationError",
    "NumericalError",
    "BlowUpError",
    "ConvergenceError",
    "PotentialSpec",
    "DissipativityConstants",
    "ConvexSplit",
    "QuadraticConfinement",
    "BumpConfinement",
    "ZeroInteraction",
    "QuadraticMeanReversion",
    "GaussianKernelInteraction",
    "eval_potential",
]
