"""The two shipped benchmark models.

convex: quadratic confinement with quadratic mean-reversion coupling.
nonconvex: quadratic-plus-bump confinement (curvature touches zero at the
origin) with a small Gaussian-kernel coupling, constants chosen so every
certificate passes at beta = 1.

Declared dissipativity constants come with derivations:

convex — grad V is the identity (curvature 1, no defect); the interaction
gradient difference is lam*(x - y) (curvature lam).  radius = 0.

nonconvex — V' = x - x e^{-x^2/2}: the perturbation g(x) = x e^{-x^2/2} is
bounded by e^{-1/2}, so (V'(x)-V'(y))(x-y) >= r^2 - 2 e^{-1/2} r for every
r = |x-y|.  Declaring curvature 3/4 makes the defect term needed only for
r <= radius with defect 2 e^{-1/2} and radius = 8 e^{-1/2} (from
(1 - 3/4) * radius = defect).  The kernel coupling's gradient in its first
argument has derivative in [-a, 2 a e^{-3/2}], giving interaction curvature
-a with no defect.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .potentials import (
    BumpConfinement,
    ConvexSplit,
    DissipativityConstants,
    GaussianKernelInteraction,
    PotentialSpec,
    QuadraticConfinement,
    QuadraticMeanReversion,
)


@dataclass
class BenchmarkCase:
    spec: PotentialSpec
    gamma: float
    sigma: float
    name: str

    @property
    def beta(self) -> float:
        return 2.0 * self.gamma / self.sigma**2


def convex_benchmark(lam: float = 0.25) -> BenchmarkCase:
    gamma, sigma = 1.0, math.sqrt(2.0)
    beta = 2.0 * gamma / sigma**2
    spec = PotentialSpec(
        confinement=QuadraticConfinement(c=1.0),
        interaction=QuadraticMeanReversion(lam=lam),
        dim=1,
        constants=DissipativityConstants(
            conf_curv=1.0,
            conf_defect=0.0,
            int_curv=lam,
            int_defect=0.0,
            radius=0.0,
            beta=beta,
        ),
        convex_split=ConvexSplit(rho=1.0, u2_sup=0.0),
        name="convex",
    )
    return BenchmarkCase(spec, gamma, sigma, "convex")


def nonconvex_benchmark(kernel_amp: float = 0.05) -> BenchmarkCase:
    gamma, sigma = 1.0, math.sqrt(2.0)
    beta = 2.0 * gamma / sigma**2
    defect = 2.0 * math.exp(-0.5)
    spec = PotentialSpec(
        confinement=BumpConfinement(c=1.0, a=1.0, w=1.0),
        interaction=GaussianKernelInteraction(a=kernel_amp, w=1.0),
        dim=1,
        constants=DissipativityConstants(
            conf_curv=0.75,
            conf_defect=defect,
            int_curv=-kernel_amp,
            int_defect=0.0,
            radius=4.0 * defect,
            beta=beta,
        ),
        # U1 = x^2/2 + x'^2/2 is 1-convex; U2 = the two bumps + the kernel
        convex_split=ConvexSplit(rho=1.0, u2_sup=2.0 + kernel_amp),
        name="nonconvex",
    )
    return BenchmarkCase(spec, gamma, sigma, "nonconvex")
