"""Confinement and interaction potential models.

The particle system moves in a potential landscape built from a confinement
V acting on each particle and a symmetric pair interaction W(x, x').  Models
are small classes exposing values, gradients, and the analytic curvature
bounds the certificates need.  Everything is vectorized over trailing-(d,)
position arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError

# integer codes used by the force evaluators to dispatch without callbacks
V_QUADRATIC = 0
V_QUAD_BUMP = 1
W_ZERO = 10
W_QUAD_MEAN_REVERT = 11
W_GAUSS_KERNEL = 12


def _as_points(x, dim: int) -> np.ndarray:
    """Coerce to an (n, dim) float array, accepting scalars for dim=1."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        # interpret a flat vector as n points in 1-d, or one point in dim-d
        a = a.reshape(-1, 1) if dim == 1 else a.reshape(1, -1)
    if a.shape[-1] != dim:
        raise ValidationError(
            f"position has dimension {a.shape[-1]}, model expects {dim}"
        )
    return a


class Confinement:
    """Base confinement model V: R^d -> R."""

    code: int
    params: np.ndarray

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_sup(self) -> float:
        """sup_x operator norm of the Hessian of V (analytic)."""
        raise NotImplementedError


class QuadraticConfinement(Confinement):
    """V(x) = c |x|^2 / 2."""

    def __init__(self, c: float = 1.0):
        if c <= 0:
            raise ValidationError("quadratic confinement needs c > 0")
        self.c = float(c)
        self.code = V_QUADRATIC
        self.params = np.array([self.c])

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.c * np.sum(x * x, axis=-1)

    def grad(self, x):
        return self.c * np.asarray(x, dtype=float)

    def hess_sup(self) -> float:
        return self.c

    def __repr__(self):
        return f"QuadraticConfinement(c={self.c})"


class BumpConfinement(Confinement):
    """Double-well style confinement: V(x) = c|x|^2/2 + a exp(-|x|^2/(2 w^2)).

    For a >= c w^2 the curvature at the origin drops to c - a/w^2 <= 0, which
    is the standard non-convex test case.
    """

    def __init__(self, c: float = 1.0, a: float = 1.0, w: float = 1.0):
        if c <= 0 or w <= 0:
            raise ValidationError("bump confinement needs c > 0 and w > 0")
        self.c = float(c)
        self.a = float(a)
        self.w = float(w)
        self.code = V_QUAD_BUMP
        self.params = np.array([self.c, self.a, self.w])

    def value(self, x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        return 0.5 * self.c * r2 + self.a * np.exp(-r2 / (2 * self.w**2))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        bump = self.a * np.exp(-r2 / (2 * self.w**2)) / self.w**2
        return self.c * x - bump * x

    def hess_sup(self) -> float:
        # radial Hessian eigenvalues: c + a e^{-r²/2w²} (r²/w² - 1)/w² along
        # the radius, c - a e^{-r²/2w²}/w² transverse; extrema at r=0 and
        # r² = 3w² give the candidates below.
        lo = self.c - self.a / self.w**2
        hi = self.c + 2 * self.a * np.exp(-1.5) / self.w**2
        return float(max(abs(lo), abs(hi), self.c))

    def __repr__(self):
        return f"BumpConfinement(c={self.c}, a={self.a}, w={self.w})"


class Interaction:
    """Base symmetric pair interaction W(x, x')."""

    code: int
    params: np.ndarray

    def value(self, x: np.ndarray, xp: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_x(self, x: np.ndarray, xp: np.ndarray) -> np.ndarray:
        """Gradient in the first argument."""
        raise NotImplementedError

    def mixed_hess_sup(self) -> float:
        """sup operator norm of the cross block d²W/dx dx' (analytic)."""
        raise NotImplementedError

    def hess_sup(self) -> float:
        """sup operator norm of the full second derivative of W."""
        raise NotImplementedError

    def lower_bound(self) -> float:
        """A global lower bound for W (must be finite)."""
        raise NotImplementedError


class ZeroInteraction(Interaction):
    """W = 0 (independent particles)."""

    def __init__(self):
        self.code = W_ZERO
        self.params = np.zeros(1)

    def value(self, x, xp):
        x = np.asarray(x, dtype=float)
        return np.zeros(np.broadcast_shapes(x.shape, np.shape(xp))[:-1])

    def grad_x(self, x, xp):
        x = np.asarray(x, dtype=float)
        return np.zeros(np.broadcast_shapes(x.shape, np.shape(xp)))

    def mixed_hess_sup(self) -> float:
        return 0.0

    def hess_sup(self) -> float:
        return 0.0

    def lower_bound(self) -> float:
        return 0.0

    def __repr__(self):
        return "ZeroInteraction()"


class QuadraticMeanReversion(Interaction):
    """W(x, x') = lam |x - x'|^2 / 2 — pulls every pair together."""

    def __init__(self, lam: float = 0.25):
        if lam < 0:
            raise ValidationError("mean-reversion strength must be >= 0")
        self.lam = float(lam)
        self.code = W_QUAD_MEAN_REVERT
        self.params = np.array([self.lam])

    def value(self, x, xp):
        diff = np.asarray(x, dtype=float) - np.asarray(xp, dtype=float)
        return 0.5 * self.lam * np.sum(diff * diff, axis=-1)

    def grad_x(self, x, xp):
        diff = np.asarray(x, dtype=float) - np.asarray(xp, dtype=float)
        return self.lam * diff

    def mixed_hess_sup(self) -> float:
        return self.lam

    def hess_sup(self) -> float:
        return self.lam

    def lower_bound(self) -> float:
        return 0.0

    def __repr__(self):
        return f"QuadraticMeanReversion(lam={self.lam})"


class GaussianKernelInteraction(Interaction):
    """W(x, x') = a exp(-|x - x'|^2 / (2 w^2)) — bounded smooth repulsion-free
    coupling used for the non-convex benchmark."""

    def __init__(self, a: float = 0.05, w: float = 1.0):
        if w <= 0:
            raise ValidationError("kernel width must be > 0")
        self.a = float(a)
        self.w = float(w)
        self.code = W_GAUSS_KERNEL
        self.params = np.array([self.a, self.w])

    def value(self, x, xp):
        diff = np.asarray(x, dtype=float) - np.asarray(xp, dtype=float)
        r2 = np.sum(diff * diff, axis=-1)
        return self.a * np.exp(-r2 / (2 * self.w**2))

    def grad_x(self, x, xp):
        diff = np.asarray(x, dtype=float) - np.asarray(xp, dtype=float)
        r2 = np.sum(diff * diff, axis=-1, keepdims=True)
        return -(self.a / self.w**2) * diff * np.exp(-r2 / (2 * self.w**2))

    def mixed_hess_sup(self) -> float:
        # cross block of a radial kernel peaks at r=0 with norm |a|/w^2
        return abs(self.a) / self.w**2

    def hess_sup(self) -> float:
        return abs(self.a) / self.w**2

    def lower_bound(self) -> float:
        return min(0.0, self.a)

    def __repr__(self):
        return f"GaussianKernelInteraction(a={self.a}, w={self.w})"


@dataclass
class DissipativityConstants:
    """Declared curvature-outside-a-ball constants for (V, W).

    The confinement must satisfy, for all x, y,

        (grad V(x) - grad V(y)) . (x - y)
            >= conf_curv |x-y|^2 - conf_defect |x-y| 1_{|x-y| <= radius}

    and the interaction the same shape in its first argument with
    (int_curv, int_defect).  `beta` is the inverse temperature 2*gamma/sigma^2
    of the dynamics these constants certify; it is always derived, never
    free-standing.
    """

    conf_curv: float
    conf_defect: float
    int_curv: float
    int_defect: float
    radius: float
    beta: float

    def __post_init__(self):
        if self.conf_defect < 0 or self.int_defect < 0 or self.radius < 0:
            raise ValidationError("defect constants and radius must be >= 0")
        if self.beta <= 0:
            raise ValidationError("beta must be > 0")

    @property
    def curv_total(self) -> float:
        return self.conf_curv + self.int_curv

    @property
    def defect_total(self) -> float:
        return self.conf_defect + self.int_defect


@dataclass
class ConvexSplit:
    """Declared decomposition U = U1 + U2 with U1 rho-convex and U2 bounded."""

    rho: float
    u2_sup: float

    def __post_init__(self):
        if self.rho <= 0:
            raise ValidationError("convex part must have rho > 0")
        if self.u2_sup < 0:
            raise ValidationError("bounded part sup must be >= 0")


@dataclass
class PotentialSpec:
    """A full model: confinement + interaction + declared analytic data."""

    confinement: Confinement
    interaction: Interaction
    dim: int = 1
    constants: Optional[DissipativityConstants] = None
    convex_split: Optional[ConvexSplit] = None
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError("dimension must be >= 1")

    # -- pair potential U(x, x') = V(x) + V(x') + W(x, x') ------------------

    def pair_value(self, x, xp) -> np.ndarray:
        x = _as_points(x, self.dim)
        xp = _as_points(xp, self.dim)
        return (
            self.confinement.value(x)
            + self.confinement.value(xp)
            + self.interaction.value(x, xp)
        )

    def pair_grad_x(self, x, xp) -> np.ndarray:
        """Gradient of U in its first argument."""
        x = _as_points(x, self.dim)
        xp = _as_points(xp, self.dim)
        return self.confinement.grad(x) + self.interaction.grad_x(x, xp)

    def hess_sup_total(self) -> float:
        """Upper bound for sup‖D² of the two-particle potential‖ used by the
        envelope of step maps: hess(V) + 2 hess(W)."""
        return self.confinement.hess_sup() + 2.0 * self.interaction.hess_sup()


def eval_potential(spec: PotentialSpec, x, xp=None) -> dict:
    """Evaluate the model at positions.

    With xp=None returns {"V": values, "grad_V": gradients}; with xp given
    additionally returns the pair values {"W", "grad_W_x", "U", "grad_U_x"}.
    Shapes are validated against spec.dim.
    """
    xa = _as_points(x, spec.dim)
    out = {
        "V": spec.confinement.value(xa),
        "grad_V": spec.confinement.grad(xa),
    }
    if xp is not None:
        xpa = _as_points(xp, spec.dim)
        if xpa.shape != xa.shape:
            xa2, xpa = np.broadcast_arrays(xa, xpa)
        else:
            xa2 = xa
        out["W"] = spec.interaction.value(xa2, xpa)
        out["grad_W_x"] = spec.interaction.grad_x(xa2, xpa)
        out["U"] = spec.pair_value(xa2, xpa)
        out["grad_U_x"] = out["grad_V"] + out["grad_W_x"] if xa2 is xa else (
            spec.confinement.grad(xa2) + out["grad_W_x"]
        )
    return out
