"""Closed-form certificates for the mean-field regime.

Given a potential model with declared dissipativity constants, these
routines compute the quantities that gate the uniform-in-N experiments:

* a scan-based audit of the declared dissipativity inequalities,
* the inverse-temperature threshold below which the regime is certified,
* the Gibbs-measure contraction factor (Zegarlinski-type condition) via
  quadrature of the pairwise-interaction envelope, with its closed-form
  companion bound,
* the product-measure log-Sobolev constant from a declared convex-plus-
  bounded split,
* the certified exponential relaxation rate (astronomically small by
  design; it exists to be reported, not to be matched empirically),
* a quadratic envelope fit for the pair potential (growth control).

All scans are deterministic: dense grids in one dimension, seeded sampling
above.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .errors import ConvergenceError, ValidationError
from .potentials import ConvexSplit, DissipativityConstants, PotentialSpec


@dataclass
class ScanConfig:
    """Box and resolution for certificate scans."""

    lo: float = -6.0
    hi: float = 6.0
    n: int = 121
    n_samples: int = 20000  # used instead of grids when dim > 1
    seed: int = 0

    def __post_init__(self):
        if self.hi <= self.lo:
            raise ValidationError("scan box must have hi > lo")
        if self.n < 3:
            raise ValidationError("scan needs at least 3 points per axis")

    def axis(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)


@dataclass
class DissipativityReport:
    passed: bool
    max_violation_conf: float
    max_violation_int: float
    worst_pair_conf: tuple
    worst_triple_int: tuple
    tolerance: float


def check_dissipativity(
    spec: PotentialSpec,
    scan: Optional[ScanConfig] = None,
    tolerance: float = 1e-9,
) -> DissipativityReport:
    """Audit the declared curvature constants against a grid scan.

    Confinement inequality, for all scanned pairs (x, y):
        (grad V(x) - grad V(y)).(x - y)
            >= conf_curv |x-y|^2 - conf_defect |x-y| [|x-y| <= radius]
    Interaction inequality, same shape in the first argument of W for all
    scanned (x, y, z).  Reports the worst violation (positive = failed).
    """
    if spec.constants is None:
        raise ValidationError("spec has no declared dissipativity constants")
    if spec.dim != 1:
        return _check_dissipativity_sampled(spec, scan, tolerance)
    scan = scan or ScanConfig()
    c = spec.constants
    xs = scan.axis()
    gv = spec.confinement.grad(xs[:, None])[:, 0]

    dx = xs[:, None] - xs[None, :]
    r = np.abs(dx)
    lhs = (gv[:, None] - gv[None, :]) * dx
    rhs = c.conf_curv * r * r - c.conf_defect * r * (r <= c.radius)
    viol_v = rhs - lhs
    iv, jv = np.unravel_index(np.argmax(viol_v), viol_v.shape)
    max_v = float(viol_v[iv, jv])

    # interaction: loop over z to keep memory at O(n^2)
    max_w = -np.inf
    worst = (0.0, 0.0, 0.0)
    rhs_w = c.int_curv * r * r - c.int_defect * r * (r <= c.radius)
    for z in xs:
        gw = spec.interaction.grad_x(xs[:, None], np.array([[z]]))[:, 0]
        lhs_w = (gw[:, None] - gw[None, :]) * dx
        viol_w = rhs_w - lhs_w
        k = np.argmax(viol_w)
        if viol_w.flat[k] > max_w:
            max_w = float(viol_w.flat[k])
            i, j = np.unravel_index(k, viol_w.shape)
            worst = (float(xs[i]), float(xs[j]), float(z))

    passed = max_v <= tolerance and max_w <= tolerance
    return DissipativityReport(
        passed=passed,
        max_violation_conf=max_v,
        max_violation_int=max_w,
        worst_pair_conf=(float(xs[iv]), float(xs[jv])),
        worst_triple_int=worst,
        tolerance=tolerance,
    )


def _check_dissipativity_sampled(spec, scan, tolerance):
    scan = scan or ScanConfig()
    c = spec.constants
    rng = np.random.default_rng(scan.seed)
    d = spec.dim
    size = scan.n_samples
    span = scan.hi - scan.lo
    x = scan.lo + span * rng.random((size, d))
    y = scan.lo + span * rng.random((size, d))
    z = scan.lo + span * rng.random((size, d))
    dx = x - y
    r = np.linalg.norm(dx, axis=-1)
    lhs = np.sum((spec.confinement.grad(x) - spec.confinement.grad(y)) * dx, -1)
    rhs = c.conf_curv * r * r - c.conf_defect * r * (r <= c.radius)
    viol_v = rhs - lhs
    kv = int(np.argmax(viol_v))
    lhs_w = np.sum(
        (spec.interaction.grad_x(x, z) - spec.interaction.grad_x(y, z)) * dx, -1
    )
    rhs_w = c.int_curv * r * r - c.int_defect * r * (r <= c.radius)
    viol_w = rhs_w - lhs_w
    kw = int(np.argmax(viol_w))
    passed = viol_v[kv] <= tolerance and viol_w[kw] <= tolerance
    return DissipativityReport(
        passed=bool(passed),
        max_violation_conf=float(viol_v[kv]),
        max_violation_int=float(viol_w[kw]),
        worst_pair_conf=(x[kv].tolist(), y[kv].tolist()),
        worst_triple_int=(x[kw].tolist(), y[kw].tolist(), z[kw].tolist()),
        tolerance=tolerance,
    )


def beta_threshold(
    constants: DissipativityConstants, mixed_hess_sup: float
) -> float:
    """Inverse-temperature threshold of the certified regime.

    threshold = 4 / (defect_total * radius)
                * ln(curv_total / mixed_hess_sup),
    with the conventions threshold = +inf when defect_total * radius = 0
    or when the interaction's cross second derivative vanishes.  Requires
    curv_total > mixed_hess_sup (otherwise the regime is not certified for
    any temperature and a ValidationError is raised).
    """
    c = constants
    if mixed_hess_sup < 0:
        raise ValidationError("mixed Hessian sup must be >= 0")
    if c.curv_total <= mixed_hess_sup:
        raise ValidationError(
            "total curvature must exceed the interaction cross-Hessian sup "
            f"(got {c.curv_total} <= {mixed_hess_sup})"
        )
    if c.defect_total * c.radius == 0.0 or mixed_hess_sup == 0.0:
        return math.inf
    return (
        4.0
        / (c.defect_total * c.radius)
        * math.log(c.curv_total / mixed_hess_sup)
    )


@dataclass
class ContractionReport:
    """Result of the Gibbs-contraction (Zegarlinski-type) certificate."""

    b0_r: np.ndarray
    b0_values: np.ndarray
    c_l_quadrature: float
    c_l_closed_form: float
    mixed_hess_sup: float
    contraction_factor: float
    beta: float
    passed: bool


def pair_drift_envelope(
    spec: PotentialSpec, r: np.ndarray, scan: Optional[ScanConfig] = None
) -> np.ndarray:
    """Worst inward-drift defect b0(r) of the pair potential at separation r.

    b0(r) = sup over x, y with |x-y| = r and all z of
            -(x-y)/|x-y| . (grad_x U(x, z) - grad_x U(y, z)),
    estimated by a dense grid scan (dim 1) or seeded sampling (dim > 1).
    Negative values mean contraction at that separation.
    """
    scan = scan or ScanConfig()
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if spec.dim == 1:
        xs = scan.axis()
        zs = scan.axis()
        out = np.empty(r.size)
        gv = lambda a: spec.confinement.grad(a[:, None])[:, 0]
        for k, rk in enumerate(r):
            if rk == 0.0:
                out[k] = 0.0
                continue
            x = xs
            y = xs - rk
            term_v = -(gv(x) - gv(y))
            gwx = spec.interaction.grad_x(x[:, None, None], zs[None, :, None])
            gwy = spec.interaction.grad_x(y[:, None, None], zs[None, :, None])
            term_w = -(gwx - gwy)[..., 0].max(axis=1)
            out[k] = (term_v + term_w).max()
        return out
    rng = np.random.default_rng(scan.seed)
    d = spec.dim
    m = scan.n_samples
    span = scan.hi - scan.lo
    c = scan.lo + span * rng.random((m, d))
    u = rng.standard_normal((m, d))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    z = scan.lo + span * rng.random((m, d))
    out = np.empty(r.size)
    for k, rk in enumerate(r):
        if rk == 0.0:
            out[k] = 0.0
            continue
        x = c + 0.5 * rk * u
        y = c - 0.5 * rk * u
        g = spec.pair_grad_x(x, z) - spec.pair_grad_x(y, z)
        out[k] = float(np.max(-np.sum(g * u, axis=-1)))
    return out


def contraction_certificate(
    spec: PotentialSpec,
    beta: float,
    scan: Optional[ScanConfig] = None,
    r_max: float = 12.0,
    n_r: int = 241,
) -> ContractionReport:
    """Quadrature the contraction functional and compare with 1.

    c_L = 1/4 * int_0^inf exp(1/4 * int_0^s beta*b0(r) dr) * s ds, closed
    beyond r_max with the declared-constants envelope
    b0(r) <= -curv_total*r + defect_total*[r <= radius], which makes the
    tail a Gaussian integral with value exp(I(r_max)) / (beta*curv_total).
    The certificate passes when
    contraction_factor = c_L * beta * sup|cross Hessian of the pair
    potential| < 1.
    """
    if beta <= 0:
        raise ValidationError("beta must be > 0")
    if spec.constants is None:
        raise ValidationError("spec has no declared dissipativity constants")
    c = spec.constants
    if c.curv_total <= 0:
        raise ValidationError("total curvature must be > 0 for the tail bound")
    if r_max < c.radius:
        raise ValidationError("r_max must cover the defect radius")
    rs = np.linspace(0.0, r_max, n_r)
    b0 = pair_drift_envelope(spec, rs, scan)
    if b0[-1] >= 0:
        raise ConvergenceError(
            "contraction integral does not close within the scan: "
            f"b0({r_max}) = {b0[-1]:.3g} >= 0"
        )
    b = beta * b0
    inner = 0.25 * _cumtrapz(b, rs)
    integrand = 0.25 * rs * np.exp(inner)
    c_l = float(np.trapezoid(integrand, rs))
    c_l += float(np.exp(inner[-1]) / (beta * c.curv_total))
    closed = math.exp(beta * c.defect_total * c.radius / 4.0) / (
        beta * c.curv_total
    )
    mixed = spec.interaction.mixed_hess_sup()
    factor = c_l * beta * mixed
    return ContractionReport(
        b0_r=rs,
        b0_values=b0,
        c_l_quadrature=c_l,
        c_l_closed_form=closed,
        mixed_hess_sup=mixed,
        contraction_factor=factor,
        beta=beta,
        passed=bool(factor < 1.0),
    )


def _cumtrapz(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


@dataclass
class LogSobolevReport:
    eta_x: float
    eta_full: float
    rho: float
    u2_sup: float
    beta: float


def log_sobolev_constant(split: ConvexSplit, beta: float) -> LogSobolevReport:
    """Log-Sobolev constant of the stationary product structure.

    One-particle conditional constant from the convex-plus-bounded split
    (curvature rho, bounded-part oscillation u2_sup):
        eta_x = exp(2 * u2_sup) / rho,
    then the full phase-space constant is max(eta_x, beta) — the velocity
    marginal is Gaussian with variance 1/beta.
    """
    if beta <= 0:
        raise ValidationError("beta must be > 0")
    eta_x = math.exp(2.0 * split.u2_sup) / split.rho
    return LogSobolevReport(
        eta_x=eta_x,
        eta_full=max(eta_x, beta),
        rho=split.rho,
        u2_sup=split.u2_sup,
        beta=beta,
    )


def certified_relaxation_rate(
    spec: PotentialSpec, gamma: float, sigma: float, eta: float
) -> float:
    """Certified exponential rate for the N-particle relaxation.

    rate = (1/eta) * (100 * (2 + m))^(-20),
    m = 2/sigma^2 + gamma^2 + (sup|hess V| + 2 sup|hess W|)^2.

    The value is astronomically small by construction; it certifies
    positivity uniformly in N, nothing more.  Empirical rates are fitted
    separately and never compared against it.
    """
    if gamma <= 0 or sigma <= 0:
        raise ValidationError("gamma and sigma must be > 0")
    if eta <= 0:
        raise ValidationError("eta must be > 0")
    m = 2.0 / sigma**2 + gamma**2 + spec.hess_sup_total() ** 2
    return (1.0 / eta) * (100.0 * (2.0 + m)) ** (-20.0)


@dataclass
class EnvelopeFit:
    alpha1: float
    alpha2: float
    alpha3: float
    passed: bool

    def max_cross_eps(self) -> float:
        """Largest admissible cross-term weight for the Lyapunov observable
        keeping it bounded below by alpha1/2 |x|^2 + 1/4 |y|^2 - alpha3*N."""
        return math.sqrt(max(self.alpha1, 0.0) / 2.0)


def quadratic_envelope(
    spec: PotentialSpec, scan: Optional[ScanConfig] = None
) -> EnvelopeFit:
    """Fit quadratic growth control for the pair potential.

    Finds alpha1 (largest), alpha2, alpha3 (smallest) with, on the scan,
        alpha1 (|x|^2+|x'|^2) - alpha3 <= U(x,x')
                                       <= alpha2 (|x|^2+|x'|^2) + alpha3,
        |grad_x U(x,x')| <= alpha2 (|x|+|x'|) + alpha3.
    Three LP stages: minimize alpha3, then maximize alpha1, then minimize
    alpha2.  Passes iff feasible with alpha1 > 0.
    """
    scan = scan or ScanConfig()
    if spec.dim == 1:
        xs = scan.axis()
        X, XP = np.meshgrid(xs, xs, indexing="ij")
        x = X.ravel()[:, None]
        xp = XP.ravel()[:, None]
    else:
        rng = np.random.default_rng(scan.seed)
        span = scan.hi - scan.lo
        x = scan.lo + span * rng.random((scan.n_samples, spec.dim))
        xp = scan.lo + span * rng.random((scan.n_samples, spec.dim))
    s = np.sum(x * x, -1) + np.sum(xp * xp, -1)
    u = spec.pair_value(x, xp)
    g = np.linalg.norm(spec.pair_grad_x(x, xp), axis=-1)
    t = np.linalg.norm(x, axis=-1) + np.linalg.norm(xp, axis=-1)

    # variables (alpha1, alpha2, alpha3); A_ub @ v <= b_ub
    zeros = np.zeros_like(s)
    a_lower = np.column_stack([s, zeros, -np.ones_like(s)])   # a1*s - a3 <= u
    a_upper = np.column_stack([zeros, -s, -np.ones_like(s)])  # -a2*s - a3 <= -u
    a_grad = np.column_stack([zeros, -t, -np.ones_like(t)])   # -a2*t - a3 <= -g
    A = np.vstack([a_lower, a_upper, a_grad])
    b = np.concatenate([u, -u, -g])

    def solve(cvec, bounds):
        res = linprog(cvec, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        return res

    free = [(0, None), (0, None), (0, None)]
    st1 = solve([0.0, 0.0, 1.0], free)
    if not st1.success:
        return EnvelopeFit(0.0, math.inf, math.inf, False)
    a3 = float(st1.x[2])
    fixed3 = [(0, None), (0, None), (a3, a3)]
    st2 = solve([-1.0, 0.0, 0.0], fixed3)
    a1 = float(st2.x[0]) if st2.success else 0.0
    fixed13 = [(max(a1 - 1e-12, 0.0), a1), (0, None), (a3, a3)]
    st3 = solve([0.0, 1.0, 0.0], fixed13)
    a2 = float(st3.x[1]) if st3.success else math.inf
    return EnvelopeFit(a1, a2, a3, passed=bool(a1 > 1e-12))


@dataclass
class CertificateReport:
    """Everything the certify entry point computes, with pass flags."""

    dissipativity: DissipativityReport
    beta: float
    beta_threshold: float
    contraction: ContractionReport
    log_sobolev: Optional[LogSobolevReport]
    relaxation_rate: Optional[float]
    envelope: EnvelopeFit
    flags: dict = field(default_factory=dict)
    passed: bool = False

    def to_jsonable(self) -> dict:
        c = self.contraction
        return {
            "passed": self.passed,
            "flags": self.flags,
            "beta": self.beta,
            "beta_threshold": self.beta_threshold,
            "dissipativity": {
                "passed": self.dissipativity.passed,
                "max_violation_conf": self.dissipativity.max_violation_conf,
                "max_violation_int": self.dissipativity.max_violation_int,
                "worst_pair_conf": list(self.dissipativity.worst_pair_conf),
                "worst_triple_int": list(self.dissipativity.worst_triple_int),
                "tolerance": self.dissipativity.tolerance,
            },
            "contraction": {
                "c_l_quadrature": c.c_l_quadrature,
                "c_l_closed_form": c.c_l_closed_form,
                "mixed_hess_sup": c.mixed_hess_sup,
                "contraction_factor": c.contraction_factor,
                "passed": c.passed,
                "b0_samples": np.column_stack([c.b0_r, c.b0_values]).tolist(),
            },
            "log_sobolev": (
                None
                if self.log_sobolev is None
                else {
                    "eta_x": self.log_sobolev.eta_x,
                    "eta_full": self.log_sobolev.eta_full,
                    "rho": self.log_sobolev.rho,
                    "u2_sup": self.log_sobolev.u2_sup,
                }
            ),
            "relaxation_rate": self.relaxation_rate,
            "envelope": {
                "alpha1": self.envelope.alpha1,
                "alpha2": self.envelope.alpha2,
                "alpha3": self.envelope.alpha3,
                "passed": self.envelope.passed,
            },
        }


def certify(
    spec: PotentialSpec,
    gamma: float,
    sigma: float,
    scan: Optional[ScanConfig] = None,
) -> CertificateReport:
    """Run the full certificate stack for dynamics (gamma, sigma)."""
    if gamma <= 0 or sigma <= 0:
        raise ValidationError("gamma and sigma must be > 0")
    beta = 2.0 * gamma / sigma**2
    diss = check_dissipativity(spec, scan)
    mixed = spec.interaction.mixed_hess_sup()
    try:
        thr = beta_threshold(spec.constants, mixed)
        below = beta < thr
    except ValidationError:
        thr = 0.0
        below = False
    contraction = contraction_certificate(spec, beta, scan)
    lsi = (
        log_sobolev_constant(spec.convex_split, beta)
        if spec.convex_split is not None
        else None
    )
    rate = (
        certified_relaxation_rate(spec, gamma, sigma, lsi.eta_full)
        if lsi is not None
        else None
    )
    env = quadratic_envelope(spec, scan)
    flags = {
        "dissipativity": diss.passed,
        "beta_below_threshold": bool(below),
        "curvature_dominates_cross_hessian": bool(
            spec.constants.curv_total > mixed
        ),
        "contraction_factor_lt_1": contraction.passed,
        "envelope_alpha1_positive": env.passed,
        "convex_split_declared": spec.convex_split is not None,
    }
    passed = all(
        flags[k]
        for k in (
            "dissipativity",
            "beta_below_threshold",
            "curvature_dominates_cross_hessian",
            "contraction_factor_lt_1",
            "envelope_alpha1_positive",
        )
    )
    return CertificateReport(
        dissipativity=diss,
        beta=beta,
        beta_threshold=thr,
        contraction=contraction,
        log_sobolev=lsi,
        relaxation_rate=rate,
        envelope=env,
        flags=flags,
        passed=passed,
    )
