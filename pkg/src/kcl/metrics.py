"""Transport distances, divergence proxies, and decay-rate fitting.

Everything here is a pure function of its inputs.  Randomized pieces
(projection sampling) take an explicit seed, so repeated calls with the
same arguments return identical values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import linear_sum_assignment

from .couplings import DecayCurve
from .errors import ConvergenceError, ValidationError
from .meanfield import GridDensity

EXACT_SIZE_CAP = 4096


def _as_cloud(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValidationError("point cloud must be a nonempty (n, k) array")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("point cloud contains non-finite entries")
    return arr


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # (n, m) squared Euclidean cost matrix, clipped so rounding cannot
    # produce tiny negatives
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    cost = aa + bb - 2.0 * (a @ b.T)
    return np.maximum(cost, 0.0)


def w2_1d(samples_a, samples_b) -> float:
    """Quadratic Wasserstein distance between two 1-d sample sets.

    Equal sizes reduce to the root-mean-square of sorted differences.
    Unequal sizes are handled by evaluating both empirical quantile
    functions on the common refinement of their level sets, which keeps
    the result exact rather than an interpolation approximation.
    """
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValidationError("empty sample set")
    if a.size == b.size:
        return float(np.sqrt(np.mean((a - b) ** 2)))
    # both quantile functions are piecewise constant with breakpoints on
    # the 1/n and 1/m grids; any level inside a cell of the merged grid
    # sees constant values, so cell-midpoint evaluation integrates exactly
    levels = np.union1d(np.arange(1, a.size) / a.size,
                        np.arange(1, b.size) / b.size)
    edges = np.concatenate(([0.0], levels, [1.0]))
    widths = np.diff(edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    qa = a[np.minimum((mids * a.size).astype(int), a.size - 1)]
    qb = b[np.minimum((mids * b.size).astype(int), b.size - 1)]
    return float(np.sqrt(np.sum(widths * (qa - qb) ** 2)))


def _w2_exact(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape[0] != b.shape[0]:
        raise ValidationError(
            "exact transport needs equal cloud sizes "
            f"(got {a.shape[0]} and {b.shape[0]})"
        )
    if a.shape[0] > EXACT_SIZE_CAP:
        raise ValidationError(
            f"exact transport capped at {EXACT_SIZE_CAP} points "
            f"(got {a.shape[0]}); use method='sliced' or 'sinkhorn'"
        )
    if a.shape[1] == 1:
        # the 1-d optimum is the monotone rearrangement
        return w2_1d(a.ravel(), b.ravel())
    cost = _sq_dists(a, b)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def _lse(mat: np.ndarray, axis: int) -> np.ndarray:
    peak = mat.max(axis=axis, keepdims=True)
    return peak.squeeze(axis) + np.log(np.sum(np.exp(mat - peak), axis=axis))


def _sinkhorn_level(cost: np.ndarray, eps: float, f: np.ndarray,
                    g: np.ndarray, log_mu: np.ndarray, log_nu: np.ndarray,
                    tol: float, max_iter: int, check: int):
    """Alternating log-domain updates at one regularization level.

    Returns (f, g, iterations) on success and (f, g, None) when the
    marginal gap is still above tol after max_iter sweeps.
    """
    scaled = cost / eps
    mu = np.exp(log_mu)
    for it in range(1, max_iter + 1):
        f = -eps * _lse((log_nu + g / eps)[None, :] - scaled, axis=1)
        g = -eps * _lse((log_mu + f / eps)[:, None] - scaled, axis=0)
        if it % check == 0 or it == max_iter:
            # columns are exact right after the g sweep; the row gap is
            # the outstanding marginal violation
            log_plan = (
                (log_mu + f / eps)[:, None]
                + (log_nu + g / eps)[None, :]
                - scaled
            )
            row_gap = np.abs(np.exp(_lse(log_plan, axis=1)) - mu).max()
            if row_gap < tol:
                return f, g, it
    return f, g, None


def _entropic_value(cost: np.ndarray, eps_target: float, scale: float,
                    tol: float, max_iter: int) -> float:
    """Dual value <f,mu>+<g,nu>, warm-started down a regularization ladder."""
    n, m = cost.shape
    log_mu = np.full(n, -np.log(n))
    log_nu = np.full(m, -np.log(m))
    levels = [max(scale, eps_target)]
    while levels[-1] > eps_target * (1 + 1e-12):
        levels.append(max(levels[-1] / 5.0, eps_target))
    f = np.zeros(n)
    g = np.zeros(m)
    spent = 0
    for eps in levels[:-1]:
        f, g, used = _sinkhorn_level(cost, eps, f, g, log_mu, log_nu,
                                     1e-4, max_iter, check=10)
        spent += used if used is not None else max_iter
    f, g, used = _sinkhorn_level(cost, levels[-1], f, g, log_mu, log_nu,
                                 tol, max_iter, check=20)
    if used is None:
        raise ConvergenceError(
            f"sinkhorn marginals above tolerance {tol:g} after "
            f"{spent + max_iter} iterations"
        )
    return float(f @ np.exp(log_mu) + g @ np.exp(log_nu))


def _w2_sinkhorn(a: np.ndarray, b: np.ndarray, epsilon: float,
                 max_iter: int) -> float:
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    cost_ab = _sq_dists(a, b)
    scale = float(np.median(cost_ab))
    if scale == 0.0:
        return 0.0
    eps = epsilon * scale
    tol = 1e-7
    val_ab = _entropic_value(cost_ab, eps, scale, tol, max_iter)
    val_aa = _entropic_value(_sq_dists(a, a), eps, scale, tol, max_iter)
    val_bb = _entropic_value(_sq_dists(b, b), eps, scale, tol, max_iter)
    # debiasing removes the entropic blur at the cost of a sign wobble of
    # order the marginal tolerance near zero
    debiased = val_ab - 0.5 * (val_aa + val_bb)
    return float(np.sqrt(max(debiased, 0.0)))


def _w2_sliced(a: np.ndarray, b: np.ndarray, n_projections: int,
               seed: int) -> float:
    if a.shape[1] != b.shape[1]:
        raise ValidationError("clouds must share the ambient dimension")
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(n_projections):
        direction = rng.standard_normal(a.shape[1])
        direction /= np.linalg.norm(direction)
        total += w2_1d(a @ direction, b @ direction) ** 2
    return float(np.sqrt(total / n_projections))


def w2_empirical(cloud_a, cloud_b, method: str = "exact", *,
                 epsilon: float = 0.05, n_projections: int = 64,
                 seed: int = 0, max_iter: int = 100000) -> float:
    """Quadratic Wasserstein distance between two point clouds.

    method="exact" solves the assignment problem on squared costs and
    returns the root mean matched cost (equal sizes, at most
    ``EXACT_SIZE_CAP`` points).  method="sinkhorn" returns the debiased
    entropic value with regularization ``epsilon`` relative to the median
    pairwise cost.  method="sliced" averages squared 1-d distances over
    ``n_projections`` random directions; it never exceeds the exact value.
    """
    a = _as_cloud(cloud_a)
    b = _as_cloud(cloud_b)
    if a.shape[1] != b.shape[1]:
        raise ValidationError("clouds must share the ambient dimension")
    if method == "exact":
        return _w2_exact(a, b)
    if method == "sinkhorn":
        return _w2_sinkhorn(a, b, epsilon, max_iter)
    if method == "sliced":
        return _w2_sliced(a, b, n_projections, seed)
    raise ValidationError(f"unknown method {method!r}")


def w1_histogram(masses_a, masses_b, cell_width: float) -> float:
    """First-order transport distance between 1-d histograms.

    Both inputs are per-cell masses on the same uniform grid; the distance
    is the integral of the absolute difference of the two cumulative
    distributions.  Total masses must agree, or the distance is undefined.
    """
    a = np.asarray(masses_a, dtype=float)
    b = np.asarray(masses_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("histograms must be 1-d with matching shape")
    if cell_width <= 0:
        raise ValidationError("cell_width must be positive")
    if a.min() < 0 or b.min() < 0:
        raise ValidationError("negative mass in input")
    if abs(a.sum() - b.sum()) > 1e-6 * max(a.sum(), b.sum(), 1e-300):
        raise ValidationError(
            f"total masses differ ({a.sum():.6g} vs {b.sum():.6g})"
        )
    return float(np.abs(np.cumsum(a - b)).sum() * cell_width)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = eigh(mat)
    if vals.min() < -1e-10 * max(1.0, abs(vals.max())):
        raise ValidationError("covariance is not positive semidefinite")
    vals = np.maximum(vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.T


def w2_gaussian(mean_a, cov_a, mean_b, cov_b) -> float:
    """Closed-form distance between two Gaussian laws (Bures formula)."""
    ma = np.atleast_1d(np.asarray(mean_a, dtype=float))
    mb = np.atleast_1d(np.asarray(mean_b, dtype=float))
    ca = np.atleast_2d(np.asarray(cov_a, dtype=float))
    cb = np.atleast_2d(np.asarray(cov_b, dtype=float))
    if ma.shape != mb.shape or ca.shape != cb.shape or ca.shape[0] != ma.size:
        raise ValidationError("mean/covariance shapes do not match")
    if not (np.allclose(ca, ca.T) and np.allclose(cb, cb.T)):
        raise ValidationError("covariances must be symmetric")
    root_b = _psd_sqrt(cb)
    _ = _psd_sqrt(ca)
    cross = _psd_sqrt(root_b @ ca @ root_b)
    sq = float(np.sum((ma - mb) ** 2) + np.trace(ca + cb - 2.0 * cross))
    # the matrix square roots leave O(machine epsilon * scale) residue in
    # the trace; below that level the distance is numerically zero
    floor = 1e-12 * max(1.0, float(np.trace(ca) + np.trace(cb)))
    return float(np.sqrt(sq)) if sq > floor else 0.0


def divergence_proxies(p, q) -> dict:
    """Relative entropy and total-variation distance on a shared grid.

    Accepts two GridDensity objects on the same grid, or two plain arrays
    of matching shape interpreted as probability masses per cell.  Cells
    where p vanishes contribute nothing to the entropy; a cell with p > 0
    but q = 0 makes it infinite.
    """
    if isinstance(p, GridDensity) or isinstance(q, GridDensity):
        if not (isinstance(p, GridDensity) and isinstance(q, GridDensity)):
            raise ValidationError("mix of grid density and raw histogram")
        if p.grid != q.grid:
            raise ValidationError("densities live on different grids")
        cell = p.grid.hx * p.grid.hy
        pv, qv = p.values, q.values
    else:
        pv = np.asarray(p, dtype=float)
        qv = np.asarray(q, dtype=float)
        if pv.shape != qv.shape:
            raise ValidationError("histogram shapes do not match")
        cell = 1.0
    if pv.min() < 0 or qv.min() < 0:
        raise ValidationError("negative mass in input")
    mask = pv > 0
    if np.any(qv[mask] == 0):
        kl = np.inf
    else:
        kl = float(np.sum(pv[mask] * np.log(pv[mask] / qv[mask])) * cell)
    tv = float(0.5 * np.sum(np.abs(pv - qv)) * cell)
    assert tv * tv <= 2.0 * kl + 1e-12, "total variation violates the entropy bound"
    return {"kl": kl, "tv": tv}


def chaos_rate_factor(n_particles: int, dim: int) -> float:
    """Empirical-measure convergence rate factor as a function of size.

    Square-root decay in one dimension, an extra logarithm in two, and
    the usual n^(-2/d) curse beyond.
    """
    if n_particles < 1 or dim < 1:
        raise ValidationError("need n_particles >= 1 and dim >= 1")
    n = float(n_particles)
    if dim == 1:
        return n ** -0.5
    if dim == 2:
        return float(np.log1p(n) * n ** -0.5)
    return n ** (-2.0 / dim)


@dataclass
class RateFit:
    """Least-squares exponential fit of a decaying positive series."""

    rate: float
    log_prefactor: float
    r_squared: float
    window: tuple
    ci_halfwidth: float
    n_points: int

    @property
    def flagged(self) -> bool:
        # poor log-linearity means the reported rate is not trustworthy
        return self.r_squared < 0.8

    def to_jsonable(self) -> dict:
        return {
            "rate": self.rate,
            "log_prefactor": self.log_prefactor,
            "r_squared": self.r_squared,
            "window": list(self.window),
            "ci_halfwidth": self.ci_halfwidth,
            "n_points": self.n_points,
            "flagged": self.flagged,
        }


def fit_exponential_rate(curve: DecayCurve, window: tuple | None = None,
                         drop_initial_fraction: float = 0.1,
                         noise_floor_multiple: float = 3.0) -> RateFit:
    """Fit value = C exp(-rate t) by least squares on the log series.

    Points are dropped when they fall outside the window, are not strictly
    positive, or sit below ``noise_floor_multiple`` times their standard
    error (the Monte Carlo noise floor).  Without an explicit window the
    initial ``drop_initial_fraction`` of the time range is discarded to
    skip the non-exponential transient.
    """
    t = np.asarray(curve.times, dtype=float)
    v = np.asarray(curve.values, dtype=float)
    se = np.asarray(curve.stderr, dtype=float)
    if t.size == 0:
        raise ValidationError("empty decay curve")
    if window is None:
        lo = t.min() + drop_initial_fraction * (t.max() - t.min())
        hi = t.max()
    else:
        lo, hi = float(window[0]), float(window[1])
        if not (t.min() <= lo < hi <= t.max()):
            raise ValidationError("window must lie inside the data range")
    keep = (t >= lo) & (t <= hi) & (v > 0)
    keep &= ~((se > 0) & (v < noise_floor_multiple * se))
    if keep.sum() < 5:
        raise ValidationError(
            f"only {int(keep.sum())} usable points in the fit window; need 5"
        )
    tk, logv = t[keep], np.log(v[keep])
    slope, intercept = np.polyfit(tk, logv, 1)
    pred = slope * tk + intercept
    ssr = float(np.sum((logv - pred) ** 2))
    sst = float(np.sum((logv - logv.mean()) ** 2))
    r_squared = 1.0 if sst <= 1e-30 else max(0.0, 1.0 - ssr / sst)
    dof = tk.size - 2
    slope_var = (ssr / dof) / float(np.sum((tk - tk.mean()) ** 2)) if dof > 0 else 0.0
    return RateFit(
        rate=float(-slope),
        log_prefactor=float(intercept),
        r_squared=float(min(r_squared, 1.0)),
        window=(float(tk.min()), float(tk.max())),
        ci_halfwidth=float(1.96 * np.sqrt(slope_var)),
        n_points=int(tk.size),
    )
