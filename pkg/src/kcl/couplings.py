"""Trajectory couplings.

Synchronous coupling: two copies of the interacting system driven by the
same Brownian increments; the squared phase-space gap per particle decays
at the contraction rate of the dynamics.

Parallel coupling: the interacting system against N independent copies of
the limiting dynamics (force frozen to the limit law, provided by a PDE
solution or a large auxiliary ensemble), same initial points, same noise.
The gap per particle measures the finite-N error directly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .errors import ValidationError
from .forces import mean_field_force
from .particles import ParticleState, SimParams, step
from .potentials import PotentialSpec


@dataclass
class DecayCurve:
    """A named statistic sampled in time, with replica spread."""

    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    statistic: str
    n_replicas: int = 1
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "statistic", "value", "stderr", "n_replicas"])
            for t, v, e in zip(self.times, self.values, self.stderr):
                wr.writerow(
                    [repr(float(t)), self.statistic, repr(float(v)),
                     repr(float(e)), self.n_replicas]
                )

    @classmethod
    def from_csv(cls, path) -> "DecayCurve":
        times, values, errs = [], [], []
        stat, nrep = "", 1
        with open(path, newline="") as fh:
            rd = csv.DictReader(fh)
            for row in rd:
                times.append(float(row["t"]))
                values.append(float(row["value"]))
                errs.append(float(row["stderr"]))
                stat = row["statistic"]
                nrep = int(row["n_replicas"])
        return cls(np.array(times), np.array(values), np.array(errs), stat, nrep)


def average_curves(curves: Sequence[DecayCurve]) -> DecayCurve:
    """Pointwise replica mean with standard errors."""
    if not curves:
        raise ValidationError("no curves to average")
    t0 = curves[0].times
    for c in curves[1:]:
        if c.times.shape != t0.shape or not np.allclose(c.times, t0):
            raise ValidationError("curves must share their time grid")
    vals = np.stack([c.values for c in curves])
    mean = vals.mean(axis=0)
    if len(curves) > 1:
        err = vals.std(axis=0, ddof=1) / np.sqrt(len(curves))
    else:
        err = np.zeros_like(mean)
    return DecayCurve(
        t0.copy(), mean, err, curves[0].statistic, n_replicas=len(curves),
        meta=dict(curves[0].meta),
    )


def _gap(a: ParticleState, b: ParticleState) -> float:
    dx = a.positions - b.positions
    dv = a.velocities - b.velocities
    return float((np.sum(dx * dx) + np.sum(dv * dv)) / a.n)


def couple_synchronous(
    state_a: ParticleState,
    state_b: ParticleState,
    spec: PotentialSpec,
    params: SimParams,
    t_end: float,
    stride: int = 1,
) -> DecayCurve:
    """Run two copies with identical noise; record the per-particle gap

        |Z_A - Z_B|^2 / N  (positions and velocities together).
    """
    if state_a.positions.shape != state_b.positions.shape:
        raise ValidationError("coupled states must have the same shape")
    if abs(state_a.time - state_b.time) > 1e-12:
        raise ValidationError("coupled states must start at the same time")
    n_steps = int(round((t_end - state_a.time) / params.dt))
    a, b = state_a.copy(), state_b.copy()
    times = [a.time]
    gaps = [_gap(a, b)]
    for k in range(n_steps):
        noise = rng.normal_block(
            params.seed, params.stream, a.step_count, a.positions.shape
        )
        a = step(a, spec, params, noise=noise)
        b = step(b, spec, params, noise=noise)
        if (k + 1) % stride == 0 or k == n_steps - 1:
            times.append(a.time)
            gaps.append(_gap(a, b))
    return DecayCurve(
        np.array(times),
        np.array(gaps),
        np.zeros(len(gaps)),
        statistic="sync_gap_sq_per_particle",
        meta={"n": a.n, "scheme": params.scheme},
    )


class LimitForce:
    """Protocol for the limiting mean-field force: force(t, positions)."""

    def force(self, t: float, positions: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def advance_to(self, t: float) -> None:
        """Advance internal time-dependent state (no-op by default)."""


class TabulatedLimitForce(LimitForce):
    """Limit force from tabulated values on a 1-d grid at stored times.

    Built by the PDE side: tables[k] holds the total mean-field gradient
    (confinement + interaction convolved with the limit law) on x_grid at
    times[k].  Queries interpolate linearly in x and in t.
    """

    def __init__(self, times: np.ndarray, x_grid: np.ndarray, tables: np.ndarray):
        self.times = np.asarray(times, dtype=float)
        self.x_grid = np.asarray(x_grid, dtype=float)
        self.tables = np.asarray(tables, dtype=float)
        if self.tables.shape != (self.times.size, self.x_grid.size):
            raise ValidationError("force table shape mismatch")

    def force(self, t: float, positions: np.ndarray) -> np.ndarray:
        ts = self.times
        if t <= ts[0]:
            row = self.tables[0]
        elif t >= ts[-1]:
            row = self.tables[-1]
        else:
            k = int(np.searchsorted(ts, t) - 1)
            w = (t - ts[k]) / (ts[k + 1] - ts[k])
            row = (1 - w) * self.tables[k] + w * self.tables[k + 1]
        return np.interp(positions[:, 0], self.x_grid, row)[:, None]


class EnsembleLimitForce(LimitForce):
    """Limit force from a frozen large auxiliary ensemble (any dimension).

    The ensemble is an independent M-particle system (M >> N) evolved with
    its own noise stream; the coupled pair never feeds back into it.  Using
    a finite ensemble biases the limit force at O(1/M); M is recorded so
    reports can state it.
    """

    def __init__(
        self,
        state: ParticleState,
        spec: PotentialSpec,
        params: SimParams,
        chunk: int = 512,
    ):
        self.state = state.copy()
        self.spec = spec
        self.params = params
        self.chunk = chunk

    @property
    def m(self) -> int:
        return self.state.n

    def advance_to(self, t: float) -> None:
        while self.state.time < t - 1e-12:
            self.state = step(self.state, self.spec, self.params)

    def force(self, t: float, positions: np.ndarray) -> np.ndarray:
        if abs(self.state.time - t) > self.params.dt + 1e-12:
            raise ValidationError(
                "ensemble reference is out of sync with the query time"
            )
        w = self.spec.interaction
        out = self.spec.confinement.grad(positions).astype(float, copy=True)
        aux = self.state.positions
        for a in range(0, positions.shape[0], self.chunk):
            b = min(a + self.chunk, positions.shape[0])
            g = w.grad_x(positions[a:b, None, :], aux[None, :, :])
            out[a:b] += g.sum(axis=1) / aux.shape[0]
        return out


def couple_parallel(
    state: ParticleState,
    limit: LimitForce,
    spec: PotentialSpec,
    params: SimParams,
    t_end: float,
    stride: int = 1,
) -> DecayCurve:
    """Interacting system vs limit dynamics, same initial points, same noise.

    Both copies integrate with the params scheme; the limit copy replaces
    the empirical mean-field gradient by limit.force(t, x).  Records the
    per-particle squared gap |Z - Z_limit|^2 / N.
    """
    n_steps = int(round((t_end - state.time) / params.dt))
    a = state.copy()
    b = state.copy()
    if params.scheme == "baoab":
        # prime both force caches so the opening half-kick of step k uses
        # the force at time t_k, not t_{k+1}
        a.cached_force = mean_field_force(
            a.positions, spec, params.force_mode, params.grid
        )
        b.cached_force = limit.force(b.time, b.positions)
    times = [a.time]
    gaps = [_gap(a, b)]
    for k in range(n_steps):
        noise = rng.normal_block(
            params.seed, params.stream, a.step_count, a.positions.shape
        )
        t_next = a.time + params.dt
        limit.advance_to(t_next)
        a = step(a, spec, params, noise=noise)
        b = step(
            b, spec, params, noise=noise,
            grad_fn=lambda x: limit.force(t_next, x),
        )
        if (k + 1) % stride == 0 or k == n_steps - 1:
            times.append(a.time)
            gaps.append(_gap(a, b))
    return DecayCurve(
        np.array(times),
        np.array(gaps),
        np.zeros(len(gaps)),
        statistic="parallel_gap_sq_per_particle",
        meta={"n": a.n, "scheme": params.scheme},
    )
