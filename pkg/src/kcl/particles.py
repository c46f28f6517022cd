"""Kinetic N-particle Langevin system.

State (X_i, Y_i) in R^d x R^d per particle; dynamics

    dX_i = Y_i dt
    dY_i = -gamma Y_i dt - force_i(X) dt + sigma dB_i

with force_i the mean-field gradient from forces.py.  Two integrators:

* baoab — splitting with exact Ornstein-Uhlenbeck velocity damping.  One
  fresh force evaluation per step (the closing half-kick force is cached
  and reused to open the next step).  With sigma = gamma = 0 it reduces to
  velocity Verlet.
* euler_maruyama — the plain first-order scheme, for cross-checks.

Noise is counter-based (rng.py): the Gaussian block of step k is a pure
function of (seed, stream, k), so runs are reproducible and replicas are
independent by stream id, never by shared mutable generators.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .errors import BlowUpError, ValidationError
from .forces import GridForceParams, mean_field_force, total_potential_energy
from .potentials import PotentialSpec

SNAPSHOT_MAGIC = b"KCL1"

SCHEMES = ("baoab", "euler_maruyama")


@dataclass
class SimParams:
    """Dynamics and integration parameters.

    beta = 2*gamma/sigma^2 is derived, never set directly.
    """

    gamma: float
    sigma: float
    dt: float
    scheme: str = "baoab"
    seed: int = 0
    stream: int = 0
    force_mode: str = "pairwise"
    grid: Optional[GridForceParams] = None
    blowup_threshold: float = 1e8

    def __post_init__(self):
        if self.dt <= 0:
            raise ValidationError("dt must be > 0")
        if self.gamma < 0 or self.sigma < 0:
            raise ValidationError("gamma and sigma must be >= 0")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}")

    @property
    def beta(self) -> float:
        if self.sigma == 0.0:
            return np.inf
        return 2.0 * self.gamma / self.sigma**2


@dataclass
class ParticleState:
    """Positions and velocities of N particles in d dimensions.

    step_count and cached_force are transient bookkeeping (noise counter and
    the reusable closing force of the last baoab step); they are not part of
    the serialized snapshot.
    """

    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0
    step_count: int = 0
    cached_force: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if self.positions.shape != self.velocities.shape:
            raise ValidationError("positions and velocities must match in shape")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def copy(self) -> "ParticleState":
        return ParticleState(
            self.positions.copy(),
            self.velocities.copy(),
            self.time,
            self.step_count,
            None if self.cached_force is None else self.cached_force.copy(),
        )

    # -- snapshot format: magic, u64 N, u32 d, f64 time, positions, velocities
    #    (little-endian, row-major f64) --------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(SNAPSHOT_MAGIC)
        buf.write(struct.pack("<QId", self.n, self.dim, self.time))
        buf.write(np.ascontiguousarray(self.positions, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(self.velocities, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ParticleState":
        if raw[:4] != SNAPSHOT_MAGIC:
            raise ValidationError("not a particle snapshot (bad magic)")
        n, d, t = struct.unpack_from("<QId", raw, 4)
        head = 4 + struct.calcsize("<QId")
        need = head + 2 * n * d * 8
        if len(raw) < need:
            raise ValidationError("truncated particle snapshot")
        pos = np.frombuffer(raw, dtype="<f8", count=n * d, offset=head)
        vel = np.frombuffer(raw, dtype="<f8", count=n * d, offset=head + n * d * 8)
        return cls(
            pos.reshape(n, d).astype(float),
            vel.reshape(n, d).astype(float),
            time=float(t),
        )

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ParticleState":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def gaussian_state(
    n: int,
    dim: int,
    seed: int,
    stream: int = 0,
    x_mean: float = 0.0,
    x_std: float = 1.0,
    v_std: float = 1.0,
) -> ParticleState:
    """Product-Gaussian initial data (positions and velocities i.i.d.)."""
    xs = rng.normal_block(seed, stream, 0, (n, dim)) * x_std + x_mean
    vs = rng.normal_block(seed, stream, 1, (n, dim)) * v_std
    return ParticleState(xs, vs)


def _ou_coeffs(params: SimParams):
    """Exact OU velocity update coefficients (c, s): v <- c v + s xi."""
    c = np.exp(-params.gamma * params.dt)
    if params.sigma == 0.0:
        return c, 0.0
    if params.gamma == 0.0:
        return 1.0, params.sigma * np.sqrt(params.dt)
    var = params.sigma**2 * (-np.expm1(-2 * params.gamma * params.dt)) / (
        2 * params.gamma
    )
    return c, np.sqrt(var)


def _check_sane(state: ParticleState, threshold: float) -> None:
    mx = max(
        float(np.max(np.abs(state.positions))),
        float(np.max(np.abs(state.velocities))),
    )
    if not np.isfinite(mx) or mx > threshold:
        raise BlowUpError(
            f"state blew up at t={state.time:.6g} (max |component| = {mx:.3g}, "
            f"threshold {threshold:.3g})"
        )


def _grad(state, spec, params) -> np.ndarray:
    return mean_field_force(
        state.positions, spec, params.force_mode, params.grid
    )


def step(
    state: ParticleState,
    spec: PotentialSpec,
    params: SimParams,
    noise: Optional[np.ndarray] = None,
    grad_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> ParticleState:
    """Advance one step.  Functional: returns a new state.

    noise overrides the counter-based block (used by the couplings to share
    one realization between two systems).  grad_fn overrides the force
    (used by the parallel coupling to drive the limit dynamics).
    """
    if state.dim != spec.dim:
        raise ValidationError("state dimension does not match the model")
    g = grad_fn or (lambda x: mean_field_force(x, spec, params.force_mode, params.grid))
    if noise is None:
        noise = rng.normal_block(
            params.seed, params.stream, state.step_count, state.positions.shape
        )
    x = state.positions
    v = state.velocities
    dt = params.dt

    if params.scheme == "baoab":
        g0 = state.cached_force
        if g0 is None:
            g0 = g(x)
        c, s = _ou_coeffs(params)
        v1 = v - 0.5 * dt * g0
        x1 = x + 0.5 * dt * v1
        v2 = c * v1 + s * noise
        x2 = x1 + 0.5 * dt * v2
        g1 = g(x2)
        v3 = v2 - 0.5 * dt * g1
        new = ParticleState(
            x2, v3, state.time + dt, state.step_count + 1, cached_force=g1
        )
    else:  # euler_maruyama
        g0 = g(x)
        x1 = x + dt * v
        v1 = v - dt * (params.gamma * v + g0) + params.sigma * np.sqrt(dt) * noise
        new = ParticleState(x1, v1, state.time + dt, state.step_count + 1)

    _check_sane(new, params.blowup_threshold)
    return new


@dataclass
class Observer:
    """Named scalar functional of the state, sampled on a stride."""

    name: str
    fn: Callable[[ParticleState], float]


def moment_observers() -> list[Observer]:
    return [
        Observer("x_mean", lambda s: float(s.positions.mean())),
        Observer("y_mean", lambda s: float(s.velocities.mean())),
        Observer("x_sq", lambda s: float(np.mean(np.sum(s.positions**2, -1)))),
        Observer("y_sq", lambda s: float(np.mean(np.sum(s.velocities**2, -1)))),
        Observer(
            "phase_sq",
            lambda s: float(
                np.mean(np.sum(s.positions**2, -1) + np.sum(s.velocities**2, -1))
            ),
        ),
    ]


def lyapunov_observable(
    state: ParticleState,
    spec: PotentialSpec,
    eps: float,
    alpha1: Optional[float] = None,
    force_mode: str = "pairwise",
    grid: Optional[GridForceParams] = None,
) -> float:
    """Per-particle Lyapunov functional

        (U_N(x) + 1/2 sum|y|^2 + eps * sum x.y) / N.

    When alpha1 (the quadratic-envelope floor) is given, eps is validated
    against the admissible range |eps| <= sqrt(alpha1/2) that keeps the
    functional bounded below by alpha1/2 |x|^2 + 1/4 |y|^2 - alpha3 N.
    """
    if alpha1 is not None and abs(eps) > np.sqrt(alpha1 / 2.0) + 1e-15:
        raise ValidationError(
            f"eps={eps} outside the admissible range |eps| <= sqrt(alpha1/2) "
            f"= {np.sqrt(alpha1 / 2.0):.6g}"
        )
    u = total_potential_energy(state.positions, spec, force_mode, grid)
    kin = 0.5 * float(np.sum(state.velocities**2))
    cross = eps * float(np.sum(state.positions * state.velocities))
    return (u + kin + cross) / state.n


def lyapunov_observer(
    spec: PotentialSpec,
    eps: float,
    alpha1: Optional[float] = None,
    force_mode: str = "pairwise",
    grid: Optional[GridForceParams] = None,
) -> Observer:
    if alpha1 is not None and abs(eps) > np.sqrt(alpha1 / 2.0) + 1e-15:
        raise ValidationError("eps outside the admissible range")
    return Observer(
        "lyapunov",
        lambda s: lyapunov_observable(s, spec, eps, None, force_mode, grid),
    )


@dataclass
class SimResult:
    final_state: ParticleState
    times: np.ndarray
    series: dict  # name -> np.ndarray aligned with times


def simulate(
    state: ParticleState,
    spec: PotentialSpec,
    params: SimParams,
    t_end: float,
    observers: Optional[Sequence[Observer]] = None,
    stride: int = 1,
) -> SimResult:
    """Run until state.time >= t_end (whole steps), sampling observers.

    Observers are evaluated at the initial state and then every `stride`
    steps.  The state argument is not mutated.
    """
    if t_end < state.time:
        raise ValidationError("t_end is before the state's current time")
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    observers = list(observers or [])
    n_steps = int(round((t_end - state.time) / params.dt))
    cur = state.copy()
    times = [cur.time]
    series = {ob.name: [ob.fn(cur)] for ob in observers}
    for k in range(n_steps):
        cur = step(cur, spec, params)
        if (k + 1) % stride == 0 or k == n_steps - 1:
            times.append(cur.time)
            for ob in observers:
                series[ob.name].append(ob.fn(cur))
    return SimResult(
        final_state=cur,
        times=np.array(times),
        series={k: np.array(v) for k, v in series.items()},
    )


def series_to_csv(path, times, name, values, stderr=None, n_replicas=1):
    """Write an observer series in the shared CSV layout."""
    import csv

    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "statistic", "value", "stderr", "n_replicas"])
        for i, t in enumerate(times):
            err = 0.0 if stderr is None else float(stderr[i])
            wr.writerow(
                [repr(float(t)), name, repr(float(values[i])), repr(err), n_replicas]
            )
