import numpy as np
import pytest

from kcl.benchmarks import convex_benchmark, nonconvex_benchmark
from kcl.errors import ValidationError
from kcl.gibbs import MalaParams, sample_gibbs
from kcl.potentials import (
    DissipativityConstants,
    PotentialSpec,
    QuadraticConfinement,
    ZeroInteraction,
)


def _independent_spec():
    return PotentialSpec(
        confinement=QuadraticConfinement(c=1.0),
        interaction=ZeroInteraction(),
        dim=1,
        constants=DissipativityConstants(1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
        name="independent",
    )


def test_product_gaussian_marginals():
    # V = x^2/2, W = 0, beta = 1: the target is i.i.d. N(0,1) in x and the
    # velocities are drawn exactly from N(0,1)
    spec = _independent_spec()
    state, diag = sample_gibbs(spec, n_particles=2048, beta=1.0, seed=31)
    assert diag.healthy
    assert 0.3 <= diag.acceptance_rate <= 0.8
    x = state.positions[:, 0]
    v = state.velocities[:, 0]
    # CLT scale for the variance of 2048 samples is ~0.03
    assert abs(x.mean()) < 0.12
    assert abs(np.var(x) - 1.0) < 0.15
    assert abs(v.mean()) < 0.12
    assert abs(np.var(v) - 1.0) < 0.15


def test_velocity_temperature_scaling():
    spec = _independent_spec()
    state, _ = sample_gibbs(spec, n_particles=2048, beta=4.0, seed=32)
    # Var(v) = 1/beta = 0.25
    assert abs(np.var(state.positions[:, 0]) - 0.25) < 0.05
    assert abs(np.var(state.velocities[:, 0]) - 0.25) < 0.04


def test_mean_reversion_coordinate_variance():
    # quadratic confinement plus mean reversion of strength lam: the joint
    # Gaussian has per-coordinate variance
    #   1/(N beta) + (1 - 1/N) / (beta (1 + lam))
    bench = convex_benchmark()
    n = 1024
    state, diag = sample_gibbs(bench.spec, n_particles=n, beta=bench.beta, seed=33)
    assert diag.healthy
    lam = bench.spec.interaction.lam
    expect = 1.0 / (n * bench.beta) + (1 - 1.0 / n) / (bench.beta * (1 + lam))
    assert np.var(state.positions[:, 0]) == pytest.approx(expect, abs=0.1)


def test_nonconvex_target_smoke():
    bench = nonconvex_benchmark()
    state, diag = sample_gibbs(
        bench.spec, n_particles=256, beta=bench.beta, seed=34,
        force_mode="pairwise",
    )
    assert diag.healthy
    assert np.all(np.isfinite(state.positions))
    # the bump pushes mass away from the origin but the law stays centered
    assert abs(state.positions.mean()) < 0.3


def test_sampler_reproducible_and_stream_separated():
    spec = _independent_spec()
    a, _ = sample_gibbs(spec, n_particles=64, beta=1.0, seed=7, stream=1)
    b, _ = sample_gibbs(spec, n_particles=64, beta=1.0, seed=7, stream=1)
    assert a.positions.tobytes() == b.positions.tobytes()
    assert a.velocities.tobytes() == b.velocities.tobytes()
    c, _ = sample_gibbs(spec, n_particles=64, beta=1.0, seed=7, stream=2)
    assert not np.allclose(a.positions, c.positions)


def test_rejects_bad_arguments():
    spec = _independent_spec()
    with pytest.raises(ValidationError):
        sample_gibbs(spec, n_particles=0, beta=1.0, seed=0)
    with pytest.raises(ValidationError):
        sample_gibbs(spec, n_particles=8, beta=0.0, seed=0)


def test_unhealthy_chain_is_flagged():
    # absurdly large fixed step with no adaptation: everything is rejected
    spec = _independent_spec()
    mala = MalaParams(n_burn=0, n_keep=50, step_size=1e6, adapt_rate=0.0)
    with pytest.warns(RuntimeWarning):
        _, diag = sample_gibbs(spec, n_particles=32, beta=1.0, seed=8, mala=mala)
    assert not diag.healthy
    assert diag.acceptance_rate < 0.1


def test_explicit_init_is_used():
    spec = _independent_spec()
    init = np.full((16, 1), 3.0)
    mala = MalaParams(n_burn=0, n_keep=1, step_size=1e-12, adapt_rate=0.0)
    # a vanishing step accepts everything, which is also flagged unhealthy
    with pytest.warns(RuntimeWarning):
        state, _ = sample_gibbs(spec, n_particles=16, beta=1.0, seed=9,
                                init=init, mala=mala)
    # the chain barely moves off the supplied start
    assert np.allclose(state.positions, 3.0, atol=1e-3)
