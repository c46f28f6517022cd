import numpy as np
import pytest

from kcl import (
    BumpConfinement,
    GaussianKernelInteraction,
    QuadraticConfinement,
    QuadraticMeanReversion,
    ValidationError,
    ZeroInteraction,
    eval_potential,
)
from kcl.benchmarks import convex_benchmark, nonconvex_benchmark


def test_bump_confinement_at_origin():
    v = BumpConfinement(c=1.0, a=1.0, w=1.0)
    x = np.array([[0.0]])
    assert v.value(x)[0] == pytest.approx(1.0, abs=1e-15)
    assert v.grad(x)[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_mean_reversion_pair_values():
    w = QuadraticMeanReversion(lam=0.25)
    x = np.array([[1.0]])
    xp = np.array([[-1.0]])
    assert w.value(x, xp)[0] == pytest.approx(0.5, abs=1e-15)
    assert w.grad_x(x, xp)[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_eval_potential_bundles_pair_terms():
    bench = convex_benchmark()
    out = eval_potential(bench.spec, np.array([[1.0]]), np.array([[-1.0]]))
    # U(1,-1) = V(1) + V(-1) + W(1,-1) = 0.5 + 0.5 + 0.5
    assert out["U"][0] == pytest.approx(1.5, abs=1e-14)
    assert out["grad_U_x"][0, 0] == pytest.approx(1.0 + 0.5, abs=1e-14)


def test_eval_potential_rejects_wrong_dimension():
    bench = convex_benchmark()
    with pytest.raises(ValidationError):
        eval_potential(bench.spec, np.zeros((3, 2)))


@pytest.mark.parametrize(
    "model",
    [
        QuadraticConfinement(c=0.7),
        BumpConfinement(c=1.0, a=1.0, w=1.3),
    ],
)
def test_confinement_gradients_match_finite_differences(model):
    rng = np.random.default_rng(11)
    xs = rng.uniform(-4, 4, size=(40, 1))
    h = 1e-6
    fd = (model.value(xs + h) - model.value(xs - h)) / (2 * h)
    g = model.grad(xs)[:, 0]
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize(
    "model",
    [
        QuadraticMeanReversion(lam=0.25),
        GaussianKernelInteraction(a=0.05, w=1.0),
        ZeroInteraction(),
    ],
)
def test_interaction_gradients_match_finite_differences(model):
    rng = np.random.default_rng(12)
    xs = rng.uniform(-4, 4, size=(40, 1))
    zs = rng.uniform(-4, 4, size=(40, 1))
    h = 1e-6
    fd = (model.value(xs + h, zs) - model.value(xs - h, zs)) / (2 * h)
    g = model.grad_x(xs, zs)[:, 0]
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize(
    "model",
    [QuadraticMeanReversion(lam=0.4), GaussianKernelInteraction(a=-0.3, w=0.8)],
)
def test_interaction_symmetry(model):
    rng = np.random.default_rng(13)
    xs = rng.uniform(-3, 3, size=(25, 1))
    zs = rng.uniform(-3, 3, size=(25, 1))
    assert np.allclose(model.value(xs, zs), model.value(zs, xs), atol=1e-15)


def test_hessian_sup_dominates_fd_curvature():
    # second differences along random directions must stay below the
    # declared sup-norm bounds
    rng = np.random.default_rng(14)
    for bench in (convex_benchmark(), nonconvex_benchmark()):
        v = bench.spec.confinement
        xs = rng.uniform(-5, 5, size=(200, 1))
        h = 1e-4
        curv = (v.value(xs + h) - 2 * v.value(xs) + v.value(xs - h)) / h**2
        assert np.max(np.abs(curv)) <= v.hess_sup() + 1e-5

        w = bench.spec.interaction
        zs = rng.uniform(-5, 5, size=(200, 1))
        # cross second derivative via mixed differences
        cross = (
            w.value(xs + h, zs + h)
            - w.value(xs + h, zs - h)
            - w.value(xs - h, zs + h)
            + w.value(xs - h, zs - h)
        ) / (4 * h * h)
        assert np.max(np.abs(cross)) <= w.mixed_hess_sup() + 1e-5


def test_interaction_lower_bounds_hold_on_scan():
    rng = np.random.default_rng(15)
    xs = rng.uniform(-6, 6, size=(500, 1))
    zs = rng.uniform(-6, 6, size=(500, 1))
    for bench in (convex_benchmark(), nonconvex_benchmark()):
        w = bench.spec.interaction
        assert np.all(w.value(xs, zs) >= w.lower_bound() - 1e-12)


def test_pair_potential_combines_confinement_and_interaction():
    bench = nonconvex_benchmark()
    spec = bench.spec
    x = np.array([[0.3]])
    xp = np.array([[-0.7]])
    expect = (
        spec.confinement.value(x)
        + spec.confinement.value(xp)
        + spec.interaction.value(x, xp)
    )
    assert spec.pair_value(x, xp)[0] == pytest.approx(expect[0], rel=1e-15)
