import numpy as np
import pytest
from scipy.integrate import solve_ivp

from kcl.benchmarks import convex_benchmark, nonconvex_benchmark
from kcl.errors import ConvergenceError, NumericalError, ValidationError
from kcl.meanfield import (
    GridDensity,
    PhaseGrid,
    cfl_limits,
    diagnostics_to_csv,
    free_energy,
    gaussian_phase_density,
    maxwellian_reference,
    mean_field_entropy,
    product_density,
    stationary_fixed_point,
    vfp_solve,
)
from kcl.potentials import (
    DissipativityConstants,
    PotentialSpec,
    QuadraticConfinement,
    ZeroInteraction,
)


def _oscillator_spec():
    return PotentialSpec(
        confinement=QuadraticConfinement(c=1.0),
        interaction=ZeroInteraction(),
        dim=1,
        constants=DissipativityConstants(1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
        name="oscillator",
    )


GAMMA, SIGMA = 1.0, np.sqrt(2.0)


def _free_moment_ode(y0, t_end):
    """Moments of the one-particle dynamics in a quadratic well."""

    def rhs(t, y):
        mx, my, m20, m11, m02 = y
        return [
            my,
            -mx - GAMMA * my,
            2 * m11,
            m02 - m20 - GAMMA * m11,
            -2 * m11 - 2 * GAMMA * m02 + SIGMA**2,
        ]

    return solve_ivp(rhs, (0.0, t_end), y0, rtol=1e-11, atol=1e-13).y[:, -1]


def test_phase_grid_geometry_and_validation():
    g = PhaseGrid(-8.0, 8.0, 64, -4.0, 4.0, 32)
    assert g.hx == pytest.approx(0.25)
    assert g.hy == pytest.approx(0.25)
    assert g.x_centers[0] == pytest.approx(-8.0 + 0.125)
    assert g.y_faces[0] == -4.0 and g.y_faces[-1] == 4.0
    assert len(g.y_faces) == 33
    with pytest.raises(ValidationError):
        PhaseGrid(0.0, 0.0, 64, -4.0, 4.0, 32)
    with pytest.raises(ValidationError):
        PhaseGrid(-8.0, 8.0, 4, -4.0, 4.0, 32)


def test_gaussian_density_moments():
    grid = PhaseGrid(-8, 8, 129, -8, 8, 129)
    d = gaussian_phase_density(grid, x_mean=1.0, x_var=0.5, y_mean=-0.3, y_var=0.7)
    assert d.mass() == pytest.approx(1.0, abs=1e-13)
    assert d.mean_x() == pytest.approx(1.0, abs=1e-6)
    assert d.var_x() == pytest.approx(0.5, abs=1e-3)
    assert d.mean_y() == pytest.approx(-0.3, abs=1e-6)
    assert d.var_y() == pytest.approx(0.7, abs=1e-3)
    # marginals integrate to one
    assert d.x_marginal().sum() * grid.hx == pytest.approx(1.0, abs=1e-12)
    assert d.y_marginal().sum() * grid.hy == pytest.approx(1.0, abs=1e-12)
    # centered density has essentially no boundary mass
    assert d.boundary_mass(2) < 1e-12


def test_density_serialization_round_trip(tmp_path):
    grid = PhaseGrid(-6, 6, 32, -5, 5, 16)
    d = gaussian_phase_density(grid, 0.2, 1.1, -0.1, 0.9)
    d.time = 2.5
    path = tmp_path / "density.bin"
    d.save(path)
    back = GridDensity.load(path)
    assert back.grid == d.grid
    assert back.time == 2.5
    assert back.values.tobytes() == d.values.tobytes()

    with pytest.raises(ValidationError):
        GridDensity.from_bytes(b"\x00\x01\x02")
    with pytest.raises(ValidationError):
        GridDensity.from_bytes(b'{"magic": "other"}\n' + b"\x00" * 64)
    with pytest.raises(ValidationError):
        GridDensity.from_bytes(d.to_bytes()[:-16])


def test_density_csv_export(tmp_path):
    grid = PhaseGrid(-4, 4, 8, -4, 4, 8)
    d = gaussian_phase_density(grid)
    path = tmp_path / "density.csv"
    d.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "x,y,density"
    assert len(lines) == 1 + 8 * 8


def test_product_density_velocity_marginal():
    grid = PhaseGrid(-8, 8, 65, -8, 8, 129)
    rho = np.exp(-grid.x_centers**2)
    rho /= rho.sum() * grid.hx
    beta = 2.0
    d = product_density(grid, rho, beta)
    assert d.mass() == pytest.approx(1.0, abs=1e-13)
    assert d.var_y() == pytest.approx(1.0 / beta, abs=1e-3)
    with pytest.raises(ValidationError):
        product_density(grid, rho[:-1], beta)


def test_maxwellian_reference_normalized():
    grid = PhaseGrid(-8, 8, 65, -8, 8, 65)
    spec = _oscillator_spec()
    ref = maxwellian_reference(grid, spec, beta=1.0)
    assert ref.sum() * grid.hx * grid.hy == pytest.approx(1.0, abs=1e-12)
    assert np.all(ref > 0)


def test_free_energy_vanishes_at_independent_stationary_state():
    # V = x^2/2, W = 0, beta = 1: the stationary law is exactly the
    # reference, so the discrete free energy is zero by construction
    grid = PhaseGrid(-8, 8, 129, -8, 8, 129)
    spec = _oscillator_spec()
    d = gaussian_phase_density(grid, 0.0, 1.0, 0.0, 1.0)
    assert abs(free_energy(d, spec, beta=1.0)) < 1e-12
    # any other density sits strictly higher
    d2 = gaussian_phase_density(grid, 0.5, 0.8, 0.0, 1.2)
    assert free_energy(d2, spec, beta=1.0) > 0.01


def test_mean_field_entropy_gap_nonnegative():
    bench = convex_benchmark()
    grid = PhaseGrid(-8, 8, 129, -8, 8, 129)
    fp = stationary_fixed_point(bench.spec, bench.beta, -8, 8, 129)
    ref = product_density(grid, fp.rho, bench.beta)
    moved = gaussian_phase_density(grid, 1.0, 0.6, 0.0, 1.0)
    gap = mean_field_entropy(moved, bench.spec, bench.beta, ref)
    assert gap > 0.0
    assert mean_field_entropy(ref, bench.spec, bench.beta, ref) == 0.0
    other = PhaseGrid(-8, 8, 65, -8, 8, 65)
    with pytest.raises(ValidationError):
        mean_field_entropy(
            gaussian_phase_density(other), bench.spec, bench.beta, ref
        )


def test_fixed_point_mean_reversion_variance():
    # quadratic confinement with mean reversion lam: the stationary law is
    # the centered Gaussian with variance 1/(beta (1 + lam)) = 0.8
    bench = convex_benchmark()
    fp = stationary_fixed_point(bench.spec, bench.beta)
    assert fp.converged
    assert fp.variance() == pytest.approx(0.8, abs=1e-6)
    assert fp.mean() == pytest.approx(0.0, abs=1e-12)
    assert fp.rho.min() >= 0.0


def test_fixed_point_trivial_interaction_converges_immediately():
    fp = stationary_fixed_point(_oscillator_spec(), beta=1.0, damping=1.0)
    assert fp.converged
    assert fp.n_iter <= 2
    assert fp.variance() == pytest.approx(1.0, abs=1e-6)


def test_fixed_point_error_paths():
    bench = convex_benchmark()
    with pytest.raises(ValidationError):
        stationary_fixed_point(bench.spec, beta=-1.0)
    with pytest.raises(ValidationError):
        stationary_fixed_point(bench.spec, bench.beta, damping=0.0)
    with pytest.raises(ConvergenceError):
        stationary_fixed_point(bench.spec, bench.beta, max_iter=2)


def test_vfp_tracks_free_moment_ode():
    grid = PhaseGrid(-8, 8, 129, -8, 8, 129)
    spec = _oscillator_spec()
    f0 = gaussian_phase_density(grid, x_mean=1.0, x_var=0.5, y_mean=0.0, y_var=0.4)
    y0 = [f0.mean_x(), f0.mean_y(), f0.var_x() + f0.mean_x() ** 2, 0.0, f0.var_y()]
    ref = _free_moment_ode(y0, 1.0)
    res = vfp_solve(f0, spec, GAMMA, SIGMA, dt=0.005, t_end=1.0, record_every=10**9)
    d = res.final_density
    assert d.mean_x() == pytest.approx(ref[0], abs=0.02)
    assert d.var_x() + d.mean_x() ** 2 == pytest.approx(ref[2], abs=0.02)
    assert d.var_y() + d.mean_y() ** 2 == pytest.approx(ref[4], abs=0.02)


def test_vfp_tracks_interacting_moment_ode():
    # mean reversion keeps the moment system closed: the mean-field force
    # only enters through the empirical mean and covariance
    bench = convex_benchmark()
    lam = bench.spec.interaction.lam

    def rhs(t, y):
        mx, my, m20, m11, m02 = y
        return [
            my,
            -mx - GAMMA * my,
            2 * m11,
            m02 - m20 - lam * (m20 - mx * mx) - GAMMA * m11,
            -2 * m11 - 2 * lam * (m11 - mx * my) - 2 * GAMMA * m02 + SIGMA**2,
        ]

    grid = PhaseGrid(-8, 8, 129, -8, 8, 129)
    f0 = gaussian_phase_density(grid, x_mean=1.0, x_var=0.5, y_mean=0.3, y_var=0.7)
    y0 = [
        f0.mean_x(),
        f0.mean_y(),
        f0.var_x() + f0.mean_x() ** 2,
        f0.mean_x() * f0.mean_y(),
        f0.var_y() + f0.mean_y() ** 2,
    ]
    ref = solve_ivp(rhs, (0, 1.0), y0, rtol=1e-11, atol=1e-13).y[:, -1]
    res = vfp_solve(f0, bench.spec, GAMMA, SIGMA, dt=0.005, t_end=1.0,
                    record_every=10**9)
    d = res.final_density
    assert d.mean_x() == pytest.approx(ref[0], abs=0.02)
    assert d.mean_y() == pytest.approx(ref[1], abs=0.02)
    assert d.var_x() + d.mean_x() ** 2 == pytest.approx(ref[2], abs=0.02)
    assert d.var_y() + d.mean_y() ** 2 == pytest.approx(ref[4], abs=0.02)


def test_vfp_conserves_mass_and_positivity():
    grid = PhaseGrid(-8, 8, 65, -8, 8, 65)
    spec = _oscillator_spec()
    f0 = gaussian_phase_density(grid, 1.0, 0.5, 0.0, 0.4)
    res = vfp_solve(f0, spec, GAMMA, SIGMA, dt=0.01, t_end=2.0, record_every=20)
    assert np.all(np.abs(res.diagnostics["mass"] - 1.0) < 1e-12)
    assert res.final_density.values.min() >= 0.0
    # the default limited transport never needs to clip
    assert res.clipped_mass_total == 0.0
    assert np.all(res.diagnostics["boundary_mass"] < 1e-10)


def test_vfp_preserves_discretized_stationary_state():
    grid = PhaseGrid(-8, 8, 129, -8, 8, 129)
    spec = _oscillator_spec()
    f0 = gaussian_phase_density(grid, 0.0, 1.0, 0.0, 1.0)
    res = vfp_solve(f0, spec, GAMMA, SIGMA, dt=0.005, t_end=2.0,
                    record_every=10**9)
    d = res.final_density
    assert abs(d.var_x() - f0.var_x()) < 0.02
    assert abs(d.var_y() - f0.var_y()) < 0.02
    assert np.max(np.abs(d.values - f0.values)) < 5e-3


def test_vfp_free_energy_decreases():
    for bench in (convex_benchmark(), nonconvex_benchmark()):
        grid = PhaseGrid(-8, 8, 129, -8, 8, 129)
        f0 = gaussian_phase_density(grid, 1.2, 0.6, -0.4, 1.1)
        res = vfp_solve(f0, bench.spec, bench.gamma, bench.sigma,
                        dt=0.005, t_end=2.0, record_every=20)
        fe = res.diagnostics["free_energy"]
        assert np.all(np.diff(fe) <= 1e-12), bench.name


def test_vfp_entropy_gap_decays_toward_fixed_point():
    bench = convex_benchmark()
    grid = PhaseGrid(-8, 8, 129, -8, 8, 129)
    fp = stationary_fixed_point(bench.spec, bench.beta, -8, 8, 129)
    ref = product_density(grid, fp.rho, bench.beta)
    f0 = gaussian_phase_density(grid, 1.5, 0.6, -0.5, 1.2)
    res = vfp_solve(f0, bench.spec, bench.gamma, bench.sigma,
                    dt=0.005, t_end=4.0, record_every=40,
                    entropy_reference=ref)
    gap = res.diagnostics["entropy_gap"]
    assert gap[0] > 0.5
    assert gap[-1] < 0.1 * gap[0]
    assert np.all(np.diff(gap) <= 1e-12)


def test_vfp_spatial_convergence_second_order():
    # refine the grid with the step tied to the diffusion CFL limit (so dt
    # shrinks with h^2): the moment error against the ODE reference must
    # drop superlinearly between successive refinements
    spec = _oscillator_spec()
    errs = []
    for n in (65, 129, 257):
        grid = PhaseGrid(-8, 8, n, -8, 8, n)
        f0 = gaussian_phase_density(grid, 1.0, 0.5, 0.0, 0.4)
        y0 = [f0.mean_x(), f0.mean_y(), f0.var_x() + f0.mean_x() ** 2, 0.0,
              f0.var_y()]
        ref = _free_moment_ode(y0, 1.0)
        dt = 0.9 * min(grid.hx / 8.0, grid.hy**2 / SIGMA**2)
        res = vfp_solve(f0, spec, GAMMA, SIGMA, dt=dt, t_end=1.0,
                        record_every=10**9, transport="fromm",
                        clip_budget=1e-3)
        d = res.final_density
        errs.append(abs(d.var_x() + d.mean_x() ** 2 - ref[2]))
    assert errs[0] / errs[1] > 2.0
    assert errs[1] / errs[2] > 3.0
    assert errs[0] / errs[2] > 8.0


def test_cfl_gate_names_binding_limit():
    grid = PhaseGrid(-8, 8, 129, -8, 8, 129)
    spec = _oscillator_spec()
    f0 = gaussian_phase_density(grid)
    gate = cfl_limits(grid, SIGMA, max_force=8.0)
    assert gate["binding"] == "diffusion_y"
    with pytest.raises(ValidationError) as err:
        vfp_solve(f0, spec, GAMMA, SIGMA, dt=0.05, t_end=1.0)
    assert "diffusion_y" in str(err.value)


def test_vfp_validation_errors():
    grid = PhaseGrid(-8, 8, 65, -8, 8, 65)
    spec = _oscillator_spec()
    f0 = gaussian_phase_density(grid)
    with pytest.raises(ValidationError):
        vfp_solve(f0, spec, GAMMA, 0.0, dt=0.01, t_end=1.0)
    with pytest.raises(ValidationError):
        vfp_solve(f0, spec, GAMMA, SIGMA, dt=-0.01, t_end=1.0)
    with pytest.raises(ValidationError):
        vfp_solve(f0, spec, GAMMA, SIGMA, dt=0.01, t_end=1.0, transport="upwind9")
    with pytest.raises(ValidationError):
        vfp_solve(f0, spec, GAMMA, SIGMA, dt=0.01, t_end=1.0, record_every=0)


def test_clip_budget_enforced_for_unlimited_slopes():
    grid = PhaseGrid(-8, 8, 65, -8, 8, 65)
    spec = _oscillator_spec()
    f0 = gaussian_phase_density(grid, 1.0, 0.5, 0.0, 0.4)
    with pytest.raises(NumericalError) as err:
        vfp_solve(f0, spec, GAMMA, SIGMA, dt=0.01, t_end=1.0,
                  transport="fromm", clip_budget=1e-30)
    assert "budget" in str(err.value)


def test_force_tables_recorded_for_coupling():
    from kcl.couplings import TabulatedLimitForce

    bench = convex_benchmark()
    grid = PhaseGrid(-8, 8, 65, -8, 8, 65)
    f0 = gaussian_phase_density(grid, 1.0, 0.8, 0.0, 1.0)
    res = vfp_solve(f0, bench.spec, bench.gamma, bench.sigma, dt=0.01,
                    t_end=0.5, record_every=10**9, force_table_every=10)
    assert res.force_tables.shape[1] == 65
    assert len(res.force_times) == len(res.force_tables)
    assert res.force_times[0] == 0.0
    assert res.force_times[-1] == pytest.approx(0.5)
    # initial table: V'(x) + lam (x - mean)
    lam = bench.spec.interaction.lam
    expect = grid.x_centers + lam * (grid.x_centers - f0.mean_x())
    assert np.allclose(res.force_tables[0], expect, atol=1e-10)
    tab = TabulatedLimitForce(res.force_times, res.x_centers, res.force_tables)
    q = np.array([[0.3]])
    assert np.isfinite(tab.force(0.25, q)).all()


def test_diagnostics_csv(tmp_path):
    grid = PhaseGrid(-8, 8, 65, -8, 8, 65)
    spec = _oscillator_spec()
    f0 = gaussian_phase_density(grid)
    res = vfp_solve(f0, spec, GAMMA, SIGMA, dt=0.01, t_end=0.1, record_every=2)
    path = tmp_path / "diag.csv"
    diagnostics_to_csv(res, path)
    text = path.read_text()
    assert text.startswith("t,statistic,value,stderr,n_replicas")
    assert ",mass," in text
    assert ",free_energy," in text
