"""Command-line interface.

Exit codes: 0 on success, 2 on validation errors (including bad flags),
3 on numerical failures.  Every command that writes files also writes a
manifest.json (package version, seed, full argument echo) beside them.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import convex_benchmark, nonconvex_benchmark
from .certificates import certify
from .couplings import couple_parallel, couple_synchronous
from .errors import NumericalError, ValidationError
from .gibbs import sample_gibbs
from .harness import (
    BENCHMARKS,
    EXPERIMENTS,
    ExperimentConfig,
    PDE_GRID_N,
    PDE_HALFWIDTH,
    _pde_reference,
    collect_report,
    default_config,
    run_experiment,
)
from .meanfield import (
    PhaseGrid,
    cfl_limits,
    diagnostics_to_csv,
    gaussian_phase_density,
    stationary_fixed_point,
    vfp_solve,
)
from .metrics import fit_exponential_rate, w2_empirical
from .particles import (
    ParticleState,
    SimParams,
    gaussian_state,
    moment_observers,
    simulate,
)
from .rng import stream_key


def _bench(args):
    return BENCHMARKS[args.benchmark]()


def _emit(payload) -> None:
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _manifest(out_dir: Path, args) -> None:
    echo = {
        k: v for k, v in vars(args).items()
        if k != "fn" and not callable(v)
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(
            {
                "package_version": __version__,
                "seed": getattr(args, "seed", None),
                "args": echo,
            },
            fh, indent=2, sort_keys=True, default=str,
        )
        fh.write("\n")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _series_csv(path, times, series) -> None:
    # shared long layout: t, statistic, value, stderr, n_replicas
    import csv

    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "statistic", "value", "stderr", "n_replicas"])
        for name in sorted(series):
            for t, v in zip(times, series[name]):
                wr.writerow([repr(float(t)), name, repr(float(v)), 0.0, 1])


# -- subcommands --------------------------------------------------------------


def _cmd_certify(args) -> int:
    if args.config:
        config = ExperimentConfig.from_ini(args.config)
        bench = config.bench()
        gamma, sigma = config.gamma, config.sigma
    else:
        bench = _bench(args)
        gamma = args.gamma if args.gamma is not None else bench.gamma
        sigma = args.sigma if args.sigma is not None else bench.sigma
    report = certify(bench.spec, gamma, sigma)
    payload = report.to_jsonable()
    _emit(payload)
    if args.out:
        out = _outdir(args)
        with open(out / "certificate.json", "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _manifest(out, args)
    return 0


def _cmd_simulate(args) -> int:
    bench = _bench(args)
    state = gaussian_state(
        args.n, 1, args.seed, stream_key("cli-simulate-init", args.stream),
        x_mean=args.x_mean, x_std=args.x_std, v_std=args.v_std,
    )
    params = SimParams(
        gamma=bench.gamma, sigma=bench.sigma, dt=args.dt,
        scheme=args.scheme, seed=args.seed, stream=args.stream,
        force_mode=args.force_mode,
    )
    res = simulate(state, bench.spec, params, args.t_end,
                   observers=moment_observers(), stride=args.stride)
    out = _outdir(args)
    _series_csv(out / "moments.csv", res.times, res.series)
    res.final_state.save(out / "final_state.bin")
    _manifest(out, args)
    _emit({
        "t_end": float(res.final_state.time),
        "n": res.final_state.n,
        "moments": {k: float(v[-1]) for k, v in res.series.items()},
        "out": str(out),
    })
    return 0


def _cmd_gibbs(args) -> int:
    bench = _bench(args)
    beta = args.beta if args.beta is not None else bench.beta
    state, diag = sample_gibbs(
        bench.spec, args.n, beta, args.seed, stream=args.stream,
        force_mode=args.force_mode,
    )
    out = _outdir(args)
    state.save(out / "state.bin")
    payload = {
        "acceptance_rate": diag.acceptance_rate,
        "step_size": diag.step_size,
        "n_burn": diag.n_burn,
        "n_keep": diag.n_keep,
        "healthy": diag.healthy,
        "beta": beta,
    }
    with open(out / "diagnostics.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _manifest(out, args)
    _emit(payload)
    return 0


def _cmd_couple_sync(args) -> int:
    bench = _bench(args)
    a = gaussian_state(args.n, 1, args.seed,
                       stream_key("cli-sync-a", args.stream),
                       x_mean=0.0, x_std=1.2, v_std=1.0)
    b = gaussian_state(args.n, 1, args.seed,
                       stream_key("cli-sync-b", args.stream),
                       x_mean=args.displacement, x_std=0.8, v_std=1.0)
    params = SimParams(
        gamma=bench.gamma, sigma=bench.sigma, dt=args.dt,
        seed=args.seed, stream=args.stream, force_mode=args.force_mode,
    )
    curve = couple_synchronous(a, b, bench.spec, params, args.t_end,
                               stride=args.stride)
    out = _outdir(args)
    curve.to_csv(out / "sync_gap.csv")
    fit = fit_exponential_rate(curve)
    with open(out / "fit.json", "w") as fh:
        json.dump(fit.to_jsonable(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _manifest(out, args)
    _emit({"rate": fit.rate, "r_squared": fit.r_squared,
           "flagged": fit.flagged, "out": str(out)})
    return 0


def _cmd_couple_parallel(args) -> int:
    bench = _bench(args)
    config = ExperimentConfig(
        experiment="E2_chaos_scaling", benchmark=args.benchmark,
        gamma=bench.gamma, sigma=bench.sigma, dt=args.dt,
        t_end=args.t_end, n_list=(args.n,), n_replicas=1,
        seed=args.seed, out_dir=args.out,
    )
    _, limit = _pde_reference(config, 0.0, 1.0, 0.0, 1.0, args.t_end)
    state = gaussian_state(args.n, 1, args.seed,
                           stream_key("cli-parallel-init", args.stream),
                           x_mean=0.0, x_std=1.0, v_std=1.0)
    params = SimParams(
        gamma=bench.gamma, sigma=bench.sigma, dt=args.dt,
        seed=args.seed, stream=args.stream, force_mode=args.force_mode,
    )
    curve = couple_parallel(state, limit, bench.spec, params, args.t_end,
                            stride=args.stride)
    out = _outdir(args)
    curve.to_csv(out / "parallel_gap.csv")
    _manifest(out, args)
    _emit({"final_gap_sq": float(curve.values[-1]), "n": args.n,
           "out": str(out)})
    return 0


def _cmd_fixed_point(args) -> int:
    bench = _bench(args)
    beta = args.beta if args.beta is not None else bench.beta
    fp = stationary_fixed_point(bench.spec, beta, args.x_lo, args.x_hi,
                                args.n_x)
    payload = {
        "mean": fp.mean(),
        "variance": fp.variance(),
        "residual": fp.residual,
        "n_iter": fp.n_iter,
        "converged": fp.converged,
        "beta": beta,
    }
    if args.out:
        out = _outdir(args)
        import csv

        with open(out / "rho.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "rho"])
            for x, r in zip(fp.x_centers, fp.rho):
                wr.writerow([repr(float(x)), repr(float(r))])
        _manifest(out, args)
    _emit(payload)
    return 0


def _cmd_pde(args) -> int:
    bench = _bench(args)
    grid = PhaseGrid(-args.halfwidth, args.halfwidth, args.n_x,
                     -args.halfwidth, args.halfwidth, args.n_y)
    f0 = gaussian_phase_density(grid, args.x_mean, args.x_var, 0.0,
                                args.y_var)
    dt = args.dt
    if dt is None:
        dt = 0.9 * cfl_limits(grid, bench.sigma, max_force=16.0)["dt_max"]
    res = vfp_solve(f0, bench.spec, bench.gamma, bench.sigma, dt=dt,
                    t_end=args.t_end, record_every=args.record_every)
    out = _outdir(args)
    diagnostics_to_csv(res, out / "diagnostics.csv")
    res.final_density.save(out / "final_density.bin")
    res.final_density.to_csv(out / "final_density.csv")
    _manifest(out, args)
    _emit({
        "t_end": float(res.final_density.time),
        "dt": dt,
        "mass": res.final_density.mass(),
        "x_mean": res.final_density.mean_x(),
        "x_var": res.final_density.var_x(),
        "clipped_mass_total": res.clipped_mass_total,
        "cfl_binding": res.cfl["binding"],
        "out": str(out),
    })
    return 0


def _load_cloud(path: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"no such file: {path}")
    if p.suffix == ".bin":
        state = ParticleState.load(p)
        return np.hstack([state.positions, state.velocities])
    try:
        data = np.loadtxt(p, delimiter=",", ndmin=2)
    except ValueError:
        data = np.loadtxt(p, delimiter=",", ndmin=2, skiprows=1)
    return data


def _cmd_metrics(args) -> int:
    a = _load_cloud(args.cloud_a)
    b = _load_cloud(args.cloud_b)
    value = w2_empirical(a, b, args.method, epsilon=args.epsilon,
                         n_projections=args.n_projections, seed=args.seed)
    _emit({
        "w2": float(value),
        "w2_sq": float(value) ** 2,
        "method": args.method,
        "n_a": int(a.shape[0]),
        "n_b": int(b.shape[0]),
    })
    return 0


def _cmd_sweep(args) -> int:
    if args.config:
        config = ExperimentConfig.from_ini(args.config)
    elif args.experiment:
        config = default_config(args.experiment)
    else:
        raise ValidationError("sweep needs --config or --experiment")
    if args.out:
        config.out_dir = args.out
    if args.seed is not None:
        config.seed = args.seed
    summary = run_experiment(config, force=args.force)
    _emit(summary)
    return 0


def _cmd_report(args) -> int:
    report = collect_report(args.out)
    _emit(report)
    return 0


# -- parser -------------------------------------------------------------------


def _add_bench(p, default="nonconvex"):
    p.add_argument("--benchmark", choices=sorted(BENCHMARKS), default=default)


def _add_common(p, out_required=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream", type=int, default=0)
    if out_required:
        p.add_argument("--out", required=True, help="output directory")
    else:
        p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--force-mode", choices=["pairwise", "fast"],
                   default="pairwise")


def _positive(name):
    def parse(text):
        v = float(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"{name} must be > 0")
        return v

    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kcl",
        description=(
            "Simulate mean-field kinetic Langevin particle systems, solve "
            "their mean-field limit PDE, and verify convergence claims."
        ),
    )
    parser.add_argument("--version", action="version",
                        version=f"kcl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="print the assumption certificate")
    p.add_argument("--config", default=None, help="experiment config (INI)")
    _add_bench(p, default="convex")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--out", default=None, help="also write certificate.json")
    p.set_defaults(fn=_cmd_certify)

    p = sub.add_parser("simulate", help="run one particle system")
    _add_bench(p)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--dt", type=_positive("dt"), default=0.01)
    p.add_argument("--t-end", type=_positive("t_end"), default=5.0)
    p.add_argument("--scheme", choices=["baoab", "euler_maruyama"],
                   default="baoab")
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--x-mean", type=float, default=0.0)
    p.add_argument("--x-std", type=float, default=1.0)
    p.add_argument("--v-std", type=float, default=1.0)
    _add_common(p)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("gibbs", help="sample the N-particle Gibbs measure")
    _add_bench(p)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--beta", type=float, default=None,
                   help="inverse temperature (default: benchmark value)")
    _add_common(p)
    p.set_defaults(fn=_cmd_gibbs)

    p = sub.add_parser("couple-sync",
                       help="synchronous coupling of two copies")
    _add_bench(p)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--dt", type=_positive("dt"), default=0.01)
    p.add_argument("--t-end", type=_positive("t_end"), default=8.0)
    p.add_argument("--displacement", type=float, default=2.0,
                   help="initial mean offset of the second copy")
    p.add_argument("--stride", type=int, default=4)
    _add_common(p)
    p.set_defaults(fn=_cmd_couple_sync)

    p = sub.add_parser("couple-parallel",
                       help="particle system vs the limit dynamics")
    _add_bench(p)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--dt", type=_positive("dt"), default=0.005)
    p.add_argument("--t-end", type=_positive("t_end"), default=1.0)
    p.add_argument("--stride", type=int, default=4)
    _add_common(p)
    p.set_defaults(fn=_cmd_couple_parallel)

    p = sub.add_parser("fixed-point",
                       help="stationary mean-field fixed point")
    _add_bench(p)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--x-lo", type=float, default=-8.0)
    p.add_argument("--x-hi", type=float, default=8.0)
    p.add_argument("--n-x", type=int, default=513)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_fixed_point)

    p = sub.add_parser("pde", help="solve the mean-field limit PDE")
    _add_bench(p)
    p.add_argument("--n-x", type=int, default=PDE_GRID_N)
    p.add_argument("--n-y", type=int, default=PDE_GRID_N)
    p.add_argument("--halfwidth", type=float, default=PDE_HALFWIDTH)
    p.add_argument("--dt", type=_positive("dt"), default=None,
                   help="default: 0.9x the binding CFL limit")
    p.add_argument("--t-end", type=_positive("t_end"), default=1.0)
    p.add_argument("--record-every", type=int, default=10)
    p.add_argument("--x-mean", type=float, default=0.0)
    p.add_argument("--x-var", type=float, default=1.0)
    p.add_argument("--y-var", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_pde)

    p = sub.add_parser("metrics",
                       help="transport distance between two point clouds")
    p.add_argument("cloud_a", help=".bin particle snapshot or numeric CSV")
    p.add_argument("cloud_b", help=".bin particle snapshot or numeric CSV")
    p.add_argument("--method", choices=["exact", "sinkhorn", "sliced"],
                   default="exact")
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--n-projections", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_metrics)

    p = sub.add_parser("sweep", help="run one experiment end to end")
    p.add_argument("--config", default=None, help="experiment config (INI)")
    p.add_argument("--experiment", choices=EXPERIMENTS, default=None,
                   help="use built-in defaults instead of a config file")
    p.add_argument("--out", default=None, help="override the output root")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true",
                   help="run even when the certificate fails")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("report", help="aggregate experiment summaries")
    p.add_argument("--out", default="out", help="root output directory")
    p.set_defaults(fn=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
