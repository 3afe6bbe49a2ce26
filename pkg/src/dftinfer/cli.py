"""Command-line entry point (``dftinfer``)."""
import argparse
import logging
import os
import sys

from . import dft, harness
from .harness import ExperimentConfig, SeedPipeline, preset, seed_dir, write_manifest

log = logging.getLogger("dftinfer")


def _global_flags(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", metavar="PATH", default=d, help="key=value config file")
    p.add_argument("--preset", metavar="NAME", default=d,
                   help=f"built-in scenario ({', '.join(sorted(harness.PRESETS))})")
    p.add_argument("--seed", type=int, metavar="S", default=d, help="restrict to one seed")
    p.add_argument("--out", metavar="DIR", default=d, help="output directory")
    p.add_argument("--jobs", type=int, metavar="J", default=d, help="parallel seeds for report")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dftinfer",
        description="Fixed-matrix TAP inference for probit regression and its dynamical theory.",
    )
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "draw the design and teacher instance",
        "replica": "solve the static fixed point",
        "run": "simulate the fixed-matrix algorithm",
        "run-vamp": "run VAMP and the long fixed-point comparison",
        "theory": "run the covariance recursion",
        "mc-oracle": "sample the single-node process and compare to the recursion",
        "compare": "per-seed rse matrix, rate fit and diagnostics",
        "report": "all seeds, aggregated report, nonzero exit on threshold violation",
        "show-config": "print the resolved configuration",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        _global_flags(p, suppress=True)
        if name == "mc-oracle":
            p.add_argument("--samples", type=float, default=None)
            p.add_argument("--horizon", type=int, default=None)
        if name == "report":
            p.add_argument("--fresh", action="store_true", help="ignore cached stage outputs")
    return parser


def resolve_config(args):
    if args.config and args.preset:
        raise SystemExit("use either --config or --preset, not both")
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        cfg = preset("fig1-desk")
    if args.seed is not None:
        cfg = cfg.with_overrides(seeds=(args.seed,))
    return cfg


def _out_dir(args, cfg):
    return args.out or os.path.join(cfg.out_dir, cfg.name)


def _print_kv(items):
    for k, v in items:
        print(f"{k}={v}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose or 0, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = _out_dir(args, cfg)
    if args.command == "show-config":
        sys.stdout.write(cfg.to_text())
        return 0
    os.makedirs(out, exist_ok=True)
    try:
        if args.command == "report":
            report = harness.run_experiment(cfg, out_dir=out, jobs=args.jobs or 1,
                                            reuse=not args.fresh)
            sys.stdout.write(report.summary())
            return 0 if report.passed else 1
        return _seed_command(args, cfg, out)
    except harness.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    finally:
        if os.path.isdir(out):
            write_manifest(out)


def _seed_command(args, cfg, out):
    seed = cfg.seeds[0]
    p = SeedPipeline(cfg, seed, seed_dir(out, seed))
    cmd = args.command
    if cmd == "generate":
        p.teacher
        p.spectral
        print(os.path.join(p.workdir, "instance.npz"))
    elif cmd == "replica":
        sys.stdout.write(p.replica.to_text())
        print(f"n_fixed_points={p.n_fixed_points}")
    elif cmd == "run":
        tr = p.trajectory
        print(f"steps={tr.T}")
        print(f"converged_at={tr.converged_at}")
        print(f"final_step_delta={tr.step_deltas()[-1]:.17g}")
    elif cmd == "run-vamp":
        _print_kv((k, repr(v)) for k, v in p.fixed_point.items())
    elif cmd == "theory":
        th = p.theory
        print(f"mu_rho={th.mu_rho:.17g}")
        print(f"at_margin={th.at_margin:.17g}")
        print(f"kappa_T={th.kappa_t[-1]:.17g}")
    elif cmd == "mc-oracle":
        samples = None if args.samples is None else int(args.samples)
        mc = p.mc_oracle(samples=samples, horizon=args.horizon)
        z = abs(dft.mc_zscores(p.theory, mc)[0])
        print(f"samples={mc.samples}")
        print(f"max_abs_z={float(z.max())!r}")
        return 0 if z.max() <= 3.0 else 1
    elif cmd == "compare":
        _print_kv(p.compare().scalars())
    return 0


if __name__ == "__main__":
    sys.exit(main())
