"""``syncfree`` command-line entry point."""

import argparse
import sys
from pathlib import Path

from . import __version__, harness
from .errors import SyncfreeError


def _spec(args, kind, **fields):
    """JSON spec from ``--spec`` (if any) with explicit flags taking precedence."""
    base = {}
    if getattr(args, "spec", None):
        base = harness.read_json(args.spec)
        base.setdefault("kind", kind)
        if base["kind"] != kind:
            raise harness.SpecError(f"spec kind {base['kind']!r} does not match command {kind!r}")
        root = Path(args.spec).parent
        for name in ("plant", "protocol", "graph", "config", "grid"):
            if isinstance(base.get(name), str):
                base[name] = str(root / base[name])
    base.update({k: v for k, v in fields.items() if v is not None})
    base["kind"] = kind
    if args.seed is not None:
        base["seed"] = args.seed
    return harness.ExperimentSpec.from_dict(base)


def _emit(args, bundle):
    text = harness.write_bundle(bundle, args.out)
    if args.out is None:
        sys.stdout.write(text)


def cmd_analyze(args):
    return harness.run_analyze(_spec(args, "analyze", plant=args.plant, domain=args.domain))


def cmd_synthesize(args):
    domain = {"ct": "continuous", "dt": "discrete"}.get(args.domain)
    return harness.run_synthesize(_spec(args, "synthesize", plant=args.plant, domain=domain,
                                        grid=args.grid))


def cmd_verify(args):
    variant = args.variant.upper() if args.variant else None
    return harness.run_verify(_spec(args, "verify", plant=args.plant, protocol=args.protocol,
                                    variant=variant, grid=args.grid))


def cmd_simulate(args):
    spec = _spec(args, "simulate", config=args.config, T=args.T, h=args.h, tol=args.tol)
    code, bundle, _ = harness.run_simulate(spec, csv_path=args.csv)
    return code, bundle


def cmd_sweep(args):
    spec = _spec(args, "scale_sweep", workers=args.workers)
    csv_path = args.csv
    if csv_path is None and spec.output_dir:
        csv_path = str(Path(spec.output_dir) / "sweep.csv")
        Path(spec.output_dir).mkdir(parents=True, exist_ok=True)
    return harness.run_scale_sweep(spec, csv_path=csv_path if csv_path else sys.stdout)


def cmd_reproduce(args):
    spec = _spec(args, "reproduce")
    return harness.run_reproduce(spec, args.case)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="syncfree",
        description="Scale-free synchronization analysis, synthesis, verification and simulation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="random seed (default: $SYNCFREE_SEED or 0)")
    common.add_argument("-o", "--out", default=None, help="write the JSON bundle here instead of stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="structural report and solvability verdicts")
    p.add_argument("--plant", required=True)
    p.add_argument("--domain", choices=["continuous", "discrete"], default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synthesize", parents=[common], help="protocol with local bounds and certificate")
    p.add_argument("--plant", required=True)
    p.add_argument("--domain", choices=["ct", "dt"], default=None)
    p.add_argument("--grid", default=None, help="grid spec used by the discrete-time design")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("verify", parents=[common], help="grid and positive-real checks")
    p.add_argument("--plant", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--variant", choices=["p4", "p5", "P4", "P5"], default=None)
    p.add_argument("--grid", default=None)
    p.set_defaults(func=cmd_verify)

    # -h is the step size here, so help is --help only
    p = sub.add_parser("simulate", parents=[common], add_help=False,
                       help="simulate a network configuration")
    p.add_argument("--help", action="help", help="show this help message and exit")
    p.add_argument("--config", required=True)
    p.add_argument("-T", type=float, default=None, help="horizon (step count for discrete plants)")
    p.add_argument("-h", dest="h", type=float, default=None, help="RK4 step size")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--csv", default=None, help="write the trace CSV here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="scale sweep over graph sizes and seeds")
    p.add_argument("--spec", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--csv", default=None, help="CSV output path (default: output_dir or stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reproduce", parents=[common], help="run a golden scenario")
    p.add_argument("case", choices=harness.CASES)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code, bundle = args.func(args)
    except (SyncfreeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return harness.EXIT_OPERATIONAL
    if args.command == "sweep" and args.csv is None and not bundle["spec"].get("output_dir"):
        return code  # CSV already on stdout
    _emit(args, bundle)
    return code


if __name__ == "__main__":
    sys.exit(main())
