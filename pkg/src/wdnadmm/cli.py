"""Command line entry point: ``wdnadmm {simulate,solve,sweep,validate}``."""

import argparse
import json
import sys

from . import runner
from .admm import WORKERS_ENV
from .errors import WdnError


def _common(p):
    p.add_argument("--network", default="builtin:toy-control",
                   help="network JSON file or builtin:<name> (default: %(default)s)")
    p.add_argument("--scenario", default="builtin:toy",
                   help="scenario JSON file, builtin:toy or builtin:random (default: %(default)s)")
    p.add_argument("--scc-window", default=None,
                   help="override the self-cleaning window: 09:30-10:30 or 3,4")
    p.add_argument("--n-t", type=int, default=4, help="horizon of built-in scenarios")
    p.add_argument("--seed", type=int, default=0, help="seed for builtin:random")
    p.add_argument("-o", "--output-dir", default="out")


def _solver(p):
    p.add_argument("--algorithm", choices=["standard", "two-level", "centralized-reference"],
                   default="two-level")
    p.add_argument("--delta", default="inf", help="pressure range tolerance in m, or inf")
    p.add_argument("--beta1", type=float, default=0.1)
    p.add_argument("--rho", type=float, default=None, help="standard ADMM penalty (default 2*beta1)")
    p.add_argument("--gamma", type=float, default=1.25)
    p.add_argument("--omega", type=float, default=0.75)
    p.add_argument("--eps-primal", type=float, default=1e-2)
    p.add_argument("--eps-dual", type=float, default=None)
    p.add_argument("--k-max", type=int, default=500, help="standard ADMM iteration limit")
    p.add_argument("--inner-k-max", type=int, default=200)
    p.add_argument("--m-max", type=int, default=200)
    p.add_argument("--workers", type=int, default=None,
                   help=f"stage-solve threads (default: ${WORKERS_ENV} or CPU count)")
    p.add_argument("--no-precheck", action="store_true",
                   help="skip the baseline pressure range check")
    p.add_argument("--dump-iterates", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="wdnadmm",
                                     description="Pressure and self-cleaning control of water networks "
                                                 "with time-coupled pressure range limits.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="uncontrolled hydraulics for every time step")
    _common(p)
    p = sub.add_parser("solve", help="run a distributed or centralized solver")
    _common(p)
    _solver(p)
    p = sub.add_parser("sweep", help="repeat a solve over several beta1 values")
    _common(p)
    _solver(p)
    p.add_argument("--beta1-list", default="1e-3,1e-2,1e-1,1,10,100")
    p = sub.add_parser("validate", help="check inputs and the pressure range tolerance")
    _common(p)
    p.add_argument("--delta", default="inf")
    return parser


def config_from_args(args):
    kw = dict(network=args.network, scenario=args.scenario, scc_window=args.scc_window,
              n_t=args.n_t, seed=args.seed, output_dir=args.output_dir,
              delta=getattr(args, "delta", "inf"))
    if args.command == "simulate":
        kw["algorithm"] = "simulate"
    elif args.command in ("solve", "sweep"):
        kw.update(algorithm=args.algorithm, beta1=args.beta1, rho=args.rho, gamma=args.gamma,
                  omega=args.omega, eps_primal=args.eps_primal, eps_dual=args.eps_dual,
                  k_max=args.k_max, inner_k_max=args.inner_k_max, m_max=args.m_max,
                  workers=args.workers, precheck=not args.no_precheck,
                  dump_iterates=args.dump_iterates)
    return runner.RunConfig(**kw)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        if args.command == "validate":
            print(json.dumps(runner.validate(config), indent=2))
            return runner.EXIT_OK
        if args.command == "sweep":
            betas = [float(b) for b in args.beta1_list.split(",")]
            rows = runner.sweep(config, betas)
            for row in rows:
                print(json.dumps(row))
            return runner.EXIT_OK if all(r["status"] == "converged" for r in rows) else runner.EXIT_NONCONVERGED
    except WdnError as exc:
        print(json.dumps(exc.as_record()), file=sys.stderr)
        return runner.EXIT_ERROR
    except ValueError as exc:
        print(json.dumps({"error": "parameter", "message": str(exc)}), file=sys.stderr)
        return runner.EXIT_ERROR
    outcome = runner.execute(config)
    if outcome.error is not None:
        print(json.dumps(outcome.error), file=sys.stderr)
    else:
        print(json.dumps(outcome.summary, default=str))
    return outcome.status


if __name__ == "__main__":
    sys.exit(main())
