"""Command line driver: ``hamlb run | sweep | report``."""

import argparse
import json
import sys

from .models import parse_params
from .pipeline import RunRequest, report, run, succeeded, sweep

EXIT_OK = 0
EXIT_NOT_CERTIFIED = 2
EXIT_BAD_REQUEST = 64


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def _request_fields(args):
    """Request fields given on the command line (``None`` means not given)."""
    out = {
        "model": args.model,
        "method": args.method,
        "n": args.n,
        "D": args.D,
        "seed": args.seed,
        "eps": args.eps,
        "max_iters": args.max_iters,
        "trace": args.trace,
        "out": args.out,
        "rotate": args.rotate,
        "cache": args.cache,
    }
    if args.param:
        out["params"] = parse_params(args.param)
    return {k: v for k, v in out.items() if v is not None}


def _add_common(p, many=False):
    p.add_argument("--config", help="JSON file with request fields; flags override it")
    p.add_argument("--model", help="tfi, heis, xxz, xx, heis1 or j1j2")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="model parameter, repeatable")
    p.add_argument("--method", choices=["lti", "mps", "ttn"])
    if many:
        p.add_argument("--n", type=int, nargs="+")
        p.add_argument("--D", type=int, nargs="+")
        p.add_argument("--seed", type=int, nargs="+")
    else:
        p.add_argument("--n", type=int)
        p.add_argument("--D", type=int)
        p.add_argument("--seed", type=int)
    p.add_argument("--eps", type=float, help="solver tolerance (primal, dual and gap)")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--trace", help="CSV file for the solver iteration trace")
    p.add_argument("--rotate", choices=["auto", "on", "off"], help="sublattice rotation of XXZ-type models")
    p.add_argument("--cache", help="ansatz cache directory (default $HAMLB_CACHE or ~/.cache/hamlb)")
    p.add_argument("--out", help="output file")


def build_parser():
    parser = argparse.ArgumentParser(prog="hamlb", description="Certified lower bounds on ground-state energy densities.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="solve and certify one relaxation")
    _add_common(p_run)
    p_sweep = sub.add_parser("sweep", help="grid of runs written as CSV")
    _add_common(p_sweep, many=True)
    p_rep = sub.add_parser("report", help="LTI fit, MPS plateaus and effective n")
    p_rep.add_argument("files", nargs="+", help="result JSON or sweep CSV files")
    p_rep.add_argument("--out", help="plot-ready CSV")
    return parser


def _summary(res):
    cert = "refused" if res.certified is None else f"{res.certified:.10f}"
    parts = [f"certified={cert}", f"raw={res.raw:.10f}", f"reference={res.reference:.10f}", f"status={res.status}", f"time={res.time:.1f}s"]
    if res.variational is not None:
        parts.insert(2, f"upper={res.variational:.10f}")
    return " ".join(parts)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            text, _ = report(args.files, args.out)
            print(text)
            return EXIT_OK
        fields = _load_config(args.config)
        fields.update(_request_fields(args))
        if args.command == "run":
            req = RunRequest.from_dict(fields)
            res = run(req)
            print(_summary(res))
            if not args.out:
                print(json.dumps(res.to_dict(), indent=2, default=str))
            return EXIT_OK if succeeded(res) else EXIT_NOT_CERTIFIED
        out = fields.pop("out", None)
        rows = sweep(fields, out=out)
        for r in rows:
            de = "-" if r["delta_E"] is None else f"{r['delta_E']:.3e}"
            print(f"{r['model']} {r['method']} n={r['n']} D={r['D']} dE={de} status={r['status']}")
        return EXIT_OK if all(r["status"] != "failed" for r in rows) else EXIT_NOT_CERTIFIED
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"hamlb: error: {exc}", file=sys.stderr)
        return EXIT_BAD_REQUEST


if __name__ == "__main__":
    sys.exit(main())
