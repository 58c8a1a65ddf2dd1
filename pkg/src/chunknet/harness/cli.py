"""Command line: ``run``, ``sweep``, ``ccdf``, ``trace``.

Exit codes: 0 success, 2 invalid spec, 3 nonquiescence (messages unfinished at
the cutoff).
"""
from __future__ import annotations

import argparse
import configparser
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .config import SpecError, apply_override, clone, load_spec, validate
from .metrics import emit_results, fct_ccdf, read_flows, tail_stats
from .runner import Nonquiescence, run_experiment

EXIT_OK, EXIT_SPEC, EXIT_NONQUIESCENT = 0, 2, 3


def _line(report, out_dir, label=None):
    s = report.summary()
    tag = f"{label}  " if label else ""
    return (f"{tag}{report.spec_hash}  slowest={report.slowest_ns / 1e6:.4f}ms  ideal={report.ideal_ns / 1e6:.4f}ms  "
            f"slowdown={report.slowdown:.3f}  retx={s['retx_bytes']}  -> {out_dir}")


def _run_one(spec, out):
    try:
        report = run_experiment(spec)
    except Nonquiescence as e:
        d = emit_results(e.report, out)
        return EXIT_NONQUIESCENT, f"nonquiescent: {e}  (partial results in {d})", e.report
    return EXIT_OK, emit_results(report, out), report


def cmd_run(args) -> int:
    spec = load_spec(args.spec, args.set)
    if args.trace:
        spec.run.trace = True
    code, info, report = _run_one(spec, args.out)
    if code:
        print(info, file=sys.stderr)
        print(json.dumps(report.counters, sort_keys=True), file=sys.stderr)
        return code
    print(_line(report, info))
    return EXIT_OK


def cmd_trace(args) -> int:
    args.trace = True
    return cmd_run(args)


def _rows_from_file(path):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as f:
            cp.read_string(f.read())
    except (OSError, configparser.Error) as e:
        raise SpecError(f"cannot read rows file {path}: {e}") from None
    return [(sec, [f"{k}={v}" for k, v in cp.items(sec, raw=True)]) for sec in cp.sections()]


def sweep_specs(base, rows=(), vary=()):
    """Expand named override rows times the cross product of ``key=v1,v2`` lists."""
    axes = []
    for item in vary:
        if "=" not in item:
            raise SpecError(f"--vary wants key=v1,v2,..., got {item!r}")
        k, vals = item.split("=", 1)
        axes.append([(k.strip(), v) for v in vals.split(",")])
    rows = list(rows) or [("", [])]
    out = []
    for name, ovs in rows:
        for combo in itertools.product(*axes):
            s = clone(base)
            for ov in ovs:
                k, v = ov.split("=", 1)
                apply_override(s, k.strip(), v)
            for k, v in combo:
                apply_override(s, k, v)
            validate(s)
            label = " ".join([name] + [f"{k}={v}" for k, v in combo]).strip()
            out.append((label, s))
    return out


def _sweep_worker(job):
    label, spec, out = job
    code, info, report = _run_one(spec, out)
    return label, code, info if code else _line(report, info, label)


def cmd_sweep(args) -> int:
    base = load_spec(args.spec, args.set)
    rows = _rows_from_file(args.rows) if args.rows else []
    jobs = [(label, s, args.out) for label, s in sweep_specs(base, rows, args.vary)]
    worst = EXIT_OK
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_sweep_worker, jobs))
    else:
        results = map(_sweep_worker, jobs)
    for label, code, text in results:
        if code:
            print(f"{label}  {text}", file=sys.stderr)
            worst = max(worst, code)
        else:
            print(text)
    return worst


def cmd_ccdf(args) -> int:
    path = args.results
    if os.path.isdir(path):
        path = os.path.join(path, "flows.csv")
    rows = read_flows(path)
    if args.kind:
        rows = [r for r in rows if r["kind"] == args.kind]
    fcts = [r["fct_ns"] for r in rows]
    if not fcts:
        print("no flows", file=sys.stderr)
        return EXIT_SPEC
    print("fct_ns,ccdf")
    for x, p in fct_ccdf(fcts):
        print(f"{x:.0f},{p:.6g}")
    st = tail_stats(fcts)
    print(f"# n={st['count']} p50={st['p50']:.0f} p99={st['p99']:.0f} p999={st['p999']:.0f}", file=sys.stderr)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="chunknet", description="chunk-based multipath transport simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--spec", help="experiment file (.ini or .json)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. transport.chunk_size=4096")
        sp.add_argument("--out", default="results", help="results root (default: results)")

    r = sub.add_parser("run", help="run one experiment")
    common(r)
    r.add_argument("--trace", action="store_true", help="record the packet trace")
    r.set_defaults(fn=cmd_run)

    t = sub.add_parser("trace", help="run one experiment with the packet trace enabled")
    common(t)
    t.set_defaults(fn=cmd_trace)

    s = sub.add_parser("sweep", help="run named rows and/or a cross product of values")
    common(s)
    s.add_argument("--rows", help="INI file: one section per row, keys are overrides")
    s.add_argument("--vary", action="append", default=[], metavar="KEY=V1,V2",
                   help="cross-product axis (repeatable)")
    s.add_argument("-j", "--jobs", type=int, default=1, help="parallel worker processes")
    s.set_defaults(fn=cmd_sweep)

    c = sub.add_parser("ccdf", help="print FCT CCDF points of a results directory")
    c.add_argument("results", help="results directory or flows.csv")
    c.add_argument("--kind", help="only flows of this kind (e.g. permutation)")
    c.set_defaults(fn=cmd_ccdf)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except SpecError as e:
        print(f"invalid spec: {e}", file=sys.stderr)
        return EXIT_SPEC


if __name__ == "__main__":
    sys.exit(main())
