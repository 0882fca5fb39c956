"""Command-line front end.

    netreduce compile <job.dsl> <topo.txt> -o manifest
    netreduce run <manifest> [--seed K] [--loss P] [--mode baseline|p4com|no-mem]
    netreduce sweep <plan> [--out DIR] [--parallel N] [--no-figures]
    netreduce model --D BYTES --R PROP --N RATIO --rho RHO
    netreduce report <results.csv> [--out DIR]
    netreduce selftest

Output directory resolution: --out flag, then $NETREDUCE_OUT, then ./out.
"""

from __future__ import annotations

import argparse
import os
import sys

from .codec import shown_key
from .compiler import compile_job, format_manifest, parse_job, parse_manifest
from .experiment import (
    parse_plan,
    read_results_csv,
    run_experiment,
)
from .hosts import MODES, RunKnobs, run_job
from .model import TheoreticalModel, model_volumes
from .netsim import parse_topology


def _outdir(args) -> str:
    return args.out or os.environ.get("NETREDUCE_OUT", "out")


def cmd_compile(args) -> int:
    with open(args.job) as fp:
        spec = parse_job(fp.read())
    with open(args.topo) as fp:
        topo = parse_topology(fp.read())
    manifest = compile_job(spec, topo, cap=args.cap, bound_b=args.bound,
                           num_slots=args.slots, num_hash=args.hash_count)
    text = format_manifest(manifest)
    if args.output == "-":
        sys.stdout.write(text)
    else:
        with open(args.output, "w") as fp:
            fp.write(text)
        print(f"wrote {args.output} (placement cost {manifest.cost})")
    return 0


def cmd_run(args) -> int:
    with open(args.manifest) as fp:
        manifest = parse_manifest(fp.read())
    knobs = RunKnobs()
    if args.tcollect is not None:
        knobs.t_collect_ns = args.tcollect
    res = run_job(manifest, mode=args.mode, seed=args.seed,
                  loss=args.loss, knobs=knobs)
    outdir = _outdir(args)
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "metrics.csv"), "w") as fp:
        res.ledger.write_csv(fp)
    for host in res.reducer_hosts:
        path = os.path.join(outdir, f"result-{host}.tsv")
        with open(path, "w") as fp:
            for key in sorted(res.tables[host]):
                fp.write(f"{shown_key(key)}\t{res.tables[host][key]}\n")
    print(f"status={res.status} jct_ns={res.jct_ns} "
          f"reducers={','.join(res.reducer_hosts) or '-'} out={outdir}")
    return 0 if res.status == "completed" else 1


def cmd_sweep(args) -> int:
    with open(args.plan) as fp:
        name, cells = parse_plan(fp.read())
    outdir = _outdir(args)
    rows, _ = run_experiment(cells, outdir=outdir, parallel=args.parallel,
                             render=not args.no_figures)
    bad = [r for r in rows if r["status"] != "completed"]
    print(f"plan {name}: {len(rows)} runs -> {outdir} "
          f"({len(bad)} incomplete)")
    return 0 if not bad else 1


def cmd_model(args) -> int:
    m = TheoreticalModel(data_bytes=args.D, kv_proportion=args.R,
                         ratio_n=args.N, rho=args.rho)
    v, v_agg, ratio = model_volumes(m)
    print(f"V={v:.6g} V'={v_agg:.6g} ratio={ratio:.6g}")
    return 0


def cmd_report(args) -> int:
    from .figures import render_report
    rows = read_results_csv(args.results)
    outdir = _outdir(args)
    written = render_report(rows, [], os.path.join(outdir, "figures"))
    print("\n".join(written) if written else "nothing to render")
    return 0


def cmd_selftest(args) -> int:
    """Small built-in battery: codec round trip, a lossless and a lossy run
    checked against the single-machine oracle, and determinism hashes."""
    import hashlib
    import io
    import random

    from .codec import DATA, KeyValue, Packet, decode, encode, pad_key
    from .experiment import Cell, oracle_aggregate, run_cell
    from .workload import partitions_for_manifest

    failures = 0

    def check(name: str, ok: bool) -> None:
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    rng = random.Random(7)
    ok = True
    for _ in range(200):
        kvs = [KeyValue(pad_key(bytes([rng.randrange(1, 255)]) * rng.randrange(1, 64)),
                        rng.randrange(-2**31, 2**31))
               for _ in range(rng.randrange(0, 21))]
        p = Packet(src=1, dst=2, flow=3, seq=rng.randrange(1, 2**32),
                   flags=DATA, op=rng.randrange(0, 3), kvs=kvs)
        ok = ok and decode(encode(p)) == p
    check("codec round-trip (200 random packets)", ok)

    cell = Cell(name="selftest", ratio=3, mode="p4com",
                workload="gradsum:k=300", seeds=[1], topo="star:hosts=4",
                workers=("h1", "h2", "h3"), reducer="h4", check_oracle=True)
    cell.knobs.t_collect_ns = 0
    row, _ = run_cell(cell, 1)
    check("lossless run completes", row["status"] == "completed")
    check("lossless run matches oracle", row["oracle_match"] == "1")

    lossy = Cell(name="selftest-loss", ratio=2, mode="p4com",
                 workload="words:k=80:n=200:overlap=0.5", seeds=[3],
                 topo="star:hosts=4", workers=("h1", "h2"), reducer="h4",
                 loss=0.02, check_oracle=True)
    lossy.knobs.dup_inject_every = 1
    lossy.knobs.t_collect_ns = 0
    row2, _ = run_cell(lossy, 3)
    check("lossy run completes", row2["status"] == "completed")
    check("lossy run matches oracle", row2["oracle_match"] == "1")
    suppressed = int(row2["duplicates_dropped"]) + int(row2["receiver_dups"])
    check("duplicate suppression observed", suppressed > 0)

    hashes = set()
    for _ in range(2):
        r, gp = run_cell(cell, 1)
        r["runtime_s"] = "0"
        hashes.add(hashlib.sha256(str(sorted(r.items())).encode()).hexdigest())
    check("determinism (repeated run, equal metrics)", len(hashes) == 1)

    print(f"{'OK' if failures == 0 else 'FAILED'}: "
          f"{failures} failure(s)")
    return 0 if failures == 0 else 1


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="netreduce", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="cmd", required=True)

    c = sub.add_parser("compile", help="compile a job DSL + topology into a manifest")
    c.add_argument("job")
    c.add_argument("topo")
    c.add_argument("-o", "--output", default="-")
    c.add_argument("--cap", type=int, default=4, help="groups per switch")
    c.add_argument("--bound", type=int, default=1024, help="flush bound B")
    c.add_argument("--slots", type=int, default=4096, help="register slots")
    c.add_argument("--hash-count", type=int, default=2, help="probe hashes")
    c.set_defaults(fn=cmd_compile)

    r = sub.add_parser("run", help="run one compiled job")
    r.add_argument("manifest")
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--loss", type=float, default=None)
    r.add_argument("--mode", choices=MODES, default="p4com")
    r.add_argument("--tcollect", type=int, default=None,
                   help="collection period in ns (0 = drain only)")
    r.add_argument("--out", default=None)
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="run an experiment plan")
    s.add_argument("plan")
    s.add_argument("--out", default=None)
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(fn=cmd_sweep)

    m = sub.add_parser("model", help="analytic shuffle-volume model")
    m.add_argument("--D", type=float, required=True)
    m.add_argument("--R", type=float, required=True)
    m.add_argument("--N", type=int, required=True)
    m.add_argument("--rho", type=float, required=True)
    m.set_defaults(fn=cmd_model)

    rp = sub.add_parser("report", help="re-render figures from results.csv")
    rp.add_argument("results")
    rp.add_argument("--out", default=None)
    rp.set_defaults(fn=cmd_report)

    st = sub.add_parser("selftest", help="quick built-in sanity battery")
    st.set_defaults(fn=cmd_selftest)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
