"""Experiment orchestration: canned topologies, job synthesis for the
many-to-one sweep grid, per-cell execution, normalization against the
baseline arm, and CSV/summary emission.

A plan is a line-oriented text file:

    name demo
    cell ratio=6 mode=p4com workload=gradsum:k=2000 seeds=1,2 topo=default

Cell keys: ratio, mode (baseline|p4com|no-mem), workload, seeds, loss, op,
topo (default[:access=G][:core=G] | star[:hosts=N][:access=G] | file:PATH),
workers, reducer, tcollect (ns, 0 = drain only), bound, slots, hash, heap,
maxcwnd, initcwnd, dupinject, gwindow (goodput window ns), check (0|1).
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import os
import time
from dataclasses import dataclass, field, replace

from .codec import OP_NAMES
from .compiler import Manifest, compile_job, parse_job
from .hosts import RunKnobs, run_job
from .model import TheoreticalModel, estimate_rho, model_volumes
from .netsim import NS_PER_SEC, Topology, parse_topology
from .workload import partitions_for_manifest

RESULT_COLUMNS = [
    "cell", "mode", "ratio", "workload", "seed", "status", "jct_ns",
    "lasthop_bytes", "lasthop_payload_bytes", "norm_whole", "norm_payload",
    "rho", "ideal_ratio", "losses", "queue_drops", "retransmits",
    "duplicates_dropped", "ooo_dropped", "receiver_dups", "fallback_pairs",
    "dropped_pairs", "flushes_signal", "flushes_overflow", "flushes_drain",
    "backoff_signals", "signals_periodic", "signals_heap", "peak_kv",
    "oracle_match", "runtime_s",
]

GOODPUT_COLUMNS = ["cell", "mode", "ratio", "seed", "flow", "window", "bytes"]


def default_topology(access_gbps: float = 1.0, core_gbps: float = 1.0,
                     delay_ns: int = 10_000, queue_pkts: int = 128,
                     hosts_per_rack: int = 6) -> str:
    """Two racks, two aggregation switches, 12 hosts by default; inter-switch
    links at the core rate, host links at the access rate."""
    access = int(access_gbps * 1e9)
    core = int(core_gbps * 1e9)
    out = []
    hosts = [f"h{i:02d}" for i in range(1, 2 * hosts_per_rack + 1)]
    for h in hosts:
        out.append(f"node {h} host")
    for s in ("t1", "t2", "a1", "a2"):
        out.append(f"node {s} switch:prog")
    for i, h in enumerate(hosts):
        tor = "t1" if i < hosts_per_rack else "t2"
        out.append(f"link {h} {tor} {access} {delay_ns} {queue_pkts}")
    for tor in ("t1", "t2"):
        for agg in ("a1", "a2"):
            out.append(f"link {tor} {agg} {core} {delay_ns} {queue_pkts}")
    return "\n".join(out) + "\n"


def star_topology(n_hosts: int = 4, access_gbps: float = 1.0,
                  delay_ns: int = 5_000, queue_pkts: int = 64) -> str:
    access = int(access_gbps * 1e9)
    out = [f"node h{i} host" for i in range(1, n_hosts + 1)]
    out.append("node s1 switch:prog")
    out += [f"link h{i} s1 {access} {delay_ns} {queue_pkts}"
            for i in range(1, n_hosts + 1)]
    return "\n".join(out) + "\n"


def topo_from_spec(spec: str) -> str:
    """`default[:access=G][:core=G][:queue=N]`, `star[:hosts=N][:access=G]`,
    or `file:PATH` returning raw topology text."""
    if spec.startswith("file:"):
        with open(spec[5:]) as fp:
            return fp.read()
    parts = spec.split(":")
    kind, kv = parts[0], dict(p.split("=", 1) for p in parts[1:])
    if kind == "default":
        return default_topology(
            access_gbps=float(kv.get("access", 1.0)),
            core_gbps=float(kv.get("core", 1.0)),
            queue_pkts=int(kv.get("queue", 128)),
        )
    if kind == "star":
        return star_topology(
            n_hosts=int(kv.get("hosts", 4)),
            access_gbps=float(kv.get("access", 1.0)),
            queue_pkts=int(kv.get("queue", 64)),
        )
    raise ValueError(f"unknown topology spec {spec!r}")


def build_job_dsl(ratio: int, workload: str, op: str = "ADD",
                  workers: tuple[str, ...] = ("h01", "h02", "h03"),
                  reducer: str = "h07") -> str:
    """Many-to-one job: `ratio` mapper processes spread round-robin over the
    worker hosts (several mappers may share one host and its link, the
    mappers-per-worker pattern), one reducer."""
    lines = []
    mids = []
    for i in range(ratio):
        host = workers[i % len(workers)]
        lines.append(f"dataset d{i + 1} = {host}:synth:{workload}")
        lines.append(f"mapper m{i + 1} on d{i + 1}")
        mids.append(f"m{i + 1}")
    lines.append(f"reducer {reducer} from {', '.join(mids)}")
    lines.append(f"op {op}")
    return "\n".join(lines) + "\n"


@dataclass
class Cell:
    name: str
    ratio: int
    mode: str
    workload: str
    seeds: list[int] = field(default_factory=lambda: [1])
    loss: float = 0.0
    op: str = "ADD"
    topo: str = "default"
    workers: tuple[str, ...] = ("h01", "h02", "h03")
    reducer: str = "h07"
    check_oracle: bool = False
    knobs: RunKnobs = field(default_factory=RunKnobs)
    compile_slots: int = 262_144
    compile_bound: int = 262_144
    compile_hash: int = 2


def parse_plan(text: str) -> tuple[str, list[Cell]]:
    name = "plan"
    cells = []
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "name":
            name = parts[1]
            continue
        if parts[0] != "cell":
            raise ValueError(f"plan line {ln}: unknown directive {parts[0]!r}")
        kv = dict(p.split("=", 1) for p in parts[1:])
        knobs = RunKnobs()
        if "tcollect" in kv:
            knobs.t_collect_ns = int(kv["tcollect"])
        if "heap" in kv:
            knobs.heap_limit = int(kv["heap"])
        if "maxcwnd" in kv:
            knobs.max_cwnd = float(kv["maxcwnd"])
        if "initcwnd" in kv:
            knobs.initial_cwnd = float(kv["initcwnd"])
        if "dupinject" in kv:
            knobs.dup_inject_every = int(kv["dupinject"])
        if "gwindow" in kv:
            knobs.goodput_window_ns = int(kv["gwindow"])
        cell = Cell(
            name=kv.get("name", f"cell{len(cells) + 1}"),
            ratio=int(kv["ratio"]),
            mode=kv.get("mode", "p4com"),
            workload=kv["workload"],
            seeds=[int(s) for s in kv.get("seeds", "1").split(",")],
            loss=float(kv.get("loss", 0.0)),
            op=kv.get("op", "ADD"),
            topo=kv.get("topo", "default"),
            check_oracle=kv.get("check", "0") == "1",
            knobs=knobs,
        )
        if "workers" in kv:
            cell.workers = tuple(kv["workers"].split(","))
        if "reducer" in kv:
            cell.reducer = kv["reducer"]
        if "slots" in kv:
            cell.compile_slots = int(kv["slots"])
        if "bound" in kv:
            cell.compile_bound = int(kv["bound"])
        if "hash" in kv:
            cell.compile_hash = int(kv["hash"])
        cells.append(cell)
    return name, cells


def compile_cell(cell: Cell) -> Manifest:
    topo = parse_topology(topo_from_spec(cell.topo))
    dsl = build_job_dsl(cell.ratio, cell.workload, cell.op,
                        cell.workers, cell.reducer)
    spec = parse_job(dsl)
    return compile_job(spec, topo, bound_b=cell.compile_bound,
                       num_slots=cell.compile_slots, num_hash=cell.compile_hash)


def oracle_aggregate(partitions: dict, op: int) -> dict[bytes, int]:
    from .codec import pad_key
    from .dataplane import combine32
    table: dict[bytes, int] = {}
    for recs in partitions.values():
        for key, value in recs:
            k = pad_key(key)
            cur = table.get(k)
            table[k] = value if cur is None else combine32(op, cur, value)
    return table


def run_cell(cell: Cell, seed: int) -> tuple[dict, list[tuple]]:
    """Execute one (cell, seed) point; returns a result row plus goodput
    samples. Stall/horizon outcomes become a row, not an exception."""
    manifest = compile_cell(cell)
    partitions = partitions_for_manifest(manifest, seed)
    rho = estimate_rho(list(partitions.values())) if partitions else 1.0
    t0 = time.monotonic()
    res = run_job(manifest, mode=cell.mode, seed=seed,
                  loss=cell.loss if cell.loss > 0 else None,
                  knobs=cell.knobs, partitions=partitions)
    elapsed = time.monotonic() - t0
    reducers = [g.reducer_host for g in manifest.groups]
    oracle_match = ""
    if cell.check_oracle:
        want = oracle_aggregate(partitions, manifest.op)
        got = {}
        for t in res.tables.values():
            got.update(t)
        oracle_match = "1" if got == want else "0"
    led = res.ledger
    row = {
        "cell": cell.name,
        "mode": cell.mode,
        "ratio": cell.ratio,
        "workload": cell.workload,
        "seed": seed,
        "status": res.status,
        "jct_ns": res.jct_ns,
        "lasthop_bytes": led.last_hop_bytes(reducers),
        "lasthop_payload_bytes": led.last_hop_payload_bytes(reducers),
        "norm_whole": "",
        "norm_payload": "",
        "rho": f"{rho:.6f}",
        "ideal_ratio": f"{1.0 / (cell.ratio * rho):.6f}",
        "losses": led.get("losses"),
        "queue_drops": led.get("queue_drops"),
        "retransmits": led.get("retransmits"),
        "duplicates_dropped": led.get("duplicates_dropped"),
        "ooo_dropped": led.get("ooo_dropped"),
        "receiver_dups": led.get("receiver_dups"),
        "fallback_pairs": led.get("fallback_pairs"),
        "dropped_pairs": led.get("dropped_pairs"),
        "flushes_signal": led.get("flushes_signal"),
        "flushes_overflow": led.get("flushes_overflow"),
        "flushes_drain": led.get("flushes_drain"),
        "backoff_signals": led.get("backoff_signals"),
        "signals_periodic": led.get("signals_periodic"),
        "signals_heap": led.get("signals_heap"),
        "peak_kv": max(led.peak_kv.values()) if led.peak_kv else 0,
        "oracle_match": oracle_match,
        "runtime_s": f"{elapsed:.3f}",
    }
    goodput = [
        (cell.name, cell.mode, cell.ratio, seed, flow, w, b)
        for (flow, w), b in sorted(led.goodput.items())
    ]
    return row, goodput


def _run_point(args):
    cell, seed = args
    return run_cell(cell, seed)


def normalize_rows(rows: list[dict]) -> None:
    """Fill norm_whole/norm_payload against the baseline row with the same
    (ratio, workload, seed); baseline rows normalize to 1 by construction."""
    base: dict[tuple, dict] = {}
    for r in rows:
        if r["mode"] == "baseline":
            base[(r["ratio"], r["workload"], r["seed"])] = r
    for r in rows:
        b = base.get((r["ratio"], r["workload"], r["seed"]))
        if b is None or not int(b["lasthop_bytes"]):
            continue
        r["norm_whole"] = f"{int(r['lasthop_bytes']) / int(b['lasthop_bytes']):.6f}"
        if int(b["lasthop_payload_bytes"]):
            r["norm_payload"] = (
                f"{int(r['lasthop_payload_bytes']) / int(b['lasthop_payload_bytes']):.6f}"
            )


def run_experiment(cells: list[Cell], outdir: str | None = None,
                   parallel: int = 1, render: bool = True,
                   ) -> tuple[list[dict], list[tuple]]:
    """Run every (cell, seed) point, normalize, and (optionally) write
    results.csv, goodput.csv, summary.txt and the report figures."""
    points = [(c, s) for c in cells for s in c.seeds]
    rows: list[dict] = []
    goodput: list[tuple] = []
    if parallel > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=parallel) as ex:
            for row, gp in ex.map(_run_point, points):
                rows.append(row)
                goodput.extend(gp)
    else:
        for p in points:
            row, gp = _run_point(p)
            rows.append(row)
            goodput.extend(gp)
    rows.sort(key=lambda r: (r["cell"], r["mode"], r["ratio"], r["seed"]))
    normalize_rows(rows)
    if outdir is not None:
        os.makedirs(outdir, exist_ok=True)
        write_results_csv(os.path.join(outdir, "results.csv"), rows)
        write_goodput_csv(os.path.join(outdir, "goodput.csv"), goodput)
        with open(os.path.join(outdir, "summary.txt"), "w") as fp:
            fp.write(summary_table(rows))
        if render:
            from .figures import render_report
            render_report(rows, goodput, os.path.join(outdir, "figures"))
    return rows, goodput


def results_csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def write_results_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w") as fp:
        fp.write(results_csv_text(rows))


def write_goodput_csv(path: str, samples: list[tuple]) -> None:
    with open(path, "w") as fp:
        fp.write(",".join(GOODPUT_COLUMNS) + "\n")
        for s in samples:
            fp.write(",".join(str(x) for x in s) + "\n")


def read_results_csv(path: str) -> list[dict]:
    with open(path) as fp:
        return list(csv.DictReader(fp))


def summary_table(rows: list[dict]) -> str:
    """Plain-text report: one line per (cell, mode, ratio) with means over
    seeds, plus the analytic ideal for overlay."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["cell"], r["mode"], int(r["ratio"])), []).append(r)
    lines = [
        f"{'cell':<14}{'mode':<10}{'N':>3} {'norm_whole':>11} {'norm_payload':>13}"
        f" {'ideal':>8} {'jct_ms':>10} {'status':>10}"
    ]
    for key in sorted(groups):
        rs = groups[key]
        def mean(field, cast=float):
            vals = [cast(r[field]) for r in rs if r[field] != ""]
            return sum(vals) / len(vals) if vals else float("nan")
        jct_ms = mean("jct_ns") / 1e6
        status = rs[0]["status"] if len({r["status"] for r in rs}) == 1 else "mixed"
        lines.append(
            f"{key[0]:<14}{key[1]:<10}{key[2]:>3} {mean('norm_whole'):>11.4f}"
            f" {mean('norm_payload'):>13.4f} {mean('ideal_ratio'):>8.4f}"
            f" {jct_ms:>10.3f} {status:>10}"
        )
    return "\n".join(lines) + "\n"


def ideal_curve(ratios: list[int], rho: float = 1.0) -> list[tuple[int, float]]:
    out = []
    for n in ratios:
        _, _, ratio = model_volumes(
            TheoreticalModel(data_bytes=1.0, kv_proportion=1.0, ratio_n=n, rho=rho)
        )
        out.append((n, ratio))
    return out
