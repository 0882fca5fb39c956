"""Report figures rendered next to the delimited output: normalized last-hop
traffic against the analytic ideal, job completion time by mapper:reducer
ratio, and per-flow goodput over time."""

from __future__ import annotations

import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _mean(vals):
    vals = list(vals)
    return sum(vals) / len(vals) if vals else float("nan")


def _series_by_mode(rows, value_field, cast=float):
    """mode -> sorted [(ratio, mean value over seeds)]."""
    acc = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r[value_field] in ("", None):
            continue
        acc[r["mode"]][int(r["ratio"])].append(cast(r[value_field]))
    return {
        mode: sorted((n, _mean(vs)) for n, vs in by_n.items())
        for mode, by_n in acc.items()
    }


def plot_traffic_reduction(rows, path: str) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    whole = _series_by_mode(rows, "norm_whole")
    payload = _series_by_mode(rows, "norm_payload")
    for mode, pts in sorted(whole.items()):
        if mode == "baseline" or not pts:
            continue
        ax.plot(*zip(*pts), marker="o", label=f"{mode} (whole packet)")
    for mode, pts in sorted(payload.items()):
        if mode == "baseline" or not pts:
            continue
        ax.plot(*zip(*pts), marker="s", linestyle="--", label=f"{mode} (payload)")
    ratios = sorted({int(r["ratio"]) for r in rows})
    rhos = [float(r["rho"]) for r in rows if r["rho"]]
    rho = _mean(rhos) if rhos else 1.0
    ideal = [(n, 1.0 / (n * rho)) for n in ratios]
    if ideal:
        ax.plot(*zip(*ideal), color="k", linestyle=":", label="ideal 1/(N*rho)")
    ax.set_xlabel("mapper:reducer ratio N")
    ax.set_ylabel("last-hop traffic (normalized to baseline)")
    ax.set_ylim(bottom=0)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_jct(rows, path: str) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    jct = _series_by_mode(rows, "jct_ns")
    width = 0.8 / max(len(jct), 1)
    ratios = sorted({int(r["ratio"]) for r in rows})
    for i, (mode, pts) in enumerate(sorted(jct.items())):
        by_n = dict(pts)
        xs = [ratios.index(n) + i * width for n in ratios if n in by_n]
        ys = [by_n[n] / 1e6 for n in ratios if n in by_n]
        ax.bar(xs, ys, width=width, label=mode)
    ax.set_xticks([i + width * (len(jct) - 1) / 2 for i in range(len(ratios))])
    ax.set_xticklabels([f"{n}:1" for n in ratios])
    ax.set_xlabel("mapper:reducer ratio")
    ax.set_ylabel("job completion time (ms)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_goodput(samples, window_ns: int, path: str) -> None:
    """samples: (cell, mode, ratio, seed, flow, window, bytes) rows."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    by_flow = defaultdict(list)
    for cell, mode, ratio, seed, flow, window, nbytes in samples:
        by_flow[(cell, int(flow))].append((int(window), int(nbytes)))
    for (cell, flow), pts in sorted(by_flow.items()):
        pts.sort()
        xs = [w * window_ns / 1e9 for w, _ in pts]
        ys = [b * 8 / (window_ns / 1e9) / 1e9 for _, b in pts]
        ax.plot(xs, ys, alpha=0.7, label=f"{cell} flow {flow}")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("goodput (Gbit/s)")
    if len(by_flow) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report(rows, goodput_samples, outdir: str,
                  goodput_window_ns: int = 5_000_000_000) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    written = []
    if any(r["norm_whole"] for r in rows):
        p = os.path.join(outdir, "traffic_reduction.png")
        plot_traffic_reduction(rows, p)
        written.append(p)
    if rows:
        p = os.path.join(outdir, "jct.png")
        plot_jct(rows, p)
        written.append(p)
    if goodput_samples:
        p = os.path.join(outdir, "goodput.png")
        plot_goodput(goodput_samples, goodput_window_ns, p)
        written.append(p)
    return written
