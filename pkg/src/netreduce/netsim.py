"""Deterministic discrete-event network simulator.

Time is integer nanoseconds. Links are directed channels with a serialization
stage, a FIFO queue with tail drop, fixed propagation delay, and an optional
Bernoulli loss draw applied when a packet leaves the queue. Every random
decision comes from a per-link stream seeded from (run seed, link index), so
a (config, seed) pair fully determines the run.
"""

from __future__ import annotations

import heapq
import random
import time as _time
from collections import deque
from dataclasses import dataclass, field

from .codec import Packet

NS_PER_SEC = 1_000_000_000


class SimulationError(Exception):
    pass


class Stalled(SimulationError):
    """No forward progress while the job was still incomplete."""


class HorizonExceeded(SimulationError):
    """Wall-clock budget for one simulation run was exhausted."""


@dataclass
class NodeSpec:
    name: str
    kind: str  # "host" | "switch"
    programmable: bool = False


@dataclass
class LinkSpec:
    a: str
    b: str
    rate_bps: int
    delay_ns: int
    queue_pkts: int
    loss_p: float = 0.0


class Topology:
    """Undirected node/link description; simulation treats links full duplex."""

    def __init__(self, nodes: list[NodeSpec], links: list[LinkSpec]):
        self.nodes = {n.name: n for n in nodes}
        if len(self.nodes) != len(nodes):
            raise ValueError("duplicate node id")
        self.links = links
        self.adj: dict[str, list[str]] = {n.name: [] for n in nodes}
        for l in links:
            if l.a not in self.nodes or l.b not in self.nodes:
                raise ValueError(f"link references unknown node: {l.a}-{l.b}")
            if l.rate_bps <= 0:
                raise ValueError(f"link {l.a}-{l.b} rate must be positive")
            self.adj[l.a].append(l.b)
            self.adj[l.b].append(l.a)
        for k in self.adj:
            self.adj[k].sort()
        self._check_connected()

    def _check_connected(self) -> None:
        if not self.nodes:
            return
        seen = set()
        queue = deque([next(iter(self.nodes))])
        while queue:
            n = queue.popleft()
            if n in seen:
                continue
            seen.add(n)
            queue.extend(self.adj[n])
        missing = set(self.nodes) - seen
        if missing:
            raise ValueError(f"topology not connected, unreachable: {sorted(missing)}")

    def hosts(self) -> list[str]:
        return sorted(n for n, s in self.nodes.items() if s.kind == "host")

    def switches(self) -> list[str]:
        return sorted(n for n, s in self.nodes.items() if s.kind == "switch")

    def hop_counts(self, start: str) -> dict[str, int]:
        dist = {start: 0}
        queue = deque([start])
        while queue:
            n = queue.popleft()
            for m in self.adj[n]:
                if m not in dist:
                    dist[m] = dist[n] + 1
                    queue.append(m)
        return dist

    def shortest_path(self, start: str, goal: str) -> list[str]:
        """BFS path with sorted-neighbor tie-break, so results are stable."""
        prev: dict[str, str | None] = {start: None}
        queue = deque([start])
        while queue:
            n = queue.popleft()
            if n == goal:
                break
            for m in self.adj[n]:
                if m not in prev:
                    prev[m] = n
                    queue.append(m)
        if goal not in prev:
            raise ValueError(f"no path {start} -> {goal}")
        path = [goal]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        return path[::-1]

    def plain_next_hop(self) -> dict[str, dict[str, str]]:
        """Per-node forwarding table destination -> neighbor (shortest path)."""
        table: dict[str, dict[str, str]] = {}
        for n in sorted(self.nodes):
            table[n] = {}
            for d in sorted(self.nodes):
                if d == n:
                    continue
                table[n][d] = self.shortest_path(n, d)[1]
        return table

    def link_between(self, a: str, b: str) -> LinkSpec:
        for l in self.links:
            if {l.a, l.b} == {a, b}:
                return l
        raise ValueError(f"no link {a}-{b}")

    def path_rtt_ns(self, a: str, b: str, pkt_bytes: int = 1416) -> int:
        """Round-trip estimate along the shortest path."""
        path = self.shortest_path(a, b)
        one_way = 0
        for u, v in zip(path, path[1:]):
            l = self.link_between(u, v)
            one_way += l.delay_ns + (pkt_bytes * 8 * NS_PER_SEC) // l.rate_bps
        return 2 * one_way

    def mean_rtt_ns(self) -> int:
        hosts = self.hosts()
        if len(hosts) < 2:
            return 1000
        pairs = [(a, b) for i, a in enumerate(hosts) for b in hosts[i + 1 :]]
        return sum(self.path_rtt_ns(a, b) for a, b in pairs) // len(pairs)


def parse_topology(text: str) -> Topology:
    """Line format: `node <id> host|switch[:prog]` and
    `link <a> <b> <rate_bps> <delay_ns> <queue_pkts> [loss_p]`."""
    nodes, links = [], []
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "node":
                _, name, kind = parts
                prog = kind == "switch:prog"
                base = "switch" if prog else kind
                if base not in ("host", "switch"):
                    raise ValueError(f"unknown node kind {kind}")
                nodes.append(NodeSpec(name, base, prog))
            elif parts[0] == "link":
                a, b, rate, delay, q = parts[1:6]
                loss = float(parts[6]) if len(parts) > 6 else 0.0
                links.append(LinkSpec(a, b, int(rate), int(delay), int(q), loss))
            else:
                raise ValueError(f"unknown directive {parts[0]}")
        except (ValueError, IndexError) as e:
            raise ValueError(f"topology line {ln}: {e}") from None
    return Topology(nodes, links)


def format_topology(topo: Topology) -> str:
    out = []
    for n in sorted(topo.nodes.values(), key=lambda s: s.name):
        kind = "switch:prog" if n.programmable else n.kind
        out.append(f"node {n.name} {kind}")
    for l in topo.links:
        line = f"link {l.a} {l.b} {l.rate_bps} {l.delay_ns} {l.queue_pkts}"
        if l.loss_p:
            line += f" {l.loss_p}"
        out.append(line)
    return "\n".join(out) + "\n"


@dataclass
class LinkCounters:
    offered_pkts: int = 0
    offered_bytes: int = 0
    delivered_pkts: int = 0
    delivered_bytes: int = 0
    payload_bytes: int = 0
    queue_drop_pkts: int = 0
    queue_drop_bytes: int = 0
    loss_drop_pkts: int = 0
    loss_drop_bytes: int = 0


class MetricsLedger:
    """Per-run accounting: link byte counts, event counters, goodput samples."""

    def __init__(self, goodput_window_ns: int = 5 * NS_PER_SEC):
        self.links: dict[tuple[str, str], LinkCounters] = {}
        self.counters: dict[str, int] = {}
        self.peak_kv: dict[str, int] = {}
        self.goodput: dict[tuple[int, int], int] = {}  # (flow, window) -> bytes
        self.goodput_window_ns = goodput_window_ns
        self.jct_ns: int = 0
        self.status: str = "created"

    def link(self, a: str, b: str) -> LinkCounters:
        c = self.links.get((a, b))
        if c is None:
            c = self.links[(a, b)] = LinkCounters()
        return c

    def bump(self, name: str, n: int = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + n

    def get(self, name: str) -> int:
        return self.counters.get(name, 0)

    def record_kv_size(self, switch: str, kv_size: int) -> None:
        if kv_size > self.peak_kv.get(switch, 0):
            self.peak_kv[switch] = kv_size

    def credit_goodput(self, flow: int, now_ns: int, nbytes: int) -> None:
        w = now_ns // self.goodput_window_ns
        self.goodput[(flow, w)] = self.goodput.get((flow, w), 0) + nbytes

    def last_hop_bytes(self, reducer_hosts: list[str]) -> int:
        """Bytes delivered on links feeding into reducer hosts."""
        tot = 0
        for (a, b), c in self.links.items():
            if b in reducer_hosts:
                tot += c.delivered_bytes
        return tot

    def last_hop_payload_bytes(self, reducer_hosts: list[str]) -> int:
        tot = 0
        for (a, b), c in self.links.items():
            if b in reducer_hosts:
                tot += c.payload_bytes
        return tot

    def write_csv(self, fp) -> None:
        """Long-format rows, fully sorted, so equal runs hash identically."""
        fp.write("record,key,field,value\n")
        for (a, b) in sorted(self.links):
            c = self.links[(a, b)]
            for f in (
                "offered_pkts offered_bytes delivered_pkts delivered_bytes "
                "payload_bytes queue_drop_pkts queue_drop_bytes "
                "loss_drop_pkts loss_drop_bytes"
            ).split():
                fp.write(f"link,{a}->{b},{f},{getattr(c, f)}\n")
        for k in sorted(self.counters):
            fp.write(f"counter,{k},,{self.counters[k]}\n")
        for s in sorted(self.peak_kv):
            fp.write(f"peak_kv,{s},,{self.peak_kv[s]}\n")
        for (flow, w) in sorted(self.goodput):
            fp.write(f"goodput,{flow},{w},{self.goodput[(flow, w)]}\n")
        fp.write(f"run,jct_ns,,{self.jct_ns}\n")
        fp.write(f"run,status,,{self.status}\n")


class _LinkState:
    __slots__ = ("spec", "rng", "queue", "busy", "counters")

    def __init__(self, spec: LinkSpec, rng: random.Random, counters: LinkCounters):
        self.spec = spec
        self.rng = rng
        self.queue: deque[Packet] = deque()
        self.busy = False
        self.counters = counters


class Simulator:
    """Event loop binding agents (hosts, switches) to links."""

    def __init__(
        self,
        topology: Topology,
        seed: int = 0,
        ledger: MetricsLedger | None = None,
        wallclock_cap_s: float = 600.0,
        loss_override: float | None = None,
    ):
        self.topo = topology
        self.seed = seed
        self.ledger = ledger if ledger is not None else MetricsLedger()
        self.now = 0
        self._events: list[tuple[int, int, object]] = []
        self._tie = 0
        self.agents: dict[str, object] = {}
        self.stopped = False
        self.wallclock_cap_s = wallclock_cap_s
        self.last_progress_ns = 0
        self._links: dict[tuple[str, str], _LinkState] = {}
        idx = 0
        for l in topology.links:
            for a, b in ((l.a, l.b), (l.b, l.a)):
                spec = LinkSpec(
                    a, b, l.rate_bps, l.delay_ns, l.queue_pkts,
                    l.loss_p if loss_override is None else loss_override,
                )
                rng = random.Random(seed * 1_000_003 + idx)
                self._links[(a, b)] = _LinkState(spec, rng, self.ledger.link(a, b))
                idx += 1

    def register(self, node: str, agent) -> None:
        if node not in self.topo.nodes:
            raise ValueError(f"unknown node {node}")
        self.agents[node] = agent

    def schedule(self, at_ns: int, fn) -> None:
        if at_ns < self.now:
            raise SimulationError("event scheduled in the past")
        self._tie += 1
        heapq.heappush(self._events, (at_ns, self._tie, fn))

    def after(self, delay_ns: int, fn) -> None:
        self.schedule(self.now + delay_ns, fn)

    def progress(self) -> None:
        self.last_progress_ns = self.now

    def transmit(self, src: str, dst: str, pkt: Packet) -> None:
        """Offer a packet to the directed link src->dst."""
        ls = self._links.get((src, dst))
        if ls is None:
            raise SimulationError(f"no link {src}->{dst}")
        size = pkt.size()
        ls.counters.offered_pkts += 1
        ls.counters.offered_bytes += size
        if len(ls.queue) >= ls.spec.queue_pkts:
            ls.counters.queue_drop_pkts += 1
            ls.counters.queue_drop_bytes += size
            self.ledger.bump("queue_drops")
            return
        ls.queue.append(pkt)
        if not ls.busy:
            self._serve(ls)

    def _serve(self, ls: _LinkState) -> None:
        # Dequeue until a packet survives the loss draw or the queue drains.
        while ls.queue:
            pkt = ls.queue.popleft()
            size = pkt.size()
            if ls.spec.loss_p > 0.0 and ls.rng.random() < ls.spec.loss_p:
                ls.counters.loss_drop_pkts += 1
                ls.counters.loss_drop_bytes += size
                self.ledger.bump("losses")
                continue
            ser = (size * 8 * NS_PER_SEC) // ls.spec.rate_bps
            ls.busy = True
            arrive = self.now + ser + ls.spec.delay_ns
            self.schedule(arrive, lambda p=pkt, l=ls: self._deliver(l, p))
            self.after(ser, lambda l=ls: self._service_done(l))
            return
        ls.busy = False

    def _service_done(self, ls: _LinkState) -> None:
        ls.busy = False
        if ls.queue:
            self._serve(ls)

    def _deliver(self, ls: _LinkState, pkt: Packet) -> None:
        ls.counters.delivered_pkts += 1
        ls.counters.delivered_bytes += pkt.size()
        ls.counters.payload_bytes += pkt.payload_bytes()
        agent = self.agents.get(ls.spec.b)
        if agent is not None:
            agent.handle_packet(pkt, ls.spec.a)

    def run(self, horizon_ns: int | None = None) -> None:
        start_wall = _time.monotonic()
        n = 0
        while self._events and not self.stopped:
            t, _, fn = heapq.heappop(self._events)
            if horizon_ns is not None and t > horizon_ns:
                self.now = horizon_ns
                break
            self.now = t
            fn()
            n += 1
            if n % 8192 == 0 and _time.monotonic() - start_wall > self.wallclock_cap_s:
                raise HorizonExceeded(
                    f"wall clock cap {self.wallclock_cap_s}s hit at sim time {self.now}ns"
                )

    def stop(self) -> None:
        self.stopped = True
