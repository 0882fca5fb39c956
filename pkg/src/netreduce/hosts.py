"""Host agents and the job lifecycle: mappers (local map/reduce, packet
assembly, heap-triggered collection), reducers (final merge, completion
tracking), collection signalers, and the master orchestrating start, drain,
rate backoff, and FIN collection.

Control-plane messages ride plain packets: a one-octet opcode in the header
tag field and fixed-width arguments in the 36-octet aux region, retried until
acknowledged and deduplicated at the receiver, standing in for the control
TCP connections a real deployment would use.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field

from . import transport
from .codec import (
    DATA,
    FLUSH,
    KeyValue,
    MAX_PAIRS,
    Packet,
    REASON_DRAIN,
    REASON_OVERFLOW,
    make_ack,
    pad_key,
)
from .compiler import GroupPlan, Manifest
from .dataplane import RegisterStore, SwitchConfig, combine32, process_packet
from .netsim import MetricsLedger, Simulator
from .workload import Record, partitions_for_manifest

# control opcodes (header tag on plain packets)
CTRL_START = 1
CTRL_SEND_COMPLETE = 2
CTRL_DRAIN = 3
CTRL_FLOW_FINAL = 5
CTRL_OVERFLOW_REPORT = 6
CTRL_NOTICE = 7
CTRL_FIN = 8
CTRL_ACK = 9

_CTRL_ARGS = struct.Struct(">II28x")

MODES = ("baseline", "p4com", "no-mem")


def pack_args(a: int = 0, b: int = 0) -> bytes:
    return _CTRL_ARGS.pack(a, b)


def unpack_args(aux: bytes) -> tuple[int, int]:
    return _CTRL_ARGS.unpack(aux)


@dataclass
class RunKnobs:
    bound_b: int | None = None
    num_slots: int | None = None
    num_hash: int | None = None
    t_collect_ns: int | None = None  # None = 10x mean rtt, 0 = drain only
    heap_limit: int = 100_000
    initial_cwnd: float = 4.0
    max_cwnd: float = 1024.0
    dup_inject_every: int = 0  # re-send every k-th fresh packet verbatim
    goodput_window_ns: int = 5_000_000_000
    stall_ns: int | None = None
    wallclock_cap_s: float = 600.0
    horizon_ns: int | None = None


# ---------------------------------------------------------------------------
# shim-layer operations (pure, unit-testable)


@dataclass
class MapperState:
    partition: list[Record] = field(default_factory=list)
    local_table: dict[bytes, int] = field(default_factory=dict)
    key_heap: set[bytes] = field(default_factory=set)
    heap_limit: int = 100_000
    shim_queue: deque = field(default_factory=deque)


def run_map(m: MapperState, op: int, map_fn=None) -> dict[bytes, int]:
    """Apply map_fn to the partition and fold the records into the local
    table under the job op (the first-stage local reduce)."""
    records = map_fn(m.partition) if map_fn else m.partition
    for key, value in records:
        cur = m.local_table.get(key)
        m.local_table[key] = value if cur is None else combine32(op, cur, value)
    return m.local_table


def shim_assemble(m: MapperState, op: int, src: int = 0, dst: int = 0) -> list[Packet]:
    """Serialize the local table into data packet templates: sorted keys,
    zero-padded to the wire width, at most 20 pairs each."""
    pairs = [KeyValue(pad_key(k), v) for k, v in sorted(m.local_table.items())]
    packets = []
    for i in range(0, len(pairs), MAX_PAIRS):
        packets.append(
            Packet(src=src, dst=dst, flow=0, seq=0, flags=DATA, op=op,
                   kvs=pairs[i : i + MAX_PAIRS])
        )
    m.shim_queue.extend(packets)
    return packets


def maybe_trigger_collection(m: MapperState, key: bytes, src: int = 0, dst: int = 0,
                             op: int = 0) -> Packet | None:
    """Track a freshly emitted key; once the heap hits its limit, clear it
    and produce a collection-signal packet template."""
    m.key_heap.add(key)
    if len(m.key_heap) >= m.heap_limit:
        m.key_heap.clear()
        return Packet(src=src, dst=dst, flow=0, seq=0, flags=FLUSH, op=op, kvs=[])
    return None


@dataclass
class ReducerState:
    final_table: dict[bytes, int] = field(default_factory=dict)
    expected_flows: set[int] = field(default_factory=set)
    fins_received: set[int] = field(default_factory=set)


def final_reduce(r: ReducerState, pkt: Packet, op: int) -> dict[bytes, int]:
    """Merge a flush or pass-through packet's pairs into the final table."""
    for kv in pkt.kvs:
        cur = r.final_table.get(kv.key)
        r.final_table[kv.key] = kv.value if cur is None else combine32(op, cur, kv.value)
    return r.final_table


# ---------------------------------------------------------------------------
# reliable-flow plumbing shared by mappers, signalers, and switch flush flows


class FlowSender:
    """A window-limited reliable flow: template queue, gap and timeout
    retransmission, duplicate injection for tests, completion hook."""

    def __init__(self, sim: Simulator, ledger: MetricsLedger, emit, flow: int,
                 rtt_ns: int, knobs: RunKnobs):
        self.sim = sim
        self.ledger = ledger
        self.emit = emit  # callable(Packet)
        self.state = transport.SenderState(
            flow=flow, rtt_ns=rtt_ns,
            cwnd=knobs.initial_cwnd, max_cwnd=knobs.max_cwnd,
        )
        self.queue: deque[Packet] = deque()
        self.sent_count = 0
        self.dup_every = knobs.dup_inject_every
        self._timer_armed = False
        self.completed = False
        self.on_fresh_sent = None  # optional callable(Packet)
        self.on_complete = None  # optional callable()

    def pump(self) -> None:
        s = self.state
        now = self.sim.now
        while s.window_free() > 0 and self.queue:
            pkt = transport.stamp_packet(s, self.queue.popleft(), now)
            self.emit(pkt)
            self.sent_count += 1
            if self.dup_every and self.sent_count % self.dup_every == 0:
                self.ledger.bump("injected_dups")
                self.emit(pkt)
            if self.on_fresh_sent:
                self.on_fresh_sent(pkt)
        self._arm_timer()

    def _arm_timer(self) -> None:
        if self._timer_armed:
            return
        deadline = transport.next_rto_deadline(self.state)
        if deadline is None:
            return
        self._timer_armed = True
        self.sim.schedule(max(deadline, self.sim.now), self._on_timer)

    def _on_timer(self) -> None:
        self._timer_armed = False
        if self.sim.stopped:
            return
        self._retransmit()
        self._arm_timer()

    def _retransmit(self) -> None:
        for pkt in transport.detect_and_retransmit(self.state, self.sim.now):
            self.ledger.bump("retransmits")
            self.emit(pkt)

    def on_ack(self, seq: int) -> None:
        s = self.state
        pkt = s.unacked.get(seq)
        res = transport.on_ack(s, seq, self.sim.now)
        if res == "acked":
            self.sim.progress()
            self.ledger.credit_goodput(s.flow, self.sim.now, pkt.payload_bytes())
        elif res == "dup":
            self.ledger.bump("dup_acks")
        else:
            self.ledger.bump("anomalous_acks")
        self._retransmit()
        self.pump()
        if (not self.completed and not self.queue and s.done()
                and self.on_complete is not None):
            self.completed = True
            self.on_complete()


# ---------------------------------------------------------------------------
# per-host units


class MapperUnit:
    """One mapper's membership in one reducer group: maps its partition,
    ships the local table on its own flow, fires heap-driven signals."""

    def __init__(self, host: "HostAgent", flow: int, rtt_ns: int, knobs: RunKnobs,
                 mapper_id: str, reducer_id: int, op: int, partition: list[Record]):
        self.host = host
        self.mapper_id = mapper_id
        self.reducer_id = reducer_id
        self.op = op
        self.mstate = MapperState(partition=partition, heap_limit=knobs.heap_limit)
        self.sender = FlowSender(host.sim, host.ledger, host.send, flow, rtt_ns, knobs)
        self.sender.on_fresh_sent = self._track_keys
        self.sender.on_complete = self._send_complete
        self.started = False
        self.first_send_ns: int | None = None
        self.last_ack_ns: int | None = None

    def start(self) -> None:
        if self.started:
            return
        self.started = True
        run_map(self.mstate, self.op)
        shim_assemble(self.mstate, self.op, src=self.host.node_id, dst=self.reducer_id)
        self.sender.queue = self.mstate.shim_queue
        self.first_send_ns = self.host.sim.now
        if not self.sender.queue:
            self.sender.completed = True
            self._send_complete()
            return
        self.sender.pump()

    def _track_keys(self, pkt: Packet) -> None:
        if pkt.flags.cpd:
            return
        for kv in pkt.kvs:
            sig = maybe_trigger_collection(self.mstate, kv.key,
                                           src=self.host.node_id,
                                           dst=self.reducer_id, op=self.op)
            if sig is not None:
                self.host.ledger.bump("signals_heap")
                self.sender.queue.appendleft(sig)

    def on_ack(self, seq: int) -> None:
        self.sender.on_ack(seq)
        self.last_ack_ns = self.host.sim.now

    def _send_complete(self) -> None:
        final = self.sender.state.next_seq - 1
        self.host.send_ctrl(self.host.master_host, CTRL_SEND_COMPLETE,
                            pack_args(self.sender.state.flow, final))


class SignalerUnit:
    """Periodic and drain collection signals for one group, emitted from a
    mapper-side host so they traverse the group's aggregation switch."""

    def __init__(self, host: "HostAgent", flow: int, rtt_ns: int, knobs: RunKnobs,
                 reducer_id: int, op: int, t_collect_ns: int):
        self.host = host
        self.reducer_id = reducer_id
        self.op = op
        self.t_collect_ns = t_collect_ns
        self.sender = FlowSender(host.sim, host.ledger, host.send, flow, rtt_ns, knobs)
        self.periodic_on = False
        self.drained = False

    def _signal(self, tag: int) -> Packet:
        return Packet(src=self.host.node_id, dst=self.reducer_id, flow=0, seq=0,
                      flags=FLUSH, op=self.op, kvs=[], tag=tag)

    def start_periodic(self) -> None:
        if self.periodic_on or self.t_collect_ns <= 0:
            return
        self.periodic_on = True
        self.host.sim.after(self.t_collect_ns, self._tick)

    def _tick(self) -> None:
        if self.drained or self.host.sim.stopped:
            return
        self.host.ledger.bump("signals_periodic")
        self.sender.queue.append(self._signal(0))
        self.sender.pump()
        self.host.sim.after(self.t_collect_ns, self._tick)

    def drain(self) -> None:
        if self.drained:
            return
        self.drained = True
        self.host.ledger.bump("signals_drain")
        self.sender.queue.append(self._signal(REASON_DRAIN))
        self.sender.pump()

    def on_ack(self, seq: int) -> None:
        self.sender.on_ack(seq)


class ReducerUnit:
    """Final reducer for one group: dedupes by (flow, seq), merges pairs,
    acknowledges, and reports completion to the master."""

    def __init__(self, host: "HostAgent", group: GroupPlan, op: int, mode: str,
                 mapper_flows: set[int]):
        self.host = host
        self.group = group
        self.op = op
        self.mode = mode
        self.state = ReducerState(
            expected_flows=set(mapper_flows) if mode == "baseline"
            else {group.flush_flow}
        )
        self.recv: dict[int, transport.ReceiverState] = {}
        self.flow_finals: dict[int, int] = {}
        self.finals_announced = False
        self.drain_seq: int | None = None
        self.fin_sent = False

    def _rs(self, flow: int) -> transport.ReceiverState:
        rs = self.recv.get(flow)
        if rs is None:
            rs = self.recv[flow] = transport.ReceiverState()
        return rs

    def on_data(self, pkt: Packet) -> None:
        rs = self._rs(pkt.flow)
        if pkt.kv_count == 0 and not pkt.flags.cpd:
            rs.record(pkt.seq)  # payload-stripped copy: track continuity only
            return
        fresh = rs.record(pkt.seq)
        self.host.send(make_ack(pkt))
        if not fresh:
            self.host.ledger.bump("receiver_dups")
            return
        self.host.sim.progress()
        final_reduce(self.state, pkt, self.op)
        if pkt.tag == REASON_OVERFLOW:
            self.host.send_ctrl(self.host.master_host, CTRL_OVERFLOW_REPORT,
                                pack_args(pkt.flow))
        if pkt.tag == REASON_DRAIN and pkt.flow == self.group.flush_flow:
            self.drain_seq = pkt.seq
        self.check_done()

    def set_flow_final(self, flow: int, final_seq: int) -> None:
        self.flow_finals[flow] = final_seq
        self.check_done()

    def check_done(self) -> None:
        if self.fin_sent:
            return
        if self.mode == "baseline":
            if not self.finals_announced:
                return
            for flow in self.state.expected_flows:
                final = self.flow_finals.get(flow)
                if final is None or not self._rs(flow).complete_through(final):
                    return
                self.state.fins_received.add(flow)
        else:
            if self.drain_seq is None:
                return
            if not self._rs(self.group.flush_flow).complete_through(self.drain_seq):
                return
            self.state.fins_received.add(self.group.flush_flow)
        if self.state.fins_received >= self.state.expected_flows:
            self.fin_sent = True
            self.host.send_ctrl(self.host.master_host, CTRL_FIN, pack_args())


class MasterUnit:
    """Job conductor: starts mappers, waits for send-complete, drives the
    drain, relays overflow backoff notices, and collects FINs."""

    def __init__(self, host: "HostAgent", manifest: Manifest, mode: str,
                 flows: dict[int, tuple[str, GroupPlan, str]]):
        self.host = host
        self.manifest = manifest
        self.mode = mode
        self.flows = flows  # flow -> (mapper_id, group, mapper host name)
        self.pending_flows = set(flows)
        self.flow_finals: dict[int, int] = {}
        self.fins: set[str] = set()
        self.expected_fins = {g.reducer_host for g in manifest.groups}
        self.completed = False
        self.drained = False

    def start(self) -> None:
        for flow, (mid, g, host_name) in sorted(self.flows.items()):
            self.host.send_ctrl(host_name, CTRL_START, pack_args(flow))
        if self.mode != "baseline":
            for g in self.manifest.groups:
                self.host.send_ctrl(g.signaler_host, CTRL_START,
                                    pack_args(g.ctrl_flow))
        if not self.flows:
            self._all_sent()

    def on_send_complete(self, flow: int, final_seq: int) -> None:
        self.flow_finals[flow] = final_seq
        self.pending_flows.discard(flow)
        if not self.pending_flows:
            self._all_sent()

    def _all_sent(self) -> None:
        if self.drained:
            return
        self.drained = True
        if not self.expected_fins:
            self._finish()
            return
        if self.mode == "baseline":
            for g in self.manifest.groups:
                group_flows = sorted(
                    f for f, (m, gg, _h) in self.flows.items() if gg is g
                )
                for f in group_flows:
                    self.host.send_ctrl(g.reducer_host, CTRL_FLOW_FINAL,
                                        pack_args(f, self.flow_finals[f]))
                # zero-arg marker: all finals for this group were announced
                self.host.send_ctrl(g.reducer_host, CTRL_FLOW_FINAL, pack_args())
        else:
            for g in self.manifest.groups:
                self.host.send_ctrl(g.signaler_host, CTRL_DRAIN,
                                    pack_args(g.ctrl_flow))

    def on_overflow_report(self, flush_flow: int) -> None:
        for g in self.manifest.groups:
            if g.flush_flow == flush_flow:
                for flow, (mid, gg, host_name) in sorted(self.flows.items()):
                    if gg is g:
                        self.host.send_ctrl(host_name, CTRL_NOTICE, pack_args(flow))

    def on_fin(self, reducer_host: str) -> None:
        self.fins.add(reducer_host)
        if self.fins >= self.expected_fins:
            self._finish()

    def _finish(self) -> None:
        if self.completed:
            return
        self.completed = True
        self.host.ledger.jct_ns = self.host.sim.now
        self.host.ledger.status = "completed"
        self.host.sim.stop()


# ---------------------------------------------------------------------------
# node agents


class HostAgent:
    """One topology host: dispatches packets to the units living on it and
    provides the retried control-message channel."""

    CTRL_MAX_TRIES = 200

    def __init__(self, sim: Simulator, node: str, node_id: int,
                 ids: dict[str, int], names: dict[int, str],
                 master_host: str, rtt_ns: int, next_hop: dict[str, str]):
        self.sim = sim
        self.node = node
        self.node_id = node_id
        self.ids = ids
        self.names = names
        self.master_host = master_host
        self.rtt_ns = rtt_ns
        self.ledger = sim.ledger
        self.next_hop = next_hop
        self.mappers: dict[int, MapperUnit] = {}
        self.signalers: dict[int, SignalerUnit] = {}
        self.reducer: ReducerUnit | None = None
        self.master: MasterUnit | None = None
        self._ctrl_seq = 0
        self._ctrl_pending: dict[int, tuple[Packet, int]] = {}
        self._ctrl_seen: set[tuple[int, int]] = set()
        self._ctrl_timer = False

    def send(self, pkt: Packet) -> None:
        dst_name = self.names[pkt.dst]
        if dst_name == self.node:
            self.sim.after(0, lambda: self.handle_packet(pkt, self.node))
            return
        self.sim.transmit(self.node, self.next_hop[dst_name], pkt)

    def send_ctrl(self, dst_host: str, opcode: int, aux: bytes) -> None:
        self._ctrl_seq += 1
        pkt = Packet(src=self.node_id, dst=self.ids[dst_host], flow=0,
                     seq=self._ctrl_seq, tag=opcode, aux=aux)
        self._ctrl_pending[self._ctrl_seq] = (pkt, 0)
        self.send(pkt)
        self._arm_ctrl_timer()

    def _arm_ctrl_timer(self) -> None:
        if self._ctrl_timer or not self._ctrl_pending:
            return
        self._ctrl_timer = True
        self.sim.after(4 * self.rtt_ns, self._ctrl_retry)

    def _ctrl_retry(self) -> None:
        self._ctrl_timer = False
        if self.sim.stopped:
            return
        for seq in sorted(self._ctrl_pending):
            pkt, tries = self._ctrl_pending[seq]
            if tries >= self.CTRL_MAX_TRIES:
                del self._ctrl_pending[seq]
                self.ledger.bump("control_gave_up")
                continue
            self._ctrl_pending[seq] = (pkt, tries + 1)
            self.ledger.bump("control_retries")
            self.send(pkt)
        self._arm_ctrl_timer()

    def handle_packet(self, pkt: Packet, from_node: str) -> None:
        if not pkt.flags.cpa:
            self._handle_ctrl(pkt)
            return
        if pkt.flags.cpk:
            unit = self.mappers.get(pkt.flow) or self.signalers.get(pkt.flow)
            if unit is not None:
                unit.on_ack(pkt.seq)
            else:
                self.ledger.bump("stray_acks")
            return
        if self.reducer is not None:
            self.reducer.on_data(pkt)
        else:
            self.ledger.bump("stray_data")

    def _handle_ctrl(self, pkt: Packet) -> None:
        op = pkt.tag
        if op == CTRL_ACK:
            seq, _ = unpack_args(pkt.aux)
            self._ctrl_pending.pop(seq, None)
            return
        ack = Packet(src=self.node_id, dst=pkt.src, flow=0, seq=0,
                     tag=CTRL_ACK, aux=pack_args(pkt.seq))
        self.send(ack)
        key = (pkt.src, pkt.seq)
        if key in self._ctrl_seen:
            return
        self._ctrl_seen.add(key)
        self.sim.progress()
        a, b = unpack_args(pkt.aux)
        if op == CTRL_START:
            if a in self.mappers:
                self.mappers[a].start()
            elif a in self.signalers:
                self.signalers[a].start_periodic()
        elif op == CTRL_SEND_COMPLETE and self.master:
            self.master.on_send_complete(a, b)
        elif op == CTRL_DRAIN and a in self.signalers:
            self.signalers[a].drain()
        elif op == CTRL_FLOW_FINAL and self.reducer is not None:
            if a:
                self.reducer.set_flow_final(a, b)
            else:
                self.reducer.finals_announced = True
                self.reducer.check_done()
        elif op == CTRL_OVERFLOW_REPORT and self.master:
            self.master.on_overflow_report(a)
        elif op == CTRL_NOTICE:
            unit = self.mappers.get(a)
            if unit is not None:
                transport.on_overflow_notice(unit.sender.state)
                self.ledger.bump("backoff_signals")
        elif op == CTRL_FIN and self.master:
            self.master.on_fin(self.names[pkt.src])


class SwitchAgent:
    """One switch: runs the pipeline per packet and owns the reliable
    flush/fallback flows of the groups aggregated here."""

    def __init__(self, sim: Simulator, node: str, node_id: int, cfg: SwitchConfig):
        self.sim = sim
        self.node = node
        self.node_id = node_id
        self.cfg = cfg
        self.ledger = sim.ledger
        self.stores: dict[str, RegisterStore] = {}
        self.flush: dict[str, FlowSender] = {}
        self.flush_by_flow: dict[int, str] = {}

    def add_group(self, group_id: str, store: RegisterStore, sender: FlowSender):
        self.stores[group_id] = store
        self.flush[group_id] = sender
        self.flush_by_flow[sender.state.flow] = group_id

    def forward(self, pkt: Packet, port: str | None = None) -> None:
        if port is None:
            port = self.cfg.out_port(pkt.flow, pkt.dst)
        if port is None:
            self.ledger.bump("route_misses")
            return
        self.sim.transmit(self.node, port, pkt)

    def handle_packet(self, pkt: Packet, from_node: str) -> None:
        if pkt.flags.cpa and pkt.flags.cpk and pkt.dst == self.node_id:
            gid = self.flush_by_flow.get(pkt.flow)
            if gid is not None:
                self.flush[gid].on_ack(pkt.seq)
            return
        group = self.cfg.flow_group.get(pkt.flow)
        store = self.stores.get(group) if group is not None else None
        out = process_packet(self.cfg, store, pkt, from_node)
        if out.verdict == "duplicate-dropped":
            self.ledger.bump("duplicates_dropped")
        elif out.verdict == "ooo-dropped":
            self.ledger.bump("ooo_dropped")
        if out.fallback_pairs:
            self.ledger.bump("fallback_pairs", out.fallback_pairs)
        if out.dropped_pairs:
            self.ledger.bump("dropped_pairs", out.dropped_pairs)
        for reason in out.flush_events:
            self.ledger.bump(
                {0: "flushes_signal", 1: "flushes_overflow", 2: "flushes_drain"}[reason]
            )
        for port, p in out.emitted:
            if port == "flush":
                sender = self.flush[group]
                p.src = self.node_id
                sender.queue.append(p)
                sender.pump()
            else:
                self.forward(p, port)
        if store is not None:
            if out.verdict in ("aggregated", "flushed"):
                self.sim.progress()
            self.ledger.record_kv_size(
                self.node, max(s.kv_size for s in self.stores.values())
            )


# ---------------------------------------------------------------------------
# job assembly and execution


@dataclass
class JobResult:
    status: str
    jct_ns: int
    tables: dict[str, dict[bytes, int]]  # reducer host -> final table
    ledger: MetricsLedger
    reducer_hosts: list[str]
    mapper_flows: dict[int, str]  # flow -> mapper id
    mapper_spans: dict[int, tuple[int, int]]  # flow -> (first send, last ack)


def build_job(manifest: Manifest, mode: str = "p4com", seed: int = 1,
              loss: float | None = None, knobs: RunKnobs | None = None,
              partitions: dict[str, list[Record]] | None = None,
              ) -> tuple[Simulator, MasterUnit, dict[str, HostAgent]]:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    knobs = knobs or RunKnobs()
    topo = manifest.topology()
    ledger = MetricsLedger(goodput_window_ns=knobs.goodput_window_ns)
    sim = Simulator(topo, seed=seed, ledger=ledger,
                    wallclock_cap_s=knobs.wallclock_cap_s, loss_override=loss)
    if partitions is None:
        partitions = partitions_for_manifest(manifest, seed)

    ids = manifest.node_ids
    names = {v: k for k, v in ids.items()}
    mean_rtt = topo.mean_rtt_ns()
    t_collect = knobs.t_collect_ns
    if t_collect is None:
        t_collect = 10 * mean_rtt
    stall_ns = knobs.stall_ns
    if stall_ns is None:
        stall_ns = max(1000 * mean_rtt, 5 * t_collect, 10_000_000)

    plain = topo.plain_next_hop()
    hosts: dict[str, HostAgent] = {}
    for h in topo.hosts():
        agent = HostAgent(sim, h, ids[h], ids, names, manifest.master_host,
                          mean_rtt, plain[h])
        hosts[h] = agent
        sim.register(h, agent)

    mapper_host = {m.mapper_id: m.host for m in manifest.mappers}
    flows: dict[int, tuple[str, GroupPlan, str]] = {}
    for g in manifest.groups:
        for mid, flow in zip(g.mappers, g.mapper_flows):
            flows[flow] = (mid, g, mapper_host[mid])

    switch_agents: dict[str, SwitchAgent] = {}
    for s in topo.switches():
        plan = manifest.switches[s]
        role = plan.role if mode != "baseline" else "forwarding-only"
        bound = knobs.bound_b if knobs.bound_b is not None else plan.bound_b
        slots = knobs.num_slots if knobs.num_slots is not None else plan.num_slots
        nhash = knobs.num_hash if knobs.num_hash is not None else plan.num_hash
        if mode == "no-mem":
            bound = slots
        cfg = SwitchConfig(
            name=s, bound_b=bound, num_slots=slots, num_hash=nhash, role=role,
            flow_routes=dict(manifest.routes.get(s, {})),
            plain_routes={ids[d]: nh for d, nh in plain[s].items()},
            drop_on_no_slot=(mode == "no-mem"),
        )
        agent = SwitchAgent(sim, s, ids[s], cfg)
        switch_agents[s] = agent
        sim.register(s, agent)

    for g in manifest.groups:
        agent = switch_agents[g.switch]
        if mode != "baseline":
            for flow in g.mapper_flows:
                agent.cfg.flow_group[flow] = g.group_id
            agent.cfg.flow_group[g.ctrl_flow] = g.group_id
            plan = manifest.switches[g.switch]
            store = RegisterStore(agent.cfg.num_slots, agent.cfg.num_hash)
            rtt = topo.path_rtt_ns(g.switch, g.reducer_host)
            sender = FlowSender(sim, ledger, agent.forward, g.flush_flow, rtt, knobs)
            agent.add_group(g.group_id, store, sender)
        # reducer unit exists in every mode
        rhost = hosts[g.reducer_host]
        rhost.reducer = ReducerUnit(rhost, g, manifest.op, mode,
                                    set(g.mapper_flows))
        # mapper units
        for mid, flow in zip(g.mappers, g.mapper_flows):
            h = hosts[mapper_host[mid]]
            rtt = topo.path_rtt_ns(h.node, g.reducer_host)
            h.mappers[flow] = MapperUnit(h, flow, rtt, knobs, mid, ids[g.reducer_host],
                                         manifest.op, partitions.get(mid, []))
        if mode != "baseline":
            sh = hosts[g.signaler_host]
            rtt = topo.path_rtt_ns(g.signaler_host, g.reducer_host)
            sh.signalers[g.ctrl_flow] = SignalerUnit(
                sh, g.ctrl_flow, rtt, knobs, ids[g.reducer_host], manifest.op,
                t_collect,
            )

    master_host = hosts[manifest.master_host]
    master = MasterUnit(master_host, manifest, mode, flows)
    master_host.master = master

    def watchdog():
        if sim.stopped or master.completed:
            return
        if sim.now - sim.last_progress_ns > stall_ns:
            ledger.status = "stalled"
            sim.stop()
            return
        sim.after(max(stall_ns // 4, 1), watchdog)

    sim.schedule(0, master.start)
    sim.schedule(max(stall_ns // 4, 1), watchdog)
    return sim, master, hosts


def run_job(manifest: Manifest, mode: str = "p4com", seed: int = 1,
            loss: float | None = None, knobs: RunKnobs | None = None,
            partitions: dict[str, list[Record]] | None = None) -> JobResult:
    """Build and execute one job; the returned result carries the final
    tables, the metrics ledger, and completion status."""
    knobs = knobs or RunKnobs()
    sim, master, hosts = build_job(manifest, mode, seed, loss, knobs, partitions)
    sim.ledger.status = "running"
    sim.run(horizon_ns=knobs.horizon_ns)
    if sim.ledger.status == "running":
        sim.ledger.status = "horizon" if knobs.horizon_ns is not None else "stalled"
    tables = {}
    for h, agent in hosts.items():
        if agent.reducer is not None:
            tables[h] = agent.reducer.state.final_table
    mapper_flows = {}
    spans = {}
    for agent in hosts.values():
        for flow, unit in agent.mappers.items():
            mapper_flows[flow] = unit.mapper_id
            spans[flow] = (unit.first_send_ns or 0, unit.last_ack_ns or 0)
    return JobResult(
        status=sim.ledger.status,
        jct_ns=sim.ledger.jct_ns,
        tables=tables,
        ledger=sim.ledger,
        reducer_hosts=sorted(tables),
        mapper_flows=mapper_flows,
        mapper_spans=spans,
    )
