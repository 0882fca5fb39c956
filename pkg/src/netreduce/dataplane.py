"""Switch pipeline emulation: parse, aggregate into registers, flush, dedup.

The pipeline is single threaded per switch instance; process_packet models one
atomic pass through the hardware pipeline. Register slots are probed with d
seeded hash functions, first match or first free slot wins, and there is no
eviction (a stateful ALU cannot relocate entries mid-pipeline). Pairs whose
probe slots are all taken fall back to an unaggregated pass-through packet so
no data is ever silently dropped.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .codec import (
    DATA,
    FLUSH,
    KeyValue,
    MAX_PAIRS,
    OP_ADD,
    OP_MAX,
    OP_MIN,
    Packet,
    REASON_OVERFLOW,
    header_copy,
    make_ack,
)

# merge_pair outcomes
UPDATED = "updated"
INSERTED = "inserted"
NO_SLOT = "no-slot"

# pipeline verdicts
AGGREGATED = "aggregated"
FLUSHED = "flushed"
DUPLICATE_DROPPED = "duplicate-dropped"
PASSED_THROUGH = "passed-through"
ACKED = "acked"
OOO_DROPPED = "ooo-dropped"


def combine32(op: int, a: int, b: int) -> int:
    """Merge two values the way a 32-bit ALU would: ADD wraps, MAX/MIN signed."""
    if op == OP_ADD:
        s = (a + b) & 0xFFFFFFFF
        return s - 2**32 if s >= 2**31 else s
    if op == OP_MAX:
        return a if a >= b else b
    if op == OP_MIN:
        return a if a <= b else b
    raise ValueError(f"unknown opcode {op}")


@dataclass
class SwitchConfig:
    name: str
    bound_b: int
    num_slots: int
    num_hash: int = 2
    role: str = "aggregating"  # or "forwarding-only"
    flow_routes: dict[tuple[int, int], str] = field(default_factory=dict)
    plain_routes: dict[int, str] = field(default_factory=dict)
    flow_group: dict[int, str] = field(default_factory=dict)
    drop_on_no_slot: bool = False  # no-memory-management comparison mode

    def __post_init__(self):
        if self.bound_b > self.num_slots:
            raise ValueError("flush bound exceeds slot count")
        if self.num_hash < 1:
            raise ValueError("need at least one hash function")

    def out_port(self, flow: int, dst: int) -> str | None:
        port = self.flow_routes.get((flow, dst))
        if port is None:
            port = self.plain_routes.get(dst)
        return port


class RegisterStore:
    """Stateful switch memory for one reducer group: slot array plus the
    per-flow progress registers used for duplicate suppression."""

    def __init__(self, num_slots: int, num_hash: int = 2, hash_seeds=None):
        self.num_slots = num_slots
        self.slots: list[tuple[bytes, int] | None] = [None] * num_slots
        self.kv_size = 0
        self.m_states: dict[int, int] = {}
        if hash_seeds is None:
            hash_seeds = tuple(range(1, num_hash + 1))
        if len(hash_seeds) != num_hash:
            raise ValueError("seed count must equal hash count")
        self.hash_seeds = tuple(hash_seeds)
        self._probe_cache: dict[bytes, tuple[int, ...]] = {}

    def probe_slots(self, key: bytes) -> tuple[int, ...]:
        slots = self._probe_cache.get(key)
        if slots is None:
            slots = tuple(
                int.from_bytes(
                    hashlib.blake2b(
                        key, digest_size=8, salt=seed.to_bytes(8, "big")
                    ).digest(),
                    "big",
                )
                % self.num_slots
                for seed in self.hash_seeds
            )
            if len(self._probe_cache) < 1_000_000:
                self._probe_cache[key] = slots
        return slots

    def occupied_pairs(self) -> list[KeyValue]:
        """All stored pairs in slot order (the order a drain walks memory)."""
        return [KeyValue(k, v) for s in self.slots if s is not None for k, v in [s]]

    def clear_slots(self) -> None:
        for i in range(self.num_slots):
            self.slots[i] = None
        self.kv_size = 0

    def expected_seq(self, flow: int) -> int:
        return self.m_states.get(flow, 0)


def merge_pair(store: RegisterStore, op: int, kv: KeyValue) -> str:
    """Probe the hashed slots; combine on key hit, claim first free otherwise."""
    positions = store.probe_slots(kv.key)
    free = -1
    for pos in positions:
        slot = store.slots[pos]
        if slot is None:
            if free < 0:
                free = pos
        elif slot[0] == kv.key:
            store.slots[pos] = (kv.key, combine32(op, slot[1], kv.value))
            return UPDATED
    if free >= 0:
        store.slots[free] = (kv.key, kv.value)
        store.kv_size += 1
        return INSERTED
    return NO_SLOT


@dataclass
class PipelineOutcome:
    emitted: list[tuple[str | None, Packet]] = field(default_factory=list)
    store_delta: list[tuple] = field(default_factory=list)
    verdict: str = PASSED_THROUGH
    flush_events: list[int] = field(default_factory=list)  # trigger reasons
    fallback_pairs: int = 0
    dropped_pairs: int = 0

    @property
    def flushed_reason(self) -> int | None:
        return self.flush_events[-1] if self.flush_events else None


def build_flush_packets(
    store: RegisterStore, template: Packet, reason: int
) -> list[Packet]:
    """Split the current store contents into MTU-sized flush packets and
    clear the registers. An empty store still yields one empty packet.

    Tagging convention: an overflow marks only the first packet of the batch
    (one rate-backoff report per event downstream); a drain marks only the
    last (its receipt plus sequence contiguity proves the drain is complete).
    """
    pairs = store.occupied_pairs()
    packets = []
    chunks = [pairs[i : i + MAX_PAIRS] for i in range(0, len(pairs), MAX_PAIRS)] or [[]]
    for chunk in chunks:
        packets.append(
            Packet(
                src=template.src,
                dst=template.dst,
                flow=template.flow,
                seq=0,  # stamped by the switch's flush sender
                flags=FLUSH,
                op=template.op,
                kvs=list(chunk),
                tag=0,
            )
        )
    if reason == REASON_OVERFLOW:
        packets[0].tag = REASON_OVERFLOW
    elif reason:
        packets[-1].tag = reason
    store.clear_slots()
    return packets


def process_packet(
    cfg: SwitchConfig,
    store: RegisterStore | None,
    pkt: Packet,
    in_port: str,
) -> PipelineOutcome:
    """One pipeline pass. `store` is the register block for the packet's
    reducer group, or None when this switch does not aggregate the flow
    (plain traffic, foreign flows, forwarding-only role)."""
    out = PipelineOutcome()

    if not pkt.flags.cpa:
        port = cfg.out_port(pkt.flow, pkt.dst)
        out.emitted.append((port, pkt))
        out.verdict = PASSED_THROUGH
        return out

    if pkt.flags.cpk:
        port = cfg.out_port(pkt.flow, pkt.dst)
        out.emitted.append((port, pkt))
        out.verdict = ACKED
        return out

    if store is None or cfg.role != "aggregating":
        port = cfg.out_port(pkt.flow, pkt.dst)
        out.emitted.append((port, pkt))
        out.verdict = PASSED_THROUGH
        return out

    # Data packet for a group this switch aggregates: progress check first.
    expected = store.expected_seq(pkt.flow) + 1
    if pkt.seq < expected:
        # Already processed once; re-ACK so a sender missing the first ACK
        # can still make progress, but touch no register state.
        out.emitted.append((None, make_ack(pkt)))
        out.verdict = DUPLICATE_DROPPED
        return out
    if pkt.seq > expected:
        # A single progress register cannot represent holes, so packets
        # ahead of the expected sequence are rejected unacknowledged and
        # the sender's retransmission brings them back in order.
        out.verdict = OOO_DROPPED
        return out

    store.m_states[pkt.flow] = pkt.seq
    out.emitted.append((None, header_copy(pkt)))
    out.emitted.append((None, make_ack(pkt)))

    overflow = False
    fallback: list[KeyValue] = []
    if not pkt.flags.cpd:
        for kv in pkt.kvs:
            res = merge_pair(store, pkt.op, kv)
            out.store_delta.append((res, kv.key, kv.value))
            if res == NO_SLOT:
                if cfg.drop_on_no_slot:
                    out.dropped_pairs += 1
                else:
                    fallback.append(kv)
            elif res == INSERTED and store.kv_size > cfg.bound_b:
                overflow = True
                flushed = build_flush_packets(store, pkt, REASON_OVERFLOW)
                out.store_delta.append(("flush", sum(len(f.kvs) for f in flushed)))
                out.flush_events.append(REASON_OVERFLOW)
                for fp in flushed:
                    out.emitted.append(("flush", fp))
        out.verdict = FLUSHED if overflow else AGGREGATED
    else:
        flushed = build_flush_packets(store, pkt, pkt.tag)
        out.store_delta.append(("flush", sum(len(f.kvs) for f in flushed)))
        out.flush_events.append(pkt.tag)
        for fp in flushed:
            out.emitted.append(("flush", fp))
        out.verdict = FLUSHED

    if fallback:
        out.fallback_pairs = len(fallback)
        for i in range(0, len(fallback), MAX_PAIRS):
            chunk = fallback[i : i + MAX_PAIRS]
            out.emitted.append(
                (
                    "flush",
                    Packet(
                        src=pkt.src,
                        dst=pkt.dst,
                        flow=pkt.flow,
                        seq=0,
                        flags=DATA,
                        op=pkt.op,
                        kvs=chunk,
                    ),
                )
            )
    return out


def handle_collection_signal(
    cfg: SwitchConfig, store: RegisterStore, pkt: Packet, in_port: str = ""
) -> PipelineOutcome:
    """Empty-payload CPD packet: dump the store toward the destination."""
    assert pkt.flags.cpa and pkt.flags.cpd and pkt.kv_count == 0
    return process_packet(cfg, store, pkt, in_port)
