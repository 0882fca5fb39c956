"""End-host reliability: sequence stamping, gap detection, retransmission,
and AIMD rate control with overflow-driven backoff.

Retransmissions reuse the original sequence number so the switch progress
registers can tell a replay from fresh data. The window is Reno-style AIMD:
one packet per fully acked window of additive increase, halving on a loss
event or an overflow notice, never below one packet.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

from .codec import Packet

INITIAL_CWND = 4.0
DEFAULT_MAX_CWND = 1024.0
RTO_RTT_MULTIPLIER = 3


@dataclass
class SenderState:
    flow: int
    rtt_ns: int = 1_000_000
    next_seq: int = 1
    cwnd: float = INITIAL_CWND
    max_cwnd: float = DEFAULT_MAX_CWND
    unacked: dict[int, Packet] = field(default_factory=dict)
    last_tx: dict[int, int] = field(default_factory=dict)
    acked: set[int] = field(default_factory=set)
    acked_floor: int = 0  # seqs <= floor are all acked
    rto_ns: int = 0
    rto_cur_ns: int = 0
    srtt_ns: float | None = None
    rttvar_ns: float = 0.0
    rtx_seqs: set[int] = field(default_factory=set)  # Karn: no samples from these
    recovery_until: int = 0
    backoff_signals: int = 0
    dup_acks: int = 0
    anomalous_acks: int = 0
    retransmits: int = 0

    def __post_init__(self):
        if self.rto_ns == 0:
            self.rto_ns = RTO_RTT_MULTIPLIER * self.rtt_ns
        if self.rto_cur_ns == 0:
            # conservative until the first sample arrives: a synchronized
            # start can queue-delay the very first flight past the floor
            self.rto_cur_ns = 3 * self.rto_ns

    def _rtt_sample(self, sample_ns: int) -> None:
        # RFC 6298 shape; the static 3x-path estimate stays as the floor so
        # queueing delay inflates the timeout instead of firing it.
        if self.srtt_ns is None:
            self.srtt_ns = float(sample_ns)
            self.rttvar_ns = sample_ns / 2.0
        else:
            self.rttvar_ns = 0.75 * self.rttvar_ns + 0.25 * abs(self.srtt_ns - sample_ns)
            self.srtt_ns = 0.875 * self.srtt_ns + 0.125 * sample_ns
        self.rto_ns = max(
            RTO_RTT_MULTIPLIER * self.rtt_ns,
            int(self.srtt_ns + 4.0 * self.rttvar_ns),
        )

    def window_free(self) -> int:
        return max(0, int(self.cwnd) - len(self.unacked))

    def is_acked(self, seq: int) -> bool:
        return seq <= self.acked_floor or seq in self.acked

    def _raise_floor(self) -> None:
        while self.acked_floor + 1 in self.acked:
            self.acked_floor += 1
            self.acked.discard(self.acked_floor)

    def done(self) -> bool:
        return not self.unacked


def stamp_packet(s: SenderState, tmpl: Packet, now: int) -> Packet:
    """Assign the next fresh sequence number to a template and track it."""
    pkt = replace(tmpl, flow=s.flow, seq=s.next_seq)
    pkt.kvs = list(tmpl.kvs)
    s.next_seq += 1
    s.unacked[pkt.seq] = pkt
    s.last_tx[pkt.seq] = now
    return pkt


def send_window(s: SenderState, queue, now: int) -> list[Packet]:
    """Stamp and emit up to cwnd - |unacked| packets from the pending queue.
    `queue` is any sequence supporting popleft() (templates with seq unset)."""
    out = []
    while s.window_free() > 0 and queue:
        out.append(stamp_packet(s, queue.popleft(), now))
    return out


def on_ack(s: SenderState, ack_seq: int, now: int) -> str:
    """Returns 'acked', 'dup', or 'unknown'. Additive increase on fresh ACKs."""
    if s.is_acked(ack_seq):
        s.dup_acks += 1
        return "dup"
    if ack_seq not in s.unacked:
        s.anomalous_acks += 1
        return "unknown"
    if ack_seq not in s.rtx_seqs:
        s._rtt_sample(now - s.last_tx[ack_seq])
    del s.unacked[ack_seq]
    s.last_tx.pop(ack_seq, None)
    s.rtx_seqs.discard(ack_seq)
    s.acked.add(ack_seq)
    s._raise_floor()
    # +1/floor(cwnd) per ACK: exactly one packet per fully acked window
    s.cwnd = min(s.max_cwnd, s.cwnd + 1.0 / max(int(s.cwnd), 1))
    s.rto_cur_ns = s.rto_ns  # timeout backoff resets on forward progress
    return "acked"


def _halve_once(s: SenderState) -> None:
    if s.next_seq > s.recovery_until:
        s.cwnd = max(1.0, s.cwnd / 2.0)
        s.recovery_until = s.next_seq


def detect_and_retransmit(s: SenderState, now: int) -> list[Packet]:
    """Re-send gap packets (an acked successor exists) and rto-expired ones,
    byte-identically. Halves the window at most once per loss event."""
    out = []
    expired = False
    for seq in sorted(s.unacked):
        # one fast retransmit per seq on a gap; after that only the timeout
        gap = s.is_acked(seq + 1) and seq not in s.rtx_seqs
        timeout = now - s.last_tx[seq] >= s.rto_cur_ns
        if gap or timeout:
            out.append(s.unacked[seq])
            s.last_tx[seq] = now
            s.rtx_seqs.add(seq)
            s.retransmits += 1
            expired = expired or timeout
    if out:
        _halve_once(s)
        if expired:
            s.rto_cur_ns = min(s.rto_cur_ns * 2, 64 * s.rto_ns)
    return out


def next_rto_deadline(s: SenderState) -> int | None:
    if not s.unacked:
        return None
    return min(s.last_tx[seq] for seq in s.unacked) + s.rto_cur_ns


def on_overflow_notice(s: SenderState) -> None:
    """Switch memory overflowed downstream: halve the sending rate."""
    s.cwnd = max(1.0, s.cwnd / 2.0)
    s.backoff_signals += 1


@dataclass
class ReceiverState:
    """Per-flow receive tracking: highest contiguous seq plus the set of
    out-of-order seqs already seen (end hosts can absorb reordering)."""

    contiguous: int = 0
    out_of_order: set[int] = field(default_factory=set)

    def is_new(self, seq: int) -> bool:
        return seq > self.contiguous and seq not in self.out_of_order

    def record(self, seq: int) -> bool:
        """Mark seq as received; returns True when it was fresh."""
        if not self.is_new(seq):
            return False
        self.out_of_order.add(seq)
        while self.contiguous + 1 in self.out_of_order:
            self.contiguous += 1
            self.out_of_order.discard(self.contiguous)
        return True

    def complete_through(self, final_seq: int) -> bool:
        return self.contiguous >= final_seq
