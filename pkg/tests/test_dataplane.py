import copy
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netreduce.codec import (
    DATA,
    FLUSH,
    KeyValue,
    Packet,
    REASON_DRAIN,
    REASON_OVERFLOW,
    pad_key,
)
from netreduce.dataplane import (
    AGGREGATED,
    DUPLICATE_DROPPED,
    FLUSHED,
    INSERTED,
    NO_SLOT,
    OOO_DROPPED,
    PASSED_THROUGH,
    RegisterStore,
    SwitchConfig,
    UPDATED,
    combine32,
    merge_pair,
    process_packet,
)

import oracle


def cfg(bound=8, slots=64, **kw):
    return SwitchConfig(name="s1", bound_b=bound, num_slots=slots,
                        plain_routes={1: "h1", 2: "h2"}, **kw)


def store_for(c: SwitchConfig) -> RegisterStore:
    return RegisterStore(c.num_slots, c.num_hash)


def data_pkt(seq, kvs, flow=5, op=0, src=1, dst=2):
    return Packet(src=src, dst=dst, flow=flow, seq=seq, flags=DATA, op=op,
                  kvs=[KeyValue(pad_key(k), v) for k, v in kvs])


def signal_pkt(seq, flow=5, tag=0, src=1, dst=2):
    return Packet(src=src, dst=dst, flow=flow, seq=seq, flags=FLUSH, op=0, tag=tag)


def stored(store):
    return {k: v for slot in store.slots if slot for k, v in [slot]}


class TestCombine32:
    def test_add_wraps(self):
        assert combine32(0, 0x7FFFFFFF, 1) == -(2**31)

    def test_add_wrap_matches_oracle(self):
        rng = random.Random(3)
        for _ in range(500):
            a = rng.randrange(-(2**31), 2**31)
            b = rng.randrange(-(2**31), 2**31)
            assert combine32(0, a, b) == oracle.wrap_add32(a, b)

    def test_max_min_signed(self):
        assert combine32(1, 5, 3) == 5
        assert combine32(2, 5, 3) == 3
        assert combine32(1, -1, -7) == -1
        assert combine32(2, -1, -7) == -7


class TestMergePair:
    def test_insert_into_empty_store_uses_first_probe(self):
        c = cfg()
        s = store_for(c)
        kv = KeyValue(pad_key(b"alice"), 2)
        assert merge_pair(s, 0, kv) == INSERTED
        assert s.kv_size == 1
        assert s.slots[s.probe_slots(kv.key)[0]] == (kv.key, 2)

    def test_update_combines_under_op(self):
        c = cfg()
        s = store_for(c)
        kv = KeyValue(pad_key(b"x"), 5)
        merge_pair(s, 0, kv)
        assert merge_pair(s, 1, KeyValue(kv.key, 3)) == UPDATED
        assert stored(s)[kv.key] == 5  # MAX(5, 3)
        assert merge_pair(s, 2, KeyValue(kv.key, 3)) == UPDATED
        assert stored(s)[kv.key] == 3  # MIN(5, 3)
        assert s.kv_size == 1

    def test_no_slot_on_saturated_probes(self):
        # Brute-force an adversarial key whose probe slots are both taken.
        c = cfg(slots=8)
        s = store_for(c)
        filled = set()
        i = 0
        while s.kv_size < 8:
            merge_pair(s, 0, KeyValue(pad_key(str(i).encode()), 1))
            i += 1
        victim = None
        for j in range(i, i + 10_000):
            key = pad_key(str(j).encode())
            if all(s.slots[p] is not None for p in s.probe_slots(key)):
                victim = key
                break
        assert victim is not None
        assert merge_pair(s, 0, KeyValue(victim, 1)) == NO_SLOT
        assert s.kv_size == 8


class TestProcessPacket:
    def test_fresh_data_aggregates_and_emits_header_and_ack(self):
        c = cfg()
        s = store_for(c)
        out = process_packet(c, s, data_pkt(1, [(b"alice", 2)]), "h1")
        assert out.verdict == AGGREGATED
        assert stored(s) == {pad_key(b"alice"): 2}
        assert s.kv_size == 1
        assert s.m_states[5] == 1
        header, ack = out.emitted[0][1], out.emitted[1][1]
        assert header.kv_count == 0 and header.dst == 2 and header.seq == 1
        assert ack.flags.cpk and (ack.src, ack.dst) == (2, 1) and ack.seq == 1

    def test_existing_key_updates_value(self):
        c = cfg()
        s = store_for(c)
        process_packet(c, s, data_pkt(1, [(b"alice", 2)]), "h1")
        out = process_packet(c, s, data_pkt(2, [(b"alice", 3)]), "h1")
        assert out.verdict == AGGREGATED
        assert stored(s) == {pad_key(b"alice"): 5}
        assert s.kv_size == 1

    def test_replay_is_dropped_without_mutation(self):
        c = cfg()
        s = store_for(c)
        process_packet(c, s, data_pkt(1, [(b"alice", 2)]), "h1")
        process_packet(c, s, data_pkt(2, [(b"alice", 3)]), "h1")
        before = (copy.deepcopy(s.slots), s.kv_size, dict(s.m_states))
        out = process_packet(c, s, data_pkt(2, [(b"alice", 3)]), "h1")
        assert out.verdict == DUPLICATE_DROPPED
        assert out.store_delta == []
        assert (s.slots, s.kv_size, s.m_states) == before
        # the replay is still acknowledged so a sender missing the first
        # ACK can advance
        assert len(out.emitted) == 1 and out.emitted[0][1].flags.cpk

    def test_ahead_of_sequence_is_rejected_unacked(self):
        c = cfg()
        s = store_for(c)
        process_packet(c, s, data_pkt(1, [(b"a", 1)]), "h1")
        out = process_packet(c, s, data_pkt(3, [(b"b", 1)]), "h1")
        assert out.verdict == OOO_DROPPED
        assert out.emitted == [] and out.store_delta == []
        assert stored(s) == {pad_key(b"a"): 1}

    def test_overflow_flushes_everything_and_empties(self):
        c = cfg(bound=1, slots=64)
        s = store_for(c)
        out = process_packet(c, s, data_pkt(1, [(b"a", 1), (b"b", 2)]), "h1")
        assert out.verdict == FLUSHED
        assert out.flush_events == [REASON_OVERFLOW]
        flushes = [p for port, p in out.emitted if port == "flush"]
        pairs = {kv.key: kv.value for f in flushes for kv in f.kvs}
        assert pairs == {pad_key(b"a"): 1, pad_key(b"b"): 2}
        assert s.kv_size == 0 and stored(s) == {}
        assert flushes[0].tag == REASON_OVERFLOW

    def test_order_statistics(self):
        c = cfg()
        s = store_for(c)
        process_packet(c, s, data_pkt(1, [(b"x", 5)], op=1), "h1")
        process_packet(c, s, data_pkt(2, [(b"x", 3)], op=1), "h1")
        assert stored(s)[pad_key(b"x")] == 5
        s2 = store_for(c)
        process_packet(c, s2, data_pkt(1, [(b"x", 5)], op=2), "h1")
        process_packet(c, s2, data_pkt(2, [(b"x", 3)], op=2), "h1")
        assert stored(s2)[pad_key(b"x")] == 3

    def test_plain_packet_forwards_unmodified(self):
        c = cfg()
        s = store_for(c)
        pkt = Packet(src=1, dst=2, flow=0, seq=1)
        out = process_packet(c, s, pkt, "h1")
        assert out.verdict == PASSED_THROUGH
        assert out.emitted == [("h2", pkt)]

    def test_foreign_flow_passes_through_aggregating_switch(self):
        c = cfg()
        out = process_packet(c, None, data_pkt(1, [(b"a", 1)]), "h1")
        assert out.verdict == PASSED_THROUGH

    def test_forwarding_only_role_never_aggregates(self):
        c = cfg(role="forwarding-only")
        s = store_for(c)
        out = process_packet(c, s, data_pkt(1, [(b"a", 1)]), "h1")
        assert out.verdict == PASSED_THROUGH
        assert s.kv_size == 0

    def test_ack_forwarded_toward_mapper(self):
        c = cfg()
        ack = Packet(src=2, dst=1, flow=5, seq=1,
                     flags=__import__("netreduce.codec", fromlist=["ACK"]).ACK, op=0)
        out = process_packet(c, store_for(c), ack, "h2")
        assert out.verdict == "acked"
        assert out.emitted == [("h1", ack)]


class TestCollectionSignal:
    def test_signal_flushes_store(self):
        c = cfg()
        s = store_for(c)
        process_packet(c, s, data_pkt(1, [(b"a", 1), (b"b", 2)]), "h1")
        out = process_packet(c, s, signal_pkt(2), "h1")
        assert out.verdict == FLUSHED
        flushes = [p for port, p in out.emitted if port == "flush"]
        assert len(flushes) == 1 and flushes[0].kv_count == 2
        assert s.kv_size == 0

    def test_empty_store_emits_empty_flush(self):
        c = cfg()
        s = store_for(c)
        out = process_packet(c, s, signal_pkt(1), "h1")
        flushes = [p for port, p in out.emitted if port == "flush"]
        assert len(flushes) == 1 and flushes[0].kv_count == 0

    def test_flush_splits_at_twenty_pairs(self):
        c = cfg(bound=64, slots=256)
        s = store_for(c)
        seq = 0
        for i in range(0, 45, 15):
            seq += 1
            process_packet(
                c, s, data_pkt(seq, [(f"k{j}".encode(), j) for j in range(i, i + 15)]),
                "h1",
            )
        assert s.kv_size == 45
        out = process_packet(c, s, signal_pkt(seq + 1), "h1")
        flushes = [p for port, p in out.emitted if port == "flush"]
        assert len(flushes) == math.ceil(45 / 20) == 3
        assert [f.kv_count for f in flushes] == [20, 20, 5]

    def test_drain_reason_marks_last_packet_only(self):
        c = cfg(bound=64, slots=256)
        s = store_for(c)
        process_packet(
            c, s, data_pkt(1, [(f"k{j}".encode(), j) for j in range(20)]), "h1"
        )
        process_packet(
            c, s, data_pkt(2, [(f"q{j}".encode(), j) for j in range(5)]), "h1"
        )
        out = process_packet(c, s, signal_pkt(3, tag=REASON_DRAIN), "h1")
        flushes = [p for port, p in out.emitted if port == "flush"]
        assert [f.tag for f in flushes] == [0, REASON_DRAIN]


class TestFallback:
    def test_saturated_store_falls_back_to_passthrough(self):
        c = cfg(bound=4, slots=4)
        s = store_for(c)
        # fill all four slots, then find keys that cannot be placed
        i, seq = 0, 0
        while s.kv_size < 4:
            seq += 1
            process_packet(c, s, data_pkt(seq, [(str(i).encode(), 1)]), "h1")
            i += 1
        blocked = []
        j = i
        while len(blocked) < 3:
            key = pad_key(str(j).encode())
            if all(s.slots[p] is not None for p in s.probe_slots(key)):
                blocked.append(str(j).encode())
            j += 1
        seq += 1
        out = process_packet(c, s, data_pkt(seq, [(b, 7) for b in blocked]), "h1")
        assert out.fallback_pairs == 3
        fb = [p for port, p in out.emitted if port == "flush" and not p.flags.cpd]
        assert len(fb) == 1
        assert {kv.key for kv in fb[0].kvs} == {pad_key(b) for b in blocked}
        assert not fb[0].flags.cpd and fb[0].kv_count == 3

    def test_free_probe_slot_never_falls_back(self):
        c = cfg()
        s = store_for(c)
        out = process_packet(c, s, data_pkt(1, [(b"fresh", 1)]), "h1")
        assert out.fallback_pairs == 0

    def test_drop_mode_counts_drops(self):
        c = cfg(bound=4, slots=4, drop_on_no_slot=True)
        s = store_for(c)
        seq, i = 0, 0
        while s.kv_size < 4:
            seq += 1
            process_packet(c, s, data_pkt(seq, [(str(i).encode(), 1)]), "h1")
            i += 1
        j = i
        while True:
            key = pad_key(str(j).encode())
            if all(s.slots[p] is not None for p in s.probe_slots(key)):
                break
            j += 1
        out = process_packet(c, s, data_pkt(seq + 1, [(str(j).encode(), 1)]), "h1")
        assert out.dropped_pairs == 1 and out.fallback_pairs == 0


class TestInvariants:
    def test_memory_bound_after_every_call(self):
        c = cfg(bound=5, slots=32)
        s = store_for(c)
        rng = random.Random(11)
        for seq in range(1, 80):
            kvs = [(f"k{rng.randrange(40)}".encode(), rng.randrange(100))
                   for _ in range(rng.randrange(1, 6))]
            process_packet(c, s, data_pkt(seq, kvs), "h1")
            assert s.kv_size <= c.bound_b
            occupied = sum(1 for slot in s.slots if slot is not None)
            assert occupied == s.kv_size

    @given(st.data())
    @settings(max_examples=60, deadline=None)
    def test_conservation_against_oracle(self, data):
        """Store + flushes + fallback pass-throughs always add up to the
        single-machine aggregate, under replays and an arbitrary op."""
        op = data.draw(st.integers(0, 2))
        c = cfg(bound=data.draw(st.integers(1, 6)), slots=16)
        s = store_for(c)
        n_pkts = data.draw(st.integers(1, 12))
        keyspace = [f"k{i}".encode() for i in range(8)]
        packets = []
        for seq in range(1, n_pkts + 1):
            kvs = data.draw(
                st.lists(
                    st.tuples(st.sampled_from(keyspace),
                              st.integers(-(2**31), 2**31 - 1)),
                    min_size=1, max_size=4,
                )
            )
            packets.append(data_pkt(seq, kvs))
        delivered = []
        schedule = []
        for p in packets:
            schedule.append(p)
            if data.draw(st.booleans()):
                schedule.append(p)  # immediate replay
        for p in schedule:
            out = process_packet(c, s, p, "h1")
            for port, ep in out.emitted:
                if port == "flush":
                    delivered.extend(ep.kvs)
        out = process_packet(c, s, signal_pkt(n_pkts + 1, tag=REASON_DRAIN), "h1")
        for port, ep in out.emitted:
            if port == "flush":
                delivered.extend(ep.kvs)
        assert s.kv_size == 0
        got = oracle.aggregate(((kv.key, kv.value) for kv in delivered), op)
        want = oracle.aggregate(
            ((kv.key, kv.value) for p in packets for kv in p.kvs), op
        )
        assert got == want

    def test_flush_empties_store_completely(self):
        c = cfg(bound=2, slots=16)
        s = store_for(c)
        process_packet(c, s, data_pkt(1, [(b"a", 1), (b"b", 2), (b"c", 3)]), "h1")
        assert s.kv_size <= 2
        process_packet(c, s, signal_pkt(2), "h1")
        assert s.kv_size == 0
        assert all(slot is None for slot in s.slots)

    def test_m_states_nondecreasing(self):
        c = cfg()
        s = store_for(c)
        seen = [0]
        for seq in (1, 2, 2, 1, 3, 5, 4):
            process_packet(c, s, data_pkt(seq, [(b"k", 1)]), "h1")
            seen.append(s.m_states.get(5, 0))
        assert seen == sorted(seen)
