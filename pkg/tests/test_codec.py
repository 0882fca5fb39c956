import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netreduce.codec import (
    ACK,
    DATA,
    FLUSH,
    HEADER_BYTES,
    MTU,
    PLAIN,
    CpFlags,
    InvariantViolation,
    KeyTooLong,
    KeyValue,
    Malformed,
    Packet,
    decode,
    encode,
    make_ack,
    pad_key,
)

VECTORS = Path(__file__).parent / "vectors"


def load_vector(name: str) -> bytes:
    return bytes.fromhex(VECTORS.joinpath(f"{name}.hex").read_text().replace("\n", ""))


def make_packet(rng: random.Random) -> Packet:
    flags = rng.choice([PLAIN, DATA, ACK, FLUSH])
    kvs = []
    op = None
    if flags.cpa:
        op = rng.randrange(0, 3)
        for _ in range(rng.randrange(0, 21)):
            klen = rng.randrange(1, 65)
            key = bytes(rng.randrange(0, 256) for _ in range(klen - 1)) + b"x"
            kvs.append(KeyValue(pad_key(key), rng.randrange(-(2**31), 2**31)))
    return Packet(
        src=rng.randrange(2**32), dst=rng.randrange(2**32),
        flow=rng.randrange(2**32), seq=rng.randrange(2**32),
        flags=flags, op=op, kvs=kvs, tag=rng.randrange(256),
        aux=bytes(rng.randrange(0, 256) for _ in range(36)),
    )


def test_signal_packet_is_56_octets():
    p = Packet(src=1, dst=2, flow=3, seq=4, flags=FLUSH, op=0)
    assert len(encode(p)) == 56


def test_full_data_packet_fits_mtu():
    kvs = [KeyValue(pad_key(f"k{i}".encode()), i) for i in range(20)]
    p = Packet(src=1, dst=2, flow=3, seq=4, flags=DATA, op=0, kvs=kvs)
    blob = encode(p)
    assert len(blob) == 56 + 1360 == 1416
    assert len(blob) <= MTU


def test_plain_packet_is_header_only():
    p = Packet(src=1, dst=2, flow=0, seq=1)
    assert len(encode(p)) == HEADER_BYTES


@pytest.mark.parametrize("seed", range(5))
def test_round_trip_random(seed):
    rng = random.Random(seed)
    for _ in range(200):
        p = make_packet(rng)
        assert decode(encode(p)) == p


@given(st.data())
@settings(max_examples=300, deadline=None)
def test_round_trip_property(data):
    flags = data.draw(st.sampled_from([PLAIN, DATA, ACK, FLUSH]))
    kvs = []
    op = None
    if flags.cpa:
        op = data.draw(st.integers(0, 2))
        kvs = [
            KeyValue(pad_key(k), v)
            for k, v in data.draw(
                st.lists(
                    st.tuples(st.binary(min_size=1, max_size=64),
                              st.integers(-(2**31), 2**31 - 1)),
                    max_size=20,
                )
            )
        ]
    p = Packet(
        src=data.draw(st.integers(0, 2**32 - 1)),
        dst=data.draw(st.integers(0, 2**32 - 1)),
        flow=data.draw(st.integers(0, 2**32 - 1)),
        seq=data.draw(st.integers(0, 2**32 - 1)),
        flags=flags, op=op, kvs=kvs,
        tag=data.draw(st.integers(0, 255)),
        aux=data.draw(st.binary(min_size=36, max_size=36)),
    )
    assert decode(encode(p)) == p


def test_size_law():
    rng = random.Random(99)
    for _ in range(300):
        p = make_packet(rng)
        blob = encode(p)
        expect = 54 + (2 + 68 * p.kv_count if p.flags.cpa else 0)
        assert len(blob) == expect == p.size()
        assert len(blob) <= MTU


def test_encode_deterministic():
    rng = random.Random(5)
    p = make_packet(rng)
    assert encode(p) == encode(p)


def test_golden_signal_vector():
    p = decode(load_vector("signal"))
    assert (p.src, p.dst, p.flow, p.seq) == (1, 2, 3, 4)
    assert p.flags == FLUSH and p.op == 0 and p.kv_count == 0
    assert encode(p) == load_vector("signal")


def test_golden_data_vector():
    p = decode(load_vector("data1"))
    assert (p.src, p.dst, p.flow, p.seq) == (10, 11, 12, 13)
    assert p.flags == DATA and p.op == 1
    assert p.kvs == [KeyValue(pad_key(b"alice"), -2)]
    assert encode(p) == load_vector("data1")


def test_golden_plain_vector():
    p = decode(load_vector("plain"))
    assert (p.src, p.dst, p.flow, p.seq) == (7, 8, 0, 9)
    assert p.flags == PLAIN and p.op is None and p.kvs == []
    assert p.tag == 2
    assert p.aux[:8] == (1).to_bytes(4, "big") + (15).to_bytes(4, "big")
    assert encode(p) == load_vector("plain")


def test_golden_ack_vector():
    p = decode(load_vector("ack"))
    assert p.flags == ACK and (p.src, p.dst) == (2, 1)
    assert encode(p) == load_vector("ack")


def test_decode_truncated_header():
    with pytest.raises(Malformed) as e:
        decode(b"\x00" * 10)
    assert e.value.reason == "truncated-header"


def test_decode_bad_opcode():
    blob = bytearray(load_vector("signal"))
    blob[54] = 7
    with pytest.raises(Malformed) as e:
        decode(bytes(blob))
    assert e.value.reason == "bad-opcode"


def test_decode_count_length_mismatch():
    blob = bytearray(load_vector("data1"))
    blob[55] = 2  # claims two pairs, carries one
    with pytest.raises(Malformed) as e:
        decode(bytes(blob))
    assert e.value.reason == "count-length-mismatch"


def test_decode_inconsistent_flags():
    blob = bytearray(load_vector("signal"))
    for bad in (0b110, 0b111, 0b010, 0b100, 0b1001):
        blob[16] = bad
        with pytest.raises(Malformed) as e:
            decode(bytes(blob))
        assert e.value.reason == "inconsistent-flags"


def test_decode_plain_with_trailing_bytes():
    with pytest.raises(Malformed):
        decode(load_vector("plain") + b"\x00")


def test_encode_rejects_too_many_pairs():
    kvs = [KeyValue(pad_key(f"k{i}".encode()), i) for i in range(21)]
    p = Packet(src=1, dst=2, flow=3, seq=4, flags=DATA, op=0, kvs=kvs)
    with pytest.raises(InvariantViolation):
        encode(p)


def test_encode_rejects_inconsistent_flags():
    with pytest.raises(InvariantViolation):
        CpFlags(cpa=False, cpk=True).validate()
    with pytest.raises(InvariantViolation):
        CpFlags(cpa=True, cpk=True, cpd=True).validate()
    p = Packet(src=1, dst=2, flow=3, seq=4, flags=CpFlags(cpa=False, cpd=True))
    with pytest.raises(InvariantViolation):
        encode(p)


def test_encode_rejects_plain_with_payload():
    p = Packet(src=1, dst=2, flow=3, seq=4, flags=PLAIN, op=0)
    with pytest.raises(InvariantViolation):
        encode(p)


def test_pad_key_boundary():
    assert pad_key(b"a" * 64) == b"a" * 64
    assert pad_key(b"ab") == b"ab" + b"\x00" * 62
    with pytest.raises(KeyTooLong):
        pad_key(b"a" * 65)


def test_value_range_checked():
    p = Packet(src=1, dst=2, flow=3, seq=4, flags=DATA, op=0,
               kvs=[KeyValue(pad_key(b"k"), 2**31)])
    with pytest.raises(InvariantViolation):
        encode(p)


def test_make_ack_swaps_endpoints():
    p = Packet(src=5, dst=9, flow=3, seq=77, flags=DATA, op=2,
               kvs=[KeyValue(pad_key(b"k"), 1)])
    a = make_ack(p)
    assert (a.src, a.dst) == (9, 5)
    assert (a.flow, a.seq) == (3, 77)
    assert a.flags == ACK and a.kv_count == 0
