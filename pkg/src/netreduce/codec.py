"""Wire format for aggregation traffic.

Every simulated packet is a fixed 54-octet header optionally followed by an
aggregation section (one opcode octet, one count octet, then 68-octet
key-value pairs).  The header layout stands in for the real L2+L3+L4+CP
stack so that byte accounting is exact:

    offset  0   src      u32 big-endian node id
    offset  4   dst      u32 node id
    offset  8   flow     u32 flow id (sender identity)
    offset 12   seq      u32 sequence number
    offset 16   flags    u8  bit0=CPA bit1=CPK bit2=CPD
    offset 17   tag      u8  flush reason / control opcode
    offset 18   aux      36 octets, control payload area (zero if unused)
    offset 54   op       u8  (only when CPA set)
    offset 55   count    u8  number of pairs
    offset 56   pairs    count * (64-octet key + 4-octet signed value)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

MTU = 1500
HEADER_BYTES = 54
KEY_BYTES = 64
VALUE_BYTES = 4
PAIR_BYTES = KEY_BYTES + VALUE_BYTES
MAX_PAIRS = 20
AUX_BYTES = 36

OP_ADD = 0
OP_MAX = 1
OP_MIN = 2
OP_NAMES = {OP_ADD: "ADD", OP_MAX: "MAX", OP_MIN: "MIN"}
OP_CODES = {v: k for k, v in OP_NAMES.items()}

# tag values on CPD (flush) packets
REASON_SIGNAL = 0
REASON_OVERFLOW = 1
REASON_DRAIN = 2

_ZERO_AUX = b"\x00" * AUX_BYTES
_HDR = struct.Struct(">IIII BB 36s")


class CodecError(Exception):
    pass


class InvariantViolation(CodecError):
    """Packet fields violate a structural constraint; refuses to encode."""


class Malformed(CodecError):
    """Byte string is not a valid encoding."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class KeyTooLong(CodecError):
    pass


def pad_key(key: bytes) -> bytes:
    """Right-pad a key to the fixed wire width. Raises KeyTooLong past 64."""
    if len(key) > KEY_BYTES:
        raise KeyTooLong(f"key is {len(key)} octets, max {KEY_BYTES}")
    return key.ljust(KEY_BYTES, b"\x00")


def shown_key(key: bytes) -> str:
    """Printable form of a padded key (trailing NULs stripped)."""
    return key.rstrip(b"\x00").decode("utf-8", errors="backslashreplace")


@dataclass(frozen=True)
class CpFlags:
    cpa: bool = False
    cpk: bool = False
    cpd: bool = False

    def validate(self) -> None:
        if (self.cpk or self.cpd) and not self.cpa:
            raise InvariantViolation("CPK/CPD require CPA")
        if self.cpk and self.cpd:
            raise InvariantViolation("CPK and CPD are mutually exclusive")

    def to_octet(self) -> int:
        return (1 if self.cpa else 0) | (2 if self.cpk else 0) | (4 if self.cpd else 0)

    @staticmethod
    def from_octet(octet: int) -> "CpFlags":
        if octet & ~0b111:
            raise Malformed("inconsistent-flags")
        f = CpFlags(cpa=bool(octet & 1), cpk=bool(octet & 2), cpd=bool(octet & 4))
        try:
            f.validate()
        except InvariantViolation:
            raise Malformed("inconsistent-flags") from None
        return f


PLAIN = CpFlags()
DATA = CpFlags(cpa=True)
ACK = CpFlags(cpa=True, cpk=True)
FLUSH = CpFlags(cpa=True, cpd=True)


@dataclass(frozen=True)
class KeyValue:
    key: bytes  # exactly 64 octets
    value: int  # signed 32-bit

    @staticmethod
    def of(key: bytes, value: int) -> "KeyValue":
        return KeyValue(pad_key(key), value)


@dataclass
class Packet:
    src: int
    dst: int
    flow: int
    seq: int
    flags: CpFlags = PLAIN
    op: int | None = None  # present iff flags.cpa
    kvs: list[KeyValue] = field(default_factory=list)
    tag: int = 0
    aux: bytes = _ZERO_AUX

    @property
    def kv_count(self) -> int:
        return len(self.kvs)

    def validate(self) -> None:
        self.flags.validate()
        for name in ("src", "dst", "flow", "seq"):
            v = getattr(self, name)
            if not 0 <= v < 2**32:
                raise InvariantViolation(f"{name} out of u32 range: {v}")
        if not 0 <= self.tag < 256:
            raise InvariantViolation(f"tag out of range: {self.tag}")
        if len(self.aux) != AUX_BYTES:
            raise InvariantViolation("aux must be exactly 36 octets")
        if self.flags.cpa:
            if self.op not in OP_NAMES:
                raise InvariantViolation(f"bad opcode {self.op!r}")
            if len(self.kvs) > MAX_PAIRS:
                raise InvariantViolation(f"{len(self.kvs)} pairs exceed {MAX_PAIRS}")
            for kv in self.kvs:
                if len(kv.key) != KEY_BYTES:
                    raise InvariantViolation("key not padded to 64 octets")
                if not -(2**31) <= kv.value < 2**31:
                    raise InvariantViolation(f"value out of i32 range: {kv.value}")
        else:
            if self.op is not None or self.kvs:
                raise InvariantViolation("plain packet carries aggregation section")

    def size(self) -> int:
        """Encoded length in octets, without building the byte string."""
        if self.flags.cpa:
            return HEADER_BYTES + 2 + PAIR_BYTES * len(self.kvs)
        return HEADER_BYTES

    def payload_bytes(self) -> int:
        """Octets of key-value content (the quantity aggregation saves)."""
        return PAIR_BYTES * len(self.kvs)

    def copy(self, **changes) -> "Packet":
        p = replace(self, **changes)
        if "kvs" not in changes:
            p.kvs = list(self.kvs)
        return p


def encode(p: Packet) -> bytes:
    """Serialize a packet. Deterministic; raises InvariantViolation."""
    p.validate()
    out = bytearray(
        _HDR.pack(p.src, p.dst, p.flow, p.seq, p.flags.to_octet(), p.tag, p.aux)
    )
    if p.flags.cpa:
        out.append(p.op)
        out.append(len(p.kvs))
        for kv in p.kvs:
            out += kv.key
            out += struct.pack(">i", kv.value)
    if len(out) > MTU:
        raise InvariantViolation(f"encoded size {len(out)} exceeds MTU")
    return bytes(out)


def decode(b: bytes) -> Packet:
    """Inverse of encode on valid encodings; raises Malformed otherwise."""
    if len(b) < HEADER_BYTES:
        raise Malformed("truncated-header")
    src, dst, flow, seq, fo, tag, aux = _HDR.unpack_from(b, 0)
    flags = CpFlags.from_octet(fo)
    if not flags.cpa:
        if len(b) != HEADER_BYTES:
            raise Malformed("length-mismatch")
        return Packet(src, dst, flow, seq, flags, None, [], tag, aux)
    if len(b) < HEADER_BYTES + 2:
        raise Malformed("truncated-aggregation-header")
    op = b[HEADER_BYTES]
    if op not in OP_NAMES:
        raise Malformed("bad-opcode")
    count = b[HEADER_BYTES + 1]
    if count > MAX_PAIRS:
        raise Malformed("bad-count")
    expect = HEADER_BYTES + 2 + PAIR_BYTES * count
    if len(b) != expect:
        raise Malformed("count-length-mismatch")
    kvs = []
    off = HEADER_BYTES + 2
    for _ in range(count):
        key = b[off : off + KEY_BYTES]
        (value,) = struct.unpack_from(">i", b, off + KEY_BYTES)
        kvs.append(KeyValue(key, value))
        off += PAIR_BYTES
    return Packet(src, dst, flow, seq, flags, op, kvs, tag, aux)


def make_ack(pkt: Packet) -> Packet:
    """Switch/receiver ACK: source and destination exchanged, CPK set."""
    return Packet(
        src=pkt.dst, dst=pkt.src, flow=pkt.flow, seq=pkt.seq, flags=ACK, op=pkt.op
    )


def header_copy(pkt: Packet) -> Packet:
    """Payload-stripped copy forwarded so the receiver can track continuity."""
    return pkt.copy(kvs=[])
