"""Independent brute-force reference used by the tests. Deliberately avoids
the package's merge/aggregation code paths: arithmetic is written from the
definitions (32-bit wrap-around add, signed comparisons) so an implementation
bug cannot hide in both places."""

from __future__ import annotations

MASK32 = (1 << 32) - 1


def wrap_add32(a: int, b: int) -> int:
    total = (a & MASK32) + (b & MASK32)
    total &= MASK32
    if total & (1 << 31):
        total -= 1 << 32
    return total


def merge_value(op: int, old: int, new: int) -> int:
    if op == 0:  # ADD
        return wrap_add32(old, new)
    if op == 1:  # MAX
        return old if old > new else new
    if op == 2:  # MIN
        return new if new < old else old
    raise ValueError(op)


def pad64(key: bytes) -> bytes:
    assert len(key) <= 64
    return key + b"\x00" * (64 - len(key))


def aggregate(records, op: int, pad: bool = False) -> dict[bytes, int]:
    """Single-machine aggregate of (key, value) records."""
    table: dict[bytes, int] = {}
    for key, value in records:
        k = pad64(key) if pad else key
        if k in table:
            table[k] = merge_value(op, table[k], value)
        else:
            table[k] = value
    return table


def aggregate_partitions(partitions, op: int, pad: bool = False) -> dict[bytes, int]:
    table: dict[bytes, int] = {}
    for part in partitions:
        for key, value in part:
            k = pad64(key) if pad else key
            if k in table:
                table[k] = merge_value(op, table[k], value)
            else:
                table[k] = value
    return table
