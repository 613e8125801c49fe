"""Domain types shared by every part of the kernel.

Values are plain Python objects (``None``, ``int``, ``float``, ``str``,
``bool``).  Their canonical byte encoding is a one-byte type tag followed by
a big-endian fixed-width payload, or a 4-byte length plus UTF-8 bytes for
strings.  The same encoding feeds key hashing, log blocks and published
blocks, so it must never change.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Any, NamedTuple, Optional

INT64_MIN = -(2 ** 63)
INT64_MAX = 2 ** 63 - 1


class ValueType(IntEnum):
    NULL = 0
    INT64 = 1
    FLOAT64 = 2
    UTF8 = 3
    BOOL = 4


class EncodingError(ValueError):
    pass


class SchemaViolation(ValueError):
    pass


_I64 = struct.Struct(">q")
_F64 = struct.Struct(">d")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


def value_type(v: Any) -> ValueType:
    # bool before int: bool is an int subclass
    if v is None:
        return ValueType.NULL
    t = type(v)
    if t is bool:
        return ValueType.BOOL
    if t is int:
        return ValueType.INT64
    if t is float:
        return ValueType.FLOAT64
    if t is str:
        return ValueType.UTF8
    raise EncodingError(f"unsupported value {v!r}")


def encode_value(v: Any) -> bytes:
    """Canonical encoding of one value; injective per (type, value)."""
    t = value_type(v)
    if t is ValueType.NULL:
        return b"\x00"
    if t is ValueType.INT64:
        if not INT64_MIN <= v <= INT64_MAX:
            raise EncodingError(f"int out of int64 range: {v}")
        return b"\x01" + _I64.pack(v)
    if t is ValueType.FLOAT64:
        return b"\x02" + _F64.pack(v)
    if t is ValueType.UTF8:
        raw = v.encode("utf-8")
        return b"\x03" + _U32.pack(len(raw)) + raw
    return b"\x04\x01" if v else b"\x04\x00"


def decode_value(buf: bytes, offset: int = 0) -> tuple[Any, int]:
    """Decode one value at ``offset``; returns (value, next offset)."""
    try:
        tag = buf[offset]
    except IndexError:
        raise EncodingError("truncated value") from None
    offset += 1
    if tag == 0:
        return None, offset
    if tag == 1:
        _check_len(buf, offset, 8)
        return _I64.unpack_from(buf, offset)[0], offset + 8
    if tag == 2:
        _check_len(buf, offset, 8)
        return _F64.unpack_from(buf, offset)[0], offset + 8
    if tag == 3:
        _check_len(buf, offset, 4)
        n = _U32.unpack_from(buf, offset)[0]
        offset += 4
        _check_len(buf, offset, n)
        return bytes(buf[offset:offset + n]).decode("utf-8"), offset + n
    if tag == 4:
        _check_len(buf, offset, 1)
        b = buf[offset]
        if b > 1:
            raise EncodingError(f"bad bool byte {b}")
        return b == 1, offset + 1
    raise EncodingError(f"unknown type tag {tag}")


def _check_len(buf, offset, n):
    if offset + n > len(buf):
        raise EncodingError("truncated value")


def hash64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


def key_hash(table_id: int, pairs) -> int:
    """64-bit hash over (table id, ordered (column id, value) pairs)."""
    parts = [_U32.pack(table_id)]
    for col, v in pairs:
        parts.append(_U32.pack(col))
        parts.append(encode_value(v))
    return hash64(b"".join(parts))


# ---------------------------------------------------------------------------
# identifiers and positions


class TransactionId(NamedTuple):
    node_id: int
    local_seq: int

    def __str__(self):
        return f"{self.node_id}:{self.local_seq}"

    @classmethod
    def parse(cls, text: str) -> "TransactionId":
        node, _, seq = text.partition(":")
        return cls(int(node), int(seq))


class SerialPos(NamedTuple):
    """Position in the global serial order: (batch ordinal, index in batch)."""
    batch: int
    within: int


def compare_serial_pos(a: SerialPos, b: SerialPos) -> int:
    if a == b:
        return 0
    return -1 if a < b else 1


class SerializeFrontierRow(NamedTuple):
    batch: int
    node_id: int
    lsn_upper: int


class PublishFrontierRow(NamedTuple):
    node_id: int
    lsn_upper: int


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class Column:
    column_id: int
    name: str
    type: ValueType


@dataclass(frozen=True)
class TableSchema:
    table_id: int
    name: str
    columns: tuple[Column, ...]
    primary_key: tuple[int, ...] = ()
    range_indexed: frozenset[int] = frozenset()

    def __post_init__(self):
        ids = [c.column_id for c in self.columns]
        if len(set(ids)) != len(ids):
            raise SchemaViolation(f"duplicate column ids in {self.name}")
        known = set(ids)
        for col in self.primary_key:
            if col not in known:
                raise SchemaViolation(f"primary key column {col} not in {self.name}")
        for col in self.range_indexed:
            if col not in known:
                raise SchemaViolation(f"range-indexed column {col} not in {self.name}")
        object.__setattr__(self, "_by_name", {c.name: c for c in self.columns})
        object.__setattr__(self, "_by_id", {c.column_id: c for c in self.columns})

    @property
    def keyed(self) -> bool:
        return bool(self.primary_key)

    def column(self, name_or_id) -> Column:
        if isinstance(name_or_id, str):
            return self._by_name[name_or_id]
        return self._by_id[name_or_id]

    def col_id(self, name: str) -> int:
        return self._by_name[name].column_id

    def key_of(self, values: dict) -> tuple:
        return tuple(values.get(c) for c in self.primary_key)

    def check_row(self, values: dict) -> None:
        for col, v in values.items():
            if col not in self._by_id:
                raise SchemaViolation(f"unknown column {col} in {self.name}")
            if v is not None and value_type(v) is not self._by_id[col].type:
                # ints are accepted for float columns
                if not (self._by_id[col].type is ValueType.FLOAT64 and type(v) is int):
                    raise SchemaViolation(
                        f"{self.name}.{self._by_id[col].name}: {v!r} is not {self._by_id[col].type.name}")
        for col in self.primary_key:
            if values.get(col) is None:
                raise SchemaViolation(f"{self.name}: key column {col} is null")


def table(table_id: int, name: str, columns, primary_key=(), range_indexed=()) -> TableSchema:
    """Shorthand: ``columns`` is a list of (name, ValueType); key columns by name."""
    cols = tuple(Column(i, n, t) for i, (n, t) in enumerate(columns))
    by_name = {c.name: c.column_id for c in cols}
    return TableSchema(table_id, name, cols,
                       tuple(by_name[n] for n in primary_key),
                       frozenset(by_name[n] for n in range_indexed))


class Catalog:
    def __init__(self, tables=()):
        self.tables: dict[int, TableSchema] = {}
        for t in tables:
            self.add(t)

    def add(self, schema: TableSchema) -> None:
        if schema.table_id in self.tables:
            raise SchemaViolation(f"table id {schema.table_id} already defined")
        self.tables[schema.table_id] = schema

    def __getitem__(self, table_id: int) -> TableSchema:
        return self.tables[table_id]

    def __contains__(self, table_id) -> bool:
        return table_id in self.tables

    def by_name(self, name: str) -> TableSchema:
        for t in self.tables.values():
            if t.name == name:
                return t
        raise KeyError(name)


# ---------------------------------------------------------------------------
# rows, read-write set entries, deltas


@dataclass(frozen=True, slots=True)
class RowVersion:
    table_id: int
    values: dict
    is_deleted: bool = False
    txn_id: Optional[TransactionId] = None
    ssn: Optional[int] = None
    pos: Optional[SerialPos] = None

    def key(self, schema: TableSchema) -> tuple:
        return tuple(self.values.get(c) for c in schema.primary_key)

    def stamped(self, ssn: Optional[int], pos: SerialPos) -> "RowVersion":
        return replace(self, ssn=ssn, pos=pos)


class EntryKind(IntEnum):
    EQ_READ = 0
    RANGE_READ = 1
    TABLE_READ = 2
    WRITE = 3


class KeyRange(NamedTuple):
    """Closed/open interval over one column; ``None`` bounds are unbounded."""
    column_id: int
    low: Any = None
    high: Any = None
    low_inclusive: bool = True
    high_inclusive: bool = True

    def contains(self, v) -> bool:
        if v is None:
            return False
        if self.low is not None:
            if v < self.low or (v == self.low and not self.low_inclusive):
                return False
        if self.high is not None:
            if v > self.high or (v == self.high and not self.high_inclusive):
                return False
        return True


class RWEntry(NamedTuple):
    """One ReadWriteSet row.

    ``column_values`` is only used by writes and holds the unhashed values of
    range-indexed columns, both before and after the write.
    """
    kind: EntryKind
    table_id: int
    key_hash: Optional[int] = None
    range: Optional[KeyRange] = None
    column_values: tuple = ()


def eq_read(table_id: int, key_hash_: int) -> RWEntry:
    return RWEntry(EntryKind.EQ_READ, table_id, key_hash_)


def range_read(table_id: int, rng: KeyRange) -> RWEntry:
    return RWEntry(EntryKind.RANGE_READ, table_id, None, rng)


def table_read(table_id: int) -> RWEntry:
    return RWEntry(EntryKind.TABLE_READ, table_id)


def write_entry(table_id: int, key_hash_: int, column_values=()) -> RWEntry:
    return RWEntry(EntryKind.WRITE, table_id, key_hash_, None, tuple(column_values))


def row_key_hash(schema: TableSchema, values: dict) -> int:
    if schema.keyed:
        return key_hash(schema.table_id, [(c, values[c]) for c in schema.primary_key])
    return key_hash(schema.table_id, sorted(values.items()))


@dataclass(frozen=True)
class Delta:
    """A transaction's durable record.

    ``priors`` runs parallel to ``upserts``: the version each upsert replaced,
    as read by the transaction (``None`` for fresh keys or when not tracked).
    """
    txn_id: TransactionId
    snapshot: int
    upserts: tuple[RowVersion, ...] = ()
    read_set: tuple[RWEntry, ...] = ()
    write_keys: tuple[RWEntry, ...] = ()
    priors: tuple[Optional[RowVersion], ...] = field(default=())

    def tables(self) -> set[int]:
        return {r.table_id for r in self.upserts}


# ---------------------------------------------------------------------------
# binary codecs for deltas (log records)


def _enc_row(row: RowVersion) -> bytes:
    parts = [_U32.pack(row.table_id), b"\x01" if row.is_deleted else b"\x00",
             _U32.pack(len(row.values))]
    for col in sorted(row.values):
        parts.append(_U32.pack(col))
        parts.append(encode_value(row.values[col]))
    return b"".join(parts)


def _dec_row(buf, off) -> tuple[RowVersion, int]:
    table_id = _U32.unpack_from(buf, off)[0]
    deleted = buf[off + 4] == 1
    n = _U32.unpack_from(buf, off + 5)[0]
    off += 9
    values = {}
    for _ in range(n):
        col = _U32.unpack_from(buf, off)[0]
        v, off = decode_value(buf, off + 4)
        values[col] = v
    return RowVersion(table_id, values, deleted), off


def _enc_entry(e: RWEntry) -> bytes:
    parts = [bytes([e.kind]), _U32.pack(e.table_id)]
    if e.kind in (EntryKind.EQ_READ, EntryKind.WRITE):
        parts.append(_U64.pack(e.key_hash))
    if e.kind is EntryKind.RANGE_READ:
        r = e.range
        parts += [_U32.pack(r.column_id), encode_value(r.low), encode_value(r.high),
                  bytes([int(r.low_inclusive) | (int(r.high_inclusive) << 1)])]
    if e.kind is EntryKind.WRITE:
        parts.append(_U32.pack(len(e.column_values)))
        for col, v in e.column_values:
            parts.append(_U32.pack(col))
            parts.append(encode_value(v))
    return b"".join(parts)


def _dec_entry(buf, off) -> tuple[RWEntry, int]:
    kind = EntryKind(buf[off])
    table_id = _U32.unpack_from(buf, off + 1)[0]
    off += 5
    h = rng = None
    cvs = ()
    if kind in (EntryKind.EQ_READ, EntryKind.WRITE):
        h = _U64.unpack_from(buf, off)[0]
        off += 8
    if kind is EntryKind.RANGE_READ:
        col = _U32.unpack_from(buf, off)[0]
        low, off = decode_value(buf, off + 4)
        high, off = decode_value(buf, off)
        flags = buf[off]
        off += 1
        rng = KeyRange(col, low, high, bool(flags & 1), bool(flags & 2))
    if kind is EntryKind.WRITE:
        n = _U32.unpack_from(buf, off)[0]
        off += 4
        items = []
        for _ in range(n):
            col = _U32.unpack_from(buf, off)[0]
            v, off = decode_value(buf, off + 4)
            items.append((col, v))
        cvs = tuple(items)
    return RWEntry(kind, table_id, h, rng, cvs), off


def encode_delta(d: Delta) -> bytes:
    parts = [_U32.pack(d.txn_id.node_id), _U64.pack(d.txn_id.local_seq), _U64.pack(d.snapshot)]
    parts.append(_U32.pack(len(d.upserts)))
    priors = d.priors or (None,) * len(d.upserts)
    for row, prior in zip(d.upserts, priors):
        parts.append(_enc_row(row))
        if prior is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01")
            parts.append(_enc_row(prior))
    for entries in (d.read_set, d.write_keys):
        parts.append(_U32.pack(len(entries)))
        parts.extend(_enc_entry(e) for e in entries)
    return b"".join(parts)


def decode_delta(buf: bytes) -> Delta:
    node = _U32.unpack_from(buf, 0)[0]
    seq = _U64.unpack_from(buf, 4)[0]
    snap = _U64.unpack_from(buf, 12)[0]
    off = 20
    n = _U32.unpack_from(buf, off)[0]
    off += 4
    txn = TransactionId(node, seq)
    upserts, priors = [], []
    for _ in range(n):
        row, off = _dec_row(buf, off)
        upserts.append(replace(row, txn_id=txn))
        flag = buf[off]
        off += 1
        if flag:
            prior, off = _dec_row(buf, off)
            priors.append(prior)
        else:
            priors.append(None)
    lists = []
    for _ in range(2):
        m = _U32.unpack_from(buf, off)[0]
        off += 4
        items = []
        for _ in range(m):
            e, off = _dec_entry(buf, off)
            items.append(e)
        lists.append(tuple(items))
    if off != len(buf):
        raise EncodingError("trailing bytes after delta")
    has_priors = any(p is not None for p in priors)
    return Delta(txn, snap, tuple(upserts), lists[0], lists[1],
                 tuple(priors) if has_priors else ())
