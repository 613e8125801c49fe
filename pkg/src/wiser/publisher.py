"""Per-node publishing of serialized deltas into SSN-stamped per-table blocks.

Published block layout (big-endian)::

    "WSPB" | nodeId u32 | tableId u32 | batch u64 | minSsn u64 | maxSsn u64 | rowCount u32
    rowCount x (u32 length | row record)
    synopsis: columnCount u32, then per column: columnId u32 | min value | max value
    CRC32C(all preceding bytes) u32

A row record is: txn node u32 | txn seq u64 | ssn u64 | batch u64 | within u32 |
deleted u8 | valueCount u32 | valueCount x (columnId u32 | value).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import crc32c

from .model import (Catalog, Delta, RowVersion, SerialPos, SerializeFrontierRow,
                    TransactionId, decode_value, encode_value)

MAGIC = b"WSPB"
RUN_THRESHOLD = 8
_HEADER = struct.Struct(">4sIIQQQI")
_ROWHDR = struct.Struct(">IQQQIBI")
_U32 = struct.Struct(">I")


class WaitingOnConflictResolution(Exception):
    pass


class CorruptBlock(ValueError):
    pass


def _enc_row(r: RowVersion) -> bytes:
    parts = [_ROWHDR.pack(r.txn_id.node_id, r.txn_id.local_seq, r.ssn, r.pos[0], r.pos[1],
                          1 if r.is_deleted else 0, len(r.values))]
    for col in sorted(r.values):
        parts.append(_U32.pack(col))
        parts.append(encode_value(r.values[col]))
    return b"".join(parts)


def _dec_row(table_id: int, buf: bytes) -> RowVersion:
    node, seq, ssn, batch, within, deleted, n = _ROWHDR.unpack_from(buf, 0)
    off = _ROWHDR.size
    values = {}
    for _ in range(n):
        col = _U32.unpack_from(buf, off)[0]
        values[col], off = decode_value(buf, off + 4)
    return RowVersion(table_id, values, deleted == 1, TransactionId(node, seq), ssn,
                      SerialPos(batch, within))


def _synopsis(rows) -> dict:
    syn: dict = {}
    for r in rows:
        for col, v in r.values.items():
            if v is None:
                continue
            cur = syn.get(col)
            if cur is None:
                syn[col] = (v, v)
            else:
                lo, hi = cur
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
                syn[col] = (lo, hi)
    return syn


@dataclass
class PublishedBlock:
    node_id: int
    table_id: int
    batch: int
    rows: list
    min_ssn: int = 0
    max_ssn: int = 0
    synopsis: dict = field(default_factory=dict)

    @classmethod
    def build(cls, node_id: int, table_id: int, batch: int, rows: list) -> "PublishedBlock":
        return cls(node_id, table_id, batch, rows,
                   min(r.ssn for r in rows), max(r.ssn for r in rows), _synopsis(rows))

    def may_contain(self, column_id: int, low=None, high=None) -> bool:
        """Min-max pruning; False only if no row can have a value in [low, high]."""
        rng = self.synopsis.get(column_id)
        if rng is None:
            return False
        lo, hi = rng
        if low is not None and hi < low:
            return False
        if high is not None and lo > high:
            return False
        return True

    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(MAGIC, self.node_id, self.table_id, self.batch,
                              self.min_ssn, self.max_ssn, len(self.rows))]
        for r in self.rows:
            rec = _enc_row(r)
            parts.append(_U32.pack(len(rec)))
            parts.append(rec)
        parts.append(_U32.pack(len(self.synopsis)))
        for col in sorted(self.synopsis):
            lo, hi = self.synopsis[col]
            parts += [_U32.pack(col), encode_value(lo), encode_value(hi)]
        body = b"".join(parts)
        return body + _U32.pack(crc32c.crc32c(body))

    @classmethod
    def from_bytes(cls, buf: bytes) -> "PublishedBlock":
        body, crc = buf[:-4], _U32.unpack(buf[-4:])[0]
        if crc32c.crc32c(body) != crc:
            raise CorruptBlock("checksum mismatch")
        magic, node, table_id, batch, min_ssn, max_ssn, n = _HEADER.unpack_from(body, 0)
        if magic != MAGIC:
            raise CorruptBlock(f"bad magic {magic!r}")
        off = _HEADER.size
        rows = []
        for _ in range(n):
            ln = _U32.unpack_from(body, off)[0]
            off += 4
            rows.append(_dec_row(table_id, body[off:off + ln]))
            off += ln
        ncols = _U32.unpack_from(body, off)[0]
        off += 4
        syn = {}
        for _ in range(ncols):
            col = _U32.unpack_from(body, off)[0]
            lo, off = decode_value(body, off + 4)
            hi, off = decode_value(body, off)
            syn[col] = (lo, hi)
        if off != len(body):
            raise CorruptBlock("trailing bytes in block")
        return cls(node, table_id, batch, rows, min_ssn, max_ssn, syn)


class PrimaryIndex:
    """LSM-style index: per table, a list of immutable runs (key -> versions).

    Every version is retained; a run's version lists are sorted by SerialPos.
    Lookups merge across runs.  Runs are only rewritten by ``merge_runs``.
    """

    def __init__(self, threshold: int = RUN_THRESHOLD):
        self.threshold = threshold
        self.runs: dict[int, list[dict]] = {}
        self.merges = 0

    def add_run(self, table_id: int, keyed_rows) -> None:
        """``keyed_rows``: iterable of (key, RowVersion) in SerialPos order."""
        run: dict = {}
        for key, r in keyed_rows:
            lst = run.get(key)
            if lst is None:
                run[key] = [r]
            else:
                lst.append(r)
        if not run:
            return
        runs = self.runs.setdefault(table_id, [])
        runs.append(run)
        if len(runs) > self.threshold:
            self.merge_runs(table_id)

    def run_count(self, table_id: int) -> int:
        return len(self.runs.get(table_id, ()))

    def versions(self, table_id: int, key) -> list[RowVersion]:
        out = []
        for run in self.runs.get(table_id, ()):
            lst = run.get(key)
            if lst:
                out.extend(lst)
        if len(out) > 1:
            out.sort(key=lambda r: r.pos)
        return out

    def keys(self, table_id: int) -> set:
        out = set()
        for run in self.runs.get(table_id, ()):
            out.update(run)
        return out

    def latest(self, table_id: int, key, frontier: int, hidden=None) -> Optional[RowVersion]:
        """Max-SerialPos version with batch < frontier whose SSN is not hidden."""
        best = None
        for run in self.runs.get(table_id, ()):
            lst = run.get(key)
            if not lst:
                continue
            for r in reversed(lst):
                if r.pos[0] >= frontier:
                    continue
                if hidden and r.ssn in hidden:
                    continue
                if best is None or r.pos > best.pos:
                    best = r
                break
        return best

    def merge_runs(self, table_id: int) -> None:
        """Size-tiered: merge the adjacent pair with the smallest combined size."""
        runs = self.runs.get(table_id, [])
        while len(runs) > self.threshold:
            i = min(range(len(runs) - 1), key=lambda j: len(runs[j]) + len(runs[j + 1]))
            a, b = runs[i], runs[i + 1]
            merged = dict(a)
            for key, lst in b.items():
                prev = merged.get(key)
                if prev is None:
                    merged[key] = lst
                else:
                    merged[key] = sorted(prev + lst, key=lambda r: r.pos)
            runs[i:i + 2] = [merged]
            self.merges += 1


class Publisher:
    """Turns this node's serialized batches into blocks, in batch order."""

    def __init__(self, node_id: int, catalog: Catalog, run_threshold: int = RUN_THRESHOLD):
        self.node_id = node_id
        self.catalog = catalog
        self.frontier = 0  # PublishFrontiers lsnUpper for this node
        self.blocks: dict[int, list[PublishedBlock]] = {}
        self.index = PrimaryIndex(run_threshold)
        self.published_batches: list[int] = []
        self.batch_txns: dict[int, list[tuple[int, Delta]]] = {}
        self.rows_published = 0

    def publish_batch(self, row: SerializeFrontierRow, deltas, rolled_back, ssn_start: int) -> list[PublishedBlock]:
        """Publish one batch of this node's log.

        ``deltas`` are the (lsn, Delta) pairs of [frontier, row.lsn_upper);
        ``rolled_back`` is a container of conflict-rolled-back txn ids;
        surviving deltas get SSNs ssn_start, ssn_start + 1, ... in LSN order.
        """
        if row.node_id != self.node_id:
            raise ValueError(f"batch {row.batch} belongs to node {row.node_id}")
        if deltas and deltas[0][0] != self.frontier:
            raise ValueError(f"batch {row.batch} starts at lsn {deltas[0][0]}, publish frontier is {self.frontier}")
        per_table: dict[int, list] = {}
        survivors = []
        ssn = ssn_start
        for within, (lsn, d) in enumerate(deltas):
            if d.txn_id in rolled_back:
                continue
            pos = SerialPos(row.batch, within)
            survivors.append((ssn, d))
            for r in d.upserts:
                per_table.setdefault(r.table_id, []).append(r.stamped(ssn, pos))
            ssn += 1
        blocks = []
        for table_id in sorted(per_table):
            rows = per_table[table_id]
            block = PublishedBlock.build(self.node_id, table_id, row.batch, rows)
            self.blocks.setdefault(table_id, []).append(block)
            blocks.append(block)
            schema = self.catalog[table_id]
            if schema.keyed:
                pk = schema.primary_key
                self.index.add_run(table_id, ((tuple(r.values[c] for c in pk), r) for r in rows))
            self.rows_published += len(rows)
        self.batch_txns[row.batch] = survivors
        self.published_batches.append(row.batch)
        self.frontier = row.lsn_upper
        return blocks

    def index_lookup(self, table_id: int, key: tuple, frontier: int, hidden=None) -> Optional[RowVersion]:
        """Latest visible non-deleted version, or None (NotFound)."""
        r = self.index.latest(table_id, key, frontier, hidden)
        if r is None or r.is_deleted:
            return None
        return r

    def scan(self, table_id: int, frontier: int, column_id: Optional[int] = None, low=None, high=None):
        """Rows of blocks with batch < frontier, pruned by synopsis when a range is given."""
        for block in self.blocks.get(table_id, ()):
            if block.batch >= frontier:
                continue
            if column_id is not None and not block.may_contain(column_id, low, high):
                continue
            yield from block.rows

    def frontier_line(self) -> str:
        return f"{self.node_id},{self.frontier}\n"
