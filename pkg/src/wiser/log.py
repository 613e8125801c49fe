"""Per-node append-only delta log, its block format, and replica copies.

Block layout (big-endian)::

    "WSLG" | nodeId u32 | startLsn u64 | recordCount u32
    recordCount x (u32 length | encoded delta)
    CRC32C(all preceding bytes) u32

LSNs are record ordinals within one node's log.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import crc32c

from .model import Delta, decode_delta, encode_delta
from .simnet import Future

MAGIC = b"WSLG"
_HEADER = struct.Struct(">4sIQI")
_U32 = struct.Struct(">I")

BLOCK_RECORDS = 256
BLOCK_BYTES = 1 << 20


class LogClosed(Exception):
    pass


class RangeUnavailable(Exception):
    pass


class CorruptBlock(ValueError):
    pass


@dataclass
class LogBlock:
    node_id: int
    start_lsn: int
    records: list[bytes] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(MAGIC, self.node_id, self.start_lsn, len(self.records))]
        for rec in self.records:
            parts.append(_U32.pack(len(rec)))
            parts.append(rec)
        body = b"".join(parts)
        return body + _U32.pack(crc32c.crc32c(body))

    @classmethod
    def from_bytes(cls, buf: bytes) -> "LogBlock":
        if len(buf) < _HEADER.size + 4:
            raise CorruptBlock("block too short")
        body, crc = buf[:-4], _U32.unpack(buf[-4:])[0]
        if crc32c.crc32c(body) != crc:
            raise CorruptBlock("checksum mismatch")
        magic, node_id, start, count = _HEADER.unpack_from(body, 0)
        if magic != MAGIC:
            raise CorruptBlock(f"bad magic {magic!r}")
        off = _HEADER.size
        records = []
        for _ in range(count):
            n = _U32.unpack_from(body, off)[0]
            off += 4
            records.append(bytes(body[off:off + n]))
            off += n
        if off != len(body):
            raise CorruptBlock("trailing bytes in block")
        return cls(node_id, start, records)

    def deltas(self) -> list[Delta]:
        return [decode_delta(r) for r in self.records]


class LocalLog:
    """Node-local log.  ``append`` buffers, ``harden`` makes the tail durable.

    Deltas are kept decoded in memory; encodings are produced on demand and
    cached, which is all the block format and file backing need.
    """

    def __init__(self, node_id: int, directory: Optional[Path] = None,
                 block_records: int = BLOCK_RECORDS, block_bytes: int = BLOCK_BYTES):
        self.node_id = node_id
        self.directory = Path(directory) if directory else None
        self.block_records = block_records
        self.block_bytes = block_bytes
        self._records: list[Delta] = []
        self._encoded: list[Optional[bytes]] = []
        self.hardened_upper = 0
        self.closed = False
        self._written_blocks = 0

    @property
    def upper(self) -> int:
        return len(self._records)

    def append(self, delta: Delta) -> int:
        if self.closed:
            raise LogClosed(f"log of node {self.node_id} is closed")
        lsn = len(self._records)
        self._records.append(delta)
        self._encoded.append(None)
        return lsn

    def harden(self) -> int:
        if self.closed:
            raise LogClosed(f"log of node {self.node_id} is closed")
        if self.directory is not None and self.hardened_upper < len(self._records):
            self._write_files()
        self.hardened_upper = len(self._records)
        return self.hardened_upper

    def close(self) -> None:
        self.closed = True

    def crash(self) -> None:
        del self._records[self.hardened_upper:]
        del self._encoded[self.hardened_upper:]

    def get(self, lsn: int) -> Delta:
        if not 0 <= lsn < self.hardened_upper:
            raise RangeUnavailable(f"lsn {lsn} not hardened on node {self.node_id}")
        return self._records[lsn]

    def scan(self, from_lsn: int, to_lsn: int) -> list[tuple[int, Delta]]:
        if from_lsn < 0 or to_lsn > self.hardened_upper or from_lsn > to_lsn:
            raise RangeUnavailable(
                f"[{from_lsn},{to_lsn}) outside hardened log [0,{self.hardened_upper}) of node {self.node_id}")
        return [(i, self._records[i]) for i in range(from_lsn, to_lsn)]

    def encoded(self, lsn: int) -> bytes:
        enc = self._encoded[lsn]
        if enc is None:
            enc = self._encoded[lsn] = encode_delta(self._records[lsn])
        return enc

    def blocks(self, upper: Optional[int] = None) -> list[LogBlock]:
        """Group records [0, upper) greedily into blocks (256 records or 1 MiB)."""
        upper = self.hardened_upper if upper is None else upper
        out: list[LogBlock] = []
        cur: Optional[LogBlock] = None
        size = 0
        for lsn in range(upper):
            rec = self.encoded(lsn)
            if cur is None or len(cur.records) >= self.block_records or (
                    cur.records and size + len(rec) + 4 > self.block_bytes):
                cur = LogBlock(self.node_id, lsn)
                out.append(cur)
                size = 0
            cur.records.append(rec)
            size += len(rec) + 4
        return out

    def _write_files(self) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        blocks = self.blocks(len(self._records))
        # sealed blocks never change; rewrite from the last possibly-open one
        for i in range(max(0, self._written_blocks - 1), len(blocks)):
            path = self.directory / f"log.{self.node_id}.{i:08d}"
            path.write_bytes(blocks[i].to_bytes())
        self._written_blocks = len(blocks)

    @classmethod
    def open(cls, directory: Path, node_id: int, **kw) -> "LocalLog":
        """Recover a file-backed log: every block file is checksum-verified."""
        log = cls(node_id, directory, **kw)
        paths = sorted(Path(directory).glob(f"log.{node_id}.*"))
        for p in paths:
            block = LogBlock.from_bytes(p.read_bytes())
            if block.start_lsn != len(log._records):
                raise CorruptBlock(f"{p.name}: expected start {len(log._records)}, got {block.start_lsn}")
            for rec in block.records:
                log._records.append(decode_delta(rec))
                log._encoded.append(rec)
        log.hardened_upper = len(log._records)
        log._written_blocks = len(paths)
        return log


class ReplicationState:
    """Highest hardened LSN upper bound acknowledged by each replica."""

    def __init__(self, replica_set=()):
        self.replica_set = tuple(replica_set)
        self.acked: dict[int, int] = {r: 0 for r in self.replica_set}

    def ack(self, replica: int, upper: int) -> None:
        if replica in self.acked and upper > self.acked[replica]:
            self.acked[replica] = upper

    def quorum_upper(self, local_upper: int, quorum: int) -> int:
        """Largest U such that >= quorum copies (origin included) hold [0, U)."""
        uppers = sorted([local_upper] + list(self.acked.values()), reverse=True)
        if quorum <= 0:
            return local_upper
        if quorum > len(uppers):
            return 0
        return uppers[quorum - 1]


class ReplicaStore:
    """Copies of other nodes' logs held by this node (hardened on receipt)."""

    def __init__(self):
        self.held: dict[int, list[Delta]] = {}

    def upper(self, origin: int) -> int:
        return len(self.held.get(origin, ()))

    def offer(self, origin: int, start: int, records) -> int:
        held = self.held.setdefault(origin, [])
        if start > len(held):
            return len(held)
        skip = len(held) - start
        if skip < len(records):
            held.extend(records[skip:])
        return len(held)

    def scan(self, origin: int, from_lsn: int, to_lsn: int) -> list[tuple[int, Delta]]:
        held = self.held.get(origin, [])
        if from_lsn < 0 or to_lsn > len(held) or from_lsn > to_lsn:
            raise RangeUnavailable(f"replica holds [0,{len(held)}) of node {origin}")
        return [(i, held[i]) for i in range(from_lsn, to_lsn)]


@dataclass(frozen=True)
class PromiseReceipt:
    node_id: int
    lsn: int


class PromiseTracker:
    """Waiters for "LSN hardened on a quorum" notifications."""

    def __init__(self):
        self._waiters: list[tuple[int, int, Future]] = []

    def wait(self, lsn: int, quorum: int) -> Future:
        f = Future()
        self._waiters.append((lsn, quorum, f))
        return f

    def update(self, node_id: int, quorum_upper_fn) -> None:
        if not self._waiters:
            return
        keep = []
        ready = []
        for lsn, quorum, f in self._waiters:
            if f.done:
                continue
            if quorum_upper_fn(quorum) > lsn:
                ready.append((lsn, f))
            else:
                keep.append((lsn, quorum, f))
        self._waiters = keep
        for lsn, f in ready:
            f.set_result(PromiseReceipt(node_id, lsn))

    def fail_all(self, error: BaseException) -> None:
        waiters, self._waiters = self._waiters, []
        for _, _, f in waiters:
            f.set_error(error)
