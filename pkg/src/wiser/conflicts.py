"""Lazy read-write conflict detection over caches of recent writes.

Deltas are processed in SerialPos order.  For each one we first check its
read set against the cached writes, then add its own writes to the cache, so
a delta only ever sees writes that precede it.  A write conflicts with a read
when it lands in the snapshot's future, i.e. its batch >= snapshot.

The cache is a list of epochs.  Each epoch covers a contiguous range of
batches and maps key hash -> max SerialPos, table -> max SerialPos, and, per
range-indexed column, column value -> max SerialPos.  Keeping only the max per
epoch is enough because epochs partition the SerialPos axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

from sortedcontainers import SortedDict

from .model import EntryKind, RWEntry, SerialPos, TransactionId

MERGE_BELOW = 1024
FALLBACK_CACHE = 4096


class OutOfOrderBatch(Exception):
    pass


class CacheEvicted(Exception):
    def __init__(self, snapshot: int, evicted_below: int):
        super().__init__(f"snapshot {snapshot} needs batches below {evicted_below}, which were evicted")
        self.snapshot = snapshot
        self.evicted_below = evicted_below


class Outcome(Enum):
    CLEAN = "clean"
    CONFLICTED = "conflicted"


@dataclass
class Epoch:
    first: int
    last: int
    writes: int = 0
    keys: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    trees: dict = field(default_factory=dict)

    def add(self, pos: SerialPos, entry: RWEntry) -> None:
        self.writes += 1
        keys = self.keys
        if keys.get(entry.key_hash, pos) <= pos:
            keys[entry.key_hash] = pos
        t = entry.table_id
        if self.tables.get(t, pos) <= pos:
            self.tables[t] = pos
        for col, v in entry.column_values:
            if v is None:
                continue
            tree = self.trees.get((t, col))
            if tree is None:
                tree = self.trees[(t, col)] = SortedDict()
            if tree.get(v, pos) <= pos:
                tree[v] = pos

    def conflicts(self, snapshot: int, entry: RWEntry) -> bool:
        kind = entry.kind
        if kind is EntryKind.EQ_READ:
            p = self.keys.get(entry.key_hash)
            return p is not None and p[0] >= snapshot
        if kind is EntryKind.TABLE_READ:
            p = self.tables.get(entry.table_id)
            return p is not None and p[0] >= snapshot
        if kind is EntryKind.RANGE_READ:
            r = entry.range
            tree = self.trees.get((entry.table_id, r.column_id))
            if not tree:
                return False
            for v in tree.irange(r.low, r.high, (r.low_inclusive, r.high_inclusive)):
                if tree[v][0] >= snapshot:
                    return True
            return False
        return False


class RollbacksTable:
    """Append-only (txnId, Conflict) rows; one row per transaction at most."""

    def __init__(self):
        self.rows: list[TransactionId] = []
        self._set: set[TransactionId] = set()

    def append(self, txn: TransactionId) -> None:
        if txn in self._set:
            raise ValueError(f"{txn} already in Rollbacks")
        self._set.add(txn)
        self.rows.append(txn)

    def __contains__(self, txn) -> bool:
        return txn in self._set

    def __len__(self) -> int:
        return len(self.rows)

    def lines(self) -> list[str]:
        return [f"{t.node_id},{t.local_seq}\n" for t in self.rows]


WriteSource = Callable[[int], Iterable[tuple[SerialPos, tuple]]]


class ConflictResolver:
    """Single consumer advancing through serialized batches in order.

    ``fetch_writes(batch)`` is the fallback for snapshots older than the
    cache: it must return (SerialPos, write entries) for every delta of that
    batch, e.g. by scanning the origin's log.
    """

    def __init__(self, start_batch: int = 0, merge_below: int = MERGE_BELOW,
                 fetch_writes: Optional[WriteSource] = None):
        self.next_batch = start_batch
        self.evicted_below = start_batch
        self.merge_below = merge_below
        self.fetch_writes = fetch_writes
        self.epochs: list[Epoch] = []
        self.rollbacks = RollbacksTable()
        self.fallbacks = 0
        self._fallback_cache: dict[int, Epoch] = {}
        self._open: Optional[int] = None

    # -- ingestion -------------------------------------------------------

    def begin_batch(self, batch: int) -> None:
        if batch != self.next_batch:
            raise OutOfOrderBatch(f"expected batch {self.next_batch}, got {batch}")
        last = self.epochs[-1] if self.epochs else None
        if last is not None and last.last == batch - 1 and last.writes < self.merge_below:
            last.last = batch
        else:
            self.epochs.append(Epoch(batch, batch))
        self._open = batch
        self.next_batch = batch + 1

    def ingest_delta(self, pos: SerialPos, write_keys) -> None:
        if pos[0] != self._open:
            raise OutOfOrderBatch(f"write at batch {pos[0]} while batch {self._open} is open")
        epoch = self.epochs[-1]
        for e in write_keys:
            epoch.add(pos, e)

    def ingest_writes(self, batch: int, items) -> None:
        """Add a whole batch of (SerialPos, write entries) without resolving it."""
        self.begin_batch(batch)
        for pos, writes in items:
            self.ingest_delta(pos, writes)

    # -- resolution ------------------------------------------------------

    def resolve(self, txn_id: TransactionId, snapshot: int, read_set, pos: SerialPos) -> Outcome:
        """Check one delta against every cached write in [snapshot, pos)."""
        if pos[0] != self._open:
            raise OutOfOrderBatch(f"resolve at batch {pos[0]} while batch {self._open} is open")
        epochs = [ep for ep in self.epochs if ep.last >= snapshot]
        if snapshot < self.evicted_below:
            epochs = self._fallback_epochs(snapshot) + epochs
        for entry in read_set:
            for ep in epochs:
                if ep.conflicts(snapshot, entry):
                    self.rollbacks.append(txn_id)
                    return Outcome.CONFLICTED
        return Outcome.CLEAN

    def process_batch(self, batch: int, items) -> list[TransactionId]:
        """Resolve-then-ingest each (pos, txn_id, snapshot, read_set, write_keys)."""
        self.begin_batch(batch)
        lost = []
        for pos, txn_id, snapshot, read_set, write_keys in items:
            if self.resolve(txn_id, snapshot, read_set, pos) is Outcome.CONFLICTED:
                lost.append(txn_id)
            self.ingest_delta(pos, write_keys)
        return lost

    def _fallback_epochs(self, snapshot: int) -> list[Epoch]:
        if self.fetch_writes is None:
            raise CacheEvicted(snapshot, self.evicted_below)
        self.fallbacks += 1
        out = []
        for b in range(snapshot, self.evicted_below):
            ep = self._fallback_cache.get(b)
            if ep is None:
                ep = Epoch(b, b)
                for pos, writes in self.fetch_writes(b):
                    for e in writes:
                        ep.add(pos, e)
                self._fallback_cache[b] = ep
            out.append(ep)
        return out

    def prefetch(self, snapshot: int) -> None:
        """Load fallback writes for ``snapshot`` ahead of a batch; may raise
        whatever ``fetch_writes`` raises, leaving the resolver unchanged."""
        if snapshot >= self.evicted_below:
            return
        if len(self._fallback_cache) > FALLBACK_CACHE:
            self._fallback_cache.clear()
        self._fallback_epochs(snapshot)

    # -- eviction --------------------------------------------------------

    def evict(self, older_than: int) -> int:
        """Drop epochs lying entirely below batch ``older_than``."""
        keep = [ep for ep in self.epochs if ep.last >= older_than]
        dropped = len(self.epochs) - len(keep)
        if dropped:
            self.evicted_below = max(self.evicted_below, self.epochs[dropped - 1].last + 1)
            self.epochs = keep
            self._fallback_cache = {b: e for b, e in self._fallback_cache.items()
                                    if b < self.evicted_below}
        return dropped
