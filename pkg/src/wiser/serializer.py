"""Serialize stage: batching of promised log ranges into the global order.

The elected serializer writes one file, ``SerFront.<N>.<S>``, that only it
ever appends to.  Besides the plain (batch, node, lsnUpper) rows the file
holds the outcome of conflict resolution for each batch and the results of
constraint rounds, so one replicated stream carries every serialize-time
decision.  Files are pushed to all members; an entry becomes visible to
readers once a majority holds it ("revealed").

``reconcile`` stitches the files of successive serializers together using
the Serializers rows: rows [startingBatch(S), startingBatch(next)) come from
S's file and everything a deposed serializer wrote beyond that is dropped.
"""
from __future__ import annotations

from bisect import bisect_left
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

from .conflicts import ConflictResolver
from .model import SerialPos, SerializeFrontierRow, TransactionId


class NotSerializer(Exception):
    pass


class StaleNode(Exception):
    pass


class Deposed(Exception):
    pass


class MissingFile(Exception):
    pass


class SerializersRow(NamedTuple):
    node_id: int
    seq: int
    starting_batch: int


def current_serializer(rows) -> SerializersRow:
    """Max seq; on duplicate seqs the earliest entry wins."""
    best = None
    for r in rows:
        if best is None or r.seq > best.seq:
            best = r
    if best is None:
        raise ValueError("empty Serializers log")
    return best


def chain_of(rows) -> list[SerializersRow]:
    """Rows in seq order, keeping only the earliest entry for a repeated seq."""
    seen = {}
    for r in rows:
        if r.seq not in seen:
            seen[r.seq] = r
    return [seen[s] for s in sorted(seen)]


# ---------------------------------------------------------------------------
# stream records


class PayloadItem(NamedTuple):
    """What a node ships per promised delta: enough to resolve conflicts."""
    lsn: int
    txn_id: TransactionId
    snapshot: int
    read_set: tuple
    write_keys: tuple
    node_rows: tuple = ()
    tables: frozenset = frozenset()


class BatchRecord(NamedTuple):
    row: SerializeFrontierRow
    lsn_lower: int
    rollbacks: tuple
    ssn_start: int
    survivors: int
    tables: frozenset = frozenset()
    node_rows: tuple = ()

    @property
    def batch(self) -> int:
        return self.row.batch


class ConstraintRecord(NamedTuple):
    first_batch: int
    end_batch: int
    failures: tuple
    state_changes: dict


class StartRecord(NamedTuple):
    prev_file: Optional[tuple]
    prev_len: int


def file_name(fid) -> str:
    return f"SerFront.{fid[0]}.{fid[1]}"


def serfront_lines(entries) -> list[str]:
    return [f"{e.row.batch},{e.row.node_id},{e.row.lsn_upper}\n"
            for e in entries if isinstance(e, BatchRecord)]


def _batch_cut(entries, sb: int, end_batch: Optional[int]):
    """Position right after the last batch record < end_batch, and the position
    of the first batch record >= end_batch (or len)."""
    last_ok = 0
    stop = len(entries)
    for i, e in enumerate(entries):
        if isinstance(e, BatchRecord):
            if end_batch is not None and e.row.batch >= end_batch:
                stop = i
                break
            last_ok = i + 1
    return last_ok, stop


def reconcile(rows, files: dict, revealed: Optional[dict] = None) -> list:
    """Stitch serializer files into one ordered list of records.

    With ``revealed`` None this is the serializer-side recovery: every file
    of the chain must supply its batch range, else MissingFile.  With
    ``revealed`` (file id -> revealed length) it is a reader's view: the
    longest prefix that is already fixed for good, never raising.
    """
    chain = chain_of(rows)
    out: list = []
    expected = 0
    for i, row in enumerate(chain):
        fid = (row.node_id, row.seq)
        entries = files.get(fid) or []
        nxt = chain[i + 1] if i + 1 < len(chain) else None
        if row.starting_batch != expected:
            if revealed is not None:
                return out
            raise MissingFile(f"{file_name(fid)}: chain expects batch {expected}, row starts at {row.starting_batch}")
        if nxt is None:
            end_batch = None
            if revealed is None:
                limit = len(entries)
            else:
                limit = min(len(entries), revealed.get(fid, 0))
        else:
            end_batch = nxt.starting_batch
            nfid = (nxt.node_id, nxt.seq)
            nfile = files.get(nfid) or []
            start = nfile[0] if nfile and isinstance(nfile[0], StartRecord) else None
            use_start = start is not None and start.prev_file == fid and (
                revealed is None or revealed.get(nfid, 0) >= 1 or _adopted_later(chain, i + 1, files, revealed))
            last_ok, stop = _batch_cut(entries, row.starting_batch, end_batch)
            if use_start:
                limit = min(start.prev_len, stop)
                if limit > len(entries):
                    limit = len(entries)
            elif revealed is None:
                limit = stop
            else:
                limit = min(max(last_ok, revealed.get(fid, 0)), stop)
        for e in entries[:limit]:
            if isinstance(e, BatchRecord):
                if e.row.batch != expected:
                    if revealed is not None:
                        return out
                    raise MissingFile(f"{file_name(fid)}: expected batch {expected}, found {e.row.batch}")
                expected += 1
                out.append(e)
            elif isinstance(e, ConstraintRecord):
                out.append(e)
        if end_batch is not None and expected < end_batch:
            if revealed is not None:
                return out
            raise MissingFile(f"{file_name(fid)}: batches [{expected},{end_batch}) unavailable")
    return out


def _adopted_later(chain, j, files, revealed) -> bool:
    """True if chain[j]'s file was itself adopted by a revealed successor."""
    if j + 1 >= len(chain):
        return False
    fid = (chain[j].node_id, chain[j].seq)
    nfid = (chain[j + 1].node_id, chain[j + 1].seq)
    nfile = files.get(nfid) or []
    if nfile and isinstance(nfile[0], StartRecord) and nfile[0].prev_file == fid:
        return revealed.get(nfid, 0) >= 1 or _adopted_later(chain, j + 1, files, revealed)
    return False


# ---------------------------------------------------------------------------
# reader-side view


def _bisect_upper(recs, lsn: int) -> int:
    """First index whose lsn_upper > lsn."""
    lo, hi = 0, len(recs)
    while lo < hi:
        mid = (lo + hi) // 2
        if recs[mid].row.lsn_upper <= lsn:
            lo = mid + 1
        else:
            hi = mid
    return lo


class FrontierView:
    """One node's replicated knowledge of the serialized history.

    ``batches`` and ``constraint_records`` only ever grow, and only hold
    revealed records.
    """

    def __init__(self):
        self.rows: list[SerializersRow] = []
        self.files: dict[tuple, list] = {}
        self.revealed: dict[tuple, int] = {}
        self.batches: list[BatchRecord] = []
        self.constraint_records: list[ConstraintRecord] = []
        self.rollbacks: set = set()
        self.failures: set = set()
        self.constraint_frontier = 0
        self.node_uppers: dict[int, int] = {}
        self.node_records: dict[int, list[BatchRecord]] = {}
        self.node_batch_ids: dict[int, list[int]] = {}
        self.table_origins: dict[int, set] = {}
        self._dirty = True
        self._listeners: list[Callable] = []

    @property
    def frontier(self) -> int:
        return len(self.batches)

    def on_new_records(self, fn: Callable) -> None:
        self._listeners.append(fn)

    def set_rows(self, rows) -> bool:
        rows = list(rows)
        if len(rows) > len(self.rows) and rows[:len(self.rows)] == self.rows:
            self.rows = rows
            self._dirty = True
            return True
        return False

    def receive(self, fid, start: int, entries) -> int:
        """Store entries [start, start+len) of file ``fid``; returns held length."""
        f = self.files.setdefault(fid, [])
        if start <= len(f):
            if start + len(entries) > len(f):
                f.extend(entries[len(f) - start:])
                self._dirty = True
        return len(f)

    def reveal(self, fid, length: int) -> None:
        if length > self.revealed.get(fid, 0):
            self.revealed[fid] = length
            self._dirty = True

    def refresh(self) -> list:
        """Recompute the visible prefix; returns newly visible records."""
        if not self._dirty or not self.rows:
            return []
        self._dirty = False
        recs = reconcile(self.rows, self.files, self.revealed)
        have = len(self.batches) + len(self.constraint_records)
        new = recs[have:]
        for r in new:
            if isinstance(r, BatchRecord):
                if r.row.batch != len(self.batches):
                    raise AssertionError("frontier view diverged")
                self.batches.append(r)
                self.rollbacks.update(r.rollbacks)
                n = r.row.node_id
                self.node_uppers[n] = r.row.lsn_upper
                self.node_records.setdefault(n, []).append(r)
                self.node_batch_ids.setdefault(n, []).append(r.row.batch)
                for t in r.tables:
                    self.table_origins.setdefault(t, set()).add(n)
            else:
                self.constraint_records.append(r)
                self.failures.update(r.failures)
                self.constraint_frontier = r.end_batch
        if new:
            for fn in self._listeners:
                fn(new)
        return new

    def batch_ssn(self, batch: int) -> int:
        return self.batches[batch].ssn_start

    def node_batches(self, node_id: int, below: Optional[int] = None) -> list[BatchRecord]:
        """This node's batch records with batch < ``below``."""
        recs = self.node_records.get(node_id, [])
        if below is None:
            return recs
        return recs[:bisect_left(self.node_batch_ids.get(node_id, []), below)]

    def batch_of_lsn(self, node_id: int, lsn: int) -> Optional[BatchRecord]:
        recs = self.node_records.get(node_id, [])
        i = _bisect_upper(recs, lsn)
        return recs[i] if i < len(recs) else None


# ---------------------------------------------------------------------------
# serializer role


@dataclass
class Heartbeat:
    node_id: int
    hardened_lsn_upper: int
    from_lsn: int = 0
    payload: tuple = ()
    replica_uppers: dict = field(default_factory=dict)
    seq: int = 0
    file_lens: dict = field(default_factory=dict)
    proxy_for: Optional[int] = None


@dataclass
class HeartbeatAck:
    node_id: int
    received_upper: int
    error: Optional[str] = None
    serializer: Optional[int] = None
    seq: int = 0
    rows: tuple = ()
    file_id: Optional[tuple] = None
    revealed: int = 0


@dataclass
class _Intake:
    received_upper: int = 0
    serialized_upper: int = 0
    pending: list = field(default_factory=list)
    last_seen: float = -1.0


class Serializer:
    """Leader-side batching.  One instance per (node, seq) tenure."""

    def __init__(self, node_id: int, seq: int, starting_batch: int = 0,
                 node_uppers: Optional[dict] = None, next_ssn: int = 1,
                 resolver: Optional[ConflictResolver] = None,
                 is_member: Optional[Callable[[int], bool]] = None,
                 prev_file: Optional[tuple] = None, prev_len: int = 0):
        self.node_id = node_id
        self.seq = seq
        self.fid = (node_id, seq)
        self.entries: list = [StartRecord(prev_file, prev_len)]
        self.starting_batch = starting_batch
        self.batch_count = starting_batch
        self.next_ssn = next_ssn
        self.resolver = resolver or ConflictResolver(start_batch=starting_batch)
        self.is_member = is_member or (lambda n: True)
        self.deposed = False
        self.intake: dict[int, _Intake] = {}
        for n, upper in (node_uppers or {}).items():
            self.intake[n] = _Intake(upper, upper)
        self._queue: deque = deque()
        self._queued: set = set()

    @property
    def frontier(self) -> int:
        return self.batch_count

    def rows(self) -> list[SerializeFrontierRow]:
        return [e.row for e in self.entries if isinstance(e, BatchRecord)]

    def lines(self) -> list[str]:
        return serfront_lines(self.entries)

    def known_upper(self, node_id: int) -> int:
        st = self.intake.get(node_id)
        return st.received_upper if st else 0

    def ingest_heartbeat(self, hb: Heartbeat, now: float = 0.0, origin: Optional[int] = None) -> HeartbeatAck:
        """Record the pending range of ``origin`` (the sender unless proxying)."""
        if self.deposed:
            raise NotSerializer(f"node {self.node_id} was deposed")
        origin = hb.node_id if origin is None else origin
        if not self.is_member(origin):
            raise StaleNode(f"node {origin} is not in Nodes")
        st = self.intake.get(origin)
        if st is None:
            st = self.intake[origin] = _Intake()
        if origin == hb.node_id:
            st.last_seen = now
        upper = hb.hardened_lsn_upper
        if upper > st.received_upper and hb.from_lsn <= st.received_upper:
            items = [it for it in hb.payload if st.received_upper <= it.lsn < upper]
            if len(items) == upper - st.received_upper:
                st.pending.extend(items)
                st.received_upper = upper
                if origin not in self._queued:
                    self._queue.append(origin)
                    self._queued.add(origin)
        return HeartbeatAck(hb.node_id, st.received_upper, serializer=self.node_id, seq=self.seq,
                            file_id=self.fid)

    def has_pending(self) -> bool:
        return bool(self._queue)

    def min_pending_snapshot(self) -> Optional[int]:
        snaps = [it.snapshot for st in self.intake.values() for it in st.pending]
        return min(snaps) if snaps else None

    def serialize_batch(self) -> Optional[BatchRecord]:
        """Emit one batch for the next node in arrival order; None when idle."""
        if self.deposed:
            raise Deposed(f"serializer {self.fid} was deposed")
        if not self._queue:
            return None
        pending = self.intake[self._queue[0]].pending
        if pending:
            # may raise if old writes are unreachable; nothing has changed yet
            self.resolver.prefetch(min(it.snapshot for it in pending))
        node = self._queue.popleft()
        self._queued.discard(node)
        st = self.intake[node]
        items = sorted(st.pending, key=lambda it: it.lsn)
        st.pending = []
        batch = self.batch_count
        lower = st.serialized_upper
        row = SerializeFrontierRow(batch, node, st.received_upper)
        work = [(SerialPos(batch, i), it.txn_id, it.snapshot, it.read_set, it.write_keys)
                for i, it in enumerate(items)]
        lost = self.resolver.process_batch(batch, work)
        lost_set = set(lost)
        tables = frozenset().union(*(it.tables for it in items)) if items else frozenset()
        node_rows = tuple(r for it in items if it.txn_id not in lost_set for r in it.node_rows)
        survivors = len(items) - len(lost)
        rec = BatchRecord(row, lower, tuple(lost), self.next_ssn, survivors, tables, node_rows)
        self.next_ssn += survivors
        self.batch_count += 1
        st.serialized_upper = st.received_upper
        self.entries.append(rec)
        return rec

    def append_constraint_record(self, rec: ConstraintRecord) -> None:
        self.entries.append(rec)


def adopt(rows, files) -> dict:
    """Serializer-side recovery: the state a new serializer starts from."""
    recs = reconcile(rows, files)
    node_uppers: dict = {}
    next_ssn = 1
    batches = 0
    c_frontier = 0
    c_state: dict = {}
    failures: list = []
    for r in recs:
        if isinstance(r, BatchRecord):
            node_uppers[r.row.node_id] = r.row.lsn_upper
            next_ssn = r.ssn_start + r.survivors
            batches += 1
        else:
            c_frontier = r.end_batch
            c_state.update(r.state_changes)
            failures.extend(r.failures)
    return {"records": recs, "starting_batch": batches, "node_uppers": node_uppers,
            "next_ssn": next_ssn, "constraint_frontier": c_frontier,
            "constraint_state": c_state, "failures": failures}
