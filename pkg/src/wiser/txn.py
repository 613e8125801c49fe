"""Client-side transactions: snapshot reads with read-set capture, staged
upserts, and the Promise -> Serialize -> outcome pipeline.

A transaction never talks to the serializer.  ``promise`` appends the delta
to the local log and waits for a quorum of copies; the outcome arrives later
through the node's view of the serialized stream.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .log import PromiseReceipt
from .model import (Delta, RowVersion, SerialPos, TransactionId, eq_read, key_hash, range_read,
                    row_key_hash, table_read, write_entry, KeyRange, SchemaViolation)
from .serializer import BatchRecord
from .simnet import Future, SimTimeout
from .visibility import Eq, FullTable, Range, point_key


class TxnState(Enum):
    ACTIVE = "Active"
    PROMISED = "Promised"
    SERIALIZED = "Serialized"
    COMMITTED = "Committed"
    ROLLED_BACK_CONFLICT = "RolledBackConflict"
    ROLLED_BACK_CONSTRAINT = "RolledBackConstraint"
    UNKNOWN = "Unknown"

    @property
    def final(self) -> bool:
        return self in (TxnState.COMMITTED, TxnState.ROLLED_BACK_CONFLICT, TxnState.ROLLED_BACK_CONSTRAINT)


class InvalidState(Exception):
    pass


class PromiseTimeout(Exception):
    pass


@dataclass
class ReadRecord:
    """One read as seen at the snapshot, before the own-writes overlay."""
    table_id: int
    predicate: object
    rows: tuple  # value dicts, in result order
    implicit: bool = False


@dataclass
class TransactionHandle:
    txn_id: TransactionId
    snapshot: int
    state: TxnState = TxnState.ACTIVE
    staged: dict = field(default_factory=dict)  # (table, key) -> RowVersion
    keyless: list = field(default_factory=list)
    priors: dict = field(default_factory=dict)  # (table, key) -> prior RowVersion or None
    read_set: list = field(default_factory=list)
    reads: list = field(default_factory=list)
    lsn: Optional[int] = None
    pos: Optional[SerialPos] = None
    ssn: Optional[int] = None
    begun_at: float = 0.0
    promised_at: Optional[float] = None
    serialized_at: Optional[float] = None
    resolved_at: Optional[float] = None
    durable: bool = False
    kind: str = ""
    _outcome: Future = field(default_factory=Future, repr=False)
    _key_hashes: dict = field(default_factory=dict, repr=False)

    def upserts(self) -> list[RowVersion]:
        return list(self.staged.values()) + self.keyless


def read_entry_for(schema, pred):
    """Read-set entry for a predicate, escalating to the table when needed."""
    key = point_key(schema, pred)
    if key is not None:
        return eq_read(schema.table_id, key_hash(schema.table_id, list(zip(schema.primary_key, key))))
    if isinstance(pred, Eq):
        for c, v in pred.pairs:
            if c in schema.range_indexed:
                return range_read(schema.table_id, KeyRange(c, v, v))
        return table_read(schema.table_id)
    if isinstance(pred, Range) and pred.column_id in schema.range_indexed:
        return range_read(schema.table_id, KeyRange(pred.column_id, pred.low, pred.high,
                                                    pred.low_inclusive, pred.high_inclusive))
    return table_read(schema.table_id)


def write_entry_for(schema, row: RowVersion, prior: Optional[RowVersion], kh: Optional[int] = None):
    cvs = []
    for c in sorted(schema.range_indexed):
        seen = set()
        for src in (prior, row):
            if src is None or src.is_deleted:
                continue
            v = src.values.get(c)
            if v is not None and v not in seen:
                seen.add(v)
                cvs.append((c, v))
    if kh is None:
        kh = row_key_hash(schema, row.values)
    return write_entry(schema.table_id, kh, cvs)


class TxnEngine:
    """Per-node transaction execution.  ``node`` supplies view, reader, log and clock."""

    def __init__(self, node, constraint_tables=frozenset(), strict_constraint_reads: bool = False,
                 promise_timeout: float = 2000.0, history: Optional[Callable] = None):
        self.node = node
        self.constraint_tables = frozenset(constraint_tables)
        self.has_constraints = bool(constraint_tables)
        self.strict = strict_constraint_reads
        self.promise_timeout = promise_timeout
        self.history = history
        self.next_seq = 0
        self.inflight: dict[int, TransactionHandle] = {}
        self.awaiting_constraints: list[TransactionHandle] = []
        self.handles: list[TransactionHandle] = []

    # -- lifecycle -------------------------------------------------------

    def begin(self, kind: str = "") -> TransactionHandle:
        view = self.node.view
        snap = view.frontier
        if self.strict and self.has_constraints:
            snap = min(snap, view.constraint_frontier)
        h = TransactionHandle(TransactionId(self.node.node_id, self.next_seq), snap,
                              begun_at=self.node.sim.now(), kind=kind)
        self.next_seq += 1
        return h

    def _check_active(self, h: TransactionHandle) -> None:
        if h.state is not TxnState.ACTIVE or h.durable:
            raise InvalidState(f"{h.txn_id} is {h.state.value}")

    def read(self, h: TransactionHandle, table_id: int, pred) -> list[RowVersion]:
        self._check_active(h)
        schema = self.node.catalog[table_id]
        base = self.node.reader.read(h.snapshot, table_id, pred)
        h.reads.append(ReadRecord(table_id, pred, tuple(r.values for r in base)))
        h.read_set.append(read_entry_for(schema, pred))
        return self._overlay(h, schema, pred, base)

    def _overlay(self, h, schema, pred, base):
        t = schema.table_id
        if schema.keyed:
            mine = {k[1]: r for k, r in h.staged.items() if k[0] == t}
            if not mine:
                return base
            out = {}
            for r in base:
                out[r.key(schema)] = r
            for k, r in mine.items():
                if r.is_deleted or not pred.matches(r.values):
                    out.pop(k, None)
                else:
                    out[k] = r
            key = point_key(schema, pred)
            if key is not None:
                return [out[key]] if key in out else []
            return [out[k] for k in sorted(out, key=_key_sort)]
        extra = [r for r in h.keyless if r.table_id == t and pred.matches(r.values)]
        return base + extra

    def _prior(self, h, schema, key) -> Optional[RowVersion]:
        pred = Eq(tuple(zip(schema.primary_key, key)))
        base = self.node.reader.read(h.snapshot, schema.table_id, pred)
        h.reads.append(ReadRecord(schema.table_id, pred, tuple(r.values for r in base), implicit=True))
        return base[0] if base else None

    def upsert(self, h: TransactionHandle, table_id: int, values: dict, deleted: bool = False) -> None:
        self._check_active(h)
        schema = self.node.catalog[table_id]
        values = dict(values)
        if not deleted:
            schema.check_row(values)
        row = RowVersion(table_id, values, deleted, h.txn_id)
        if not schema.keyed:
            h.keyless.append(row)
            return
        key = schema.key_of(values)
        if any(v is None for v in key):
            raise SchemaViolation(f"{schema.name}: key column is null")
        sk = (table_id, key)
        if sk not in h.priors:
            need = bool(schema.range_indexed) or table_id in self.constraint_tables
            h.priors[sk] = self._prior(h, schema, key) if need else None
            kh = h._key_hashes[sk] = row_key_hash(schema, values)
            h.read_set.append(eq_read(table_id, kh))
        h.staged.pop(sk, None)
        h.staged[sk] = row

    def delete(self, h: TransactionHandle, table_id: int, key_values: dict) -> None:
        self.upsert(h, table_id, key_values, deleted=True)

    def build_delta(self, h: TransactionHandle) -> Delta:
        cat = self.node.catalog
        upserts, priors, writes = [], [], []
        for sk, row in h.staged.items():
            prior = h.priors.get(sk)
            upserts.append(row)
            priors.append(prior)
            writes.append(write_entry_for(cat[sk[0]], row, prior, h._key_hashes.get(sk)))
        for row in h.keyless:
            upserts.append(row)
            priors.append(None)
            writes.append(write_entry_for(cat[row.table_id], row, None))
        has_priors = any(p is not None for p in priors)
        return Delta(h.txn_id, h.snapshot, tuple(upserts), tuple(h.read_set), tuple(writes),
                     tuple(priors) if has_priors else ())

    def promise(self, h: TransactionHandle) -> Future:
        """Append and replicate the delta; resolves with a PromiseReceipt."""
        self._check_active(h)
        node = self.node
        delta = self.build_delta(h)
        h.lsn = node.append_delta(delta)
        h.durable = True
        self.inflight[h.lsn] = h
        self.handles.append(h)
        if self.history is not None:
            self.history(h, delta)
        out = Future()
        waiter = node.sim.with_deadline(node.wait_quorum(h.lsn), node.sim.now() + self.promise_timeout)

        def done(f):
            if f.error is not None:
                out.set_error(PromiseTimeout(f"{h.txn_id} not hardened on a quorum in time")
                              if isinstance(f.error, SimTimeout) else f.error)
                return
            if h.state is TxnState.ACTIVE:
                h.state = TxnState.PROMISED
            h.promised_at = node.sim.now()
            out.set_result(PromiseReceipt(node.node_id, h.lsn))

        waiter.add_done_callback(done)
        return out

    def await_outcome(self, h: TransactionHandle, deadline: Optional[float] = None) -> Future:
        """Resolves with the final TxnState, or UNKNOWN at ``deadline``."""
        if h.lsn is None:
            raise InvalidState(f"{h.txn_id} was never promised")
        if h.state.final or deadline is None:
            return h._outcome
        out = Future()
        ev = self.node.sim.at(deadline, lambda: out.set_result(TxnState.UNKNOWN))

        def relay(f):
            ev.cancel()
            out.set_result(f.value)

        h._outcome.add_done_callback(relay)
        return out

    # -- outcome tracking ------------------------------------------------

    def on_batch(self, rec: BatchRecord, deltas) -> None:
        """One of this node's batches became visible; ``deltas`` are its (lsn, Delta)."""
        now = self.node.sim.now()
        rolled = set(rec.rollbacks)
        ssn = rec.ssn_start
        for within, (lsn, d) in enumerate(deltas):
            h = self.inflight.pop(lsn, None)
            lost = d.txn_id in rolled
            if h is not None:
                h.pos = SerialPos(rec.row.batch, within)
                h.serialized_at = now
                if h.state in (TxnState.ACTIVE, TxnState.PROMISED):
                    h.state = TxnState.SERIALIZED
                if lost:
                    self._finish(h, TxnState.ROLLED_BACK_CONFLICT)
                else:
                    h.ssn = ssn
                    if self.has_constraints:
                        self.awaiting_constraints.append(h)
                    else:
                        self._finish(h, TxnState.COMMITTED)
            if not lost:
                ssn += 1

    def on_constraints(self) -> None:
        view = self.node.view
        keep = []
        for h in self.awaiting_constraints:
            if h.pos.batch < view.constraint_frontier:
                self._finish(h, TxnState.ROLLED_BACK_CONSTRAINT if h.ssn in view.failures
                             else TxnState.COMMITTED)
            else:
                keep.append(h)
        self.awaiting_constraints = keep

    def _finish(self, h: TransactionHandle, state: TxnState) -> None:
        h.state = state
        h.resolved_at = self.node.sim.now()
        h._outcome.set_result(state)


def _key_sort(k):
    return tuple((v is None, type(v).__name__, v if v is not None else 0) for v in k)


__all__ = ["TxnState", "TransactionHandle", "TxnEngine", "ReadRecord", "InvalidState",
           "PromiseTimeout", "read_entry_for", "write_entry_for", "FullTable", "Range", "Eq"]
