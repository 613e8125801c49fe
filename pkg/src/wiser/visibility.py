"""Snapshot reads: published blocks up to each origin's publish frontier,
decoded log ranges beyond it, minus Rollbacks and ConstraintFailures.

A snapshot is a frontier F (a batch count).  For every origin node the
serialized cut at F is the lsnUpper of its last batch below F; whatever of
that the origin has not yet published (or everything, if the origin is
unreachable) is read back from its log or from a replica.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional

from .log import RangeUnavailable
from .model import Catalog, RowVersion, SerialPos
from .serializer import BatchRecord, FrontierView


class VisibilityLag(Exception):
    pass


@dataclass(frozen=True)
class Eq:
    """Conjunction of column = value."""
    pairs: tuple

    def matches(self, values: dict) -> bool:
        return all(values.get(c) == v for c, v in self.pairs)


@dataclass(frozen=True)
class Range:
    column_id: int
    low: object = None
    high: object = None
    low_inclusive: bool = True
    high_inclusive: bool = True

    def matches(self, values: dict) -> bool:
        v = values.get(self.column_id)
        if v is None:
            return False
        if self.low is not None and (v < self.low or (v == self.low and not self.low_inclusive)):
            return False
        if self.high is not None and (v > self.high or (v == self.high and not self.high_inclusive)):
            return False
        return True


@dataclass(frozen=True)
class FullTable:
    def matches(self, values: dict) -> bool:
        return True


def point_key(schema, pred) -> Optional[tuple]:
    """Primary key tuple if ``pred`` is an equality conjunction covering the full key."""
    if not isinstance(pred, Eq) or not schema.keyed:
        return None
    d = dict(pred.pairs)
    if not all(c in d for c in schema.primary_key):
        return None
    return tuple(d[c] for c in schema.primary_key)


@dataclass
class VisibleSet:
    frontier: int
    published_cut: dict = field(default_factory=dict)
    pending_log_ranges: dict = field(default_factory=dict)
    pending_batches: dict = field(default_factory=dict)
    publishers: dict = field(default_factory=dict)

    @property
    def fully_published(self) -> bool:
        return not self.pending_log_ranges


class Reader:
    """Evaluates predicates for one node.

    ``publisher_of(origin)`` returns the origin's Publisher if reachable,
    else None; ``fetch(origin, lo, hi)`` returns (lsn, Delta) pairs from the
    origin's log or a replica, raising RangeUnavailable.
    """

    def __init__(self, view: FrontierView, catalog: Catalog, publisher_of: Callable,
                 fetch: Callable, cache_batches: int = 4096):
        self.view = view
        self.catalog = catalog
        self.publisher_of = publisher_of
        self.fetch = fetch
        self.cache_batches = cache_batches
        self._cache: OrderedDict = OrderedDict()
        self.pending_decodes = 0

    # -- planning ----------------------------------------------------------

    def plan(self, frontier: int, table_id: Optional[int] = None) -> VisibleSet:
        view = self.view
        if frontier > view.frontier:
            raise VisibilityLag(f"frontier {frontier} beyond locally known {view.frontier}")
        vs = VisibleSet(frontier)
        if table_id is None:
            origins = list(view.node_records)
        else:
            origins = sorted(view.table_origins.get(table_id, ()))
        for o in origins:
            recs = view.node_batches(o, frontier)
            if not recs:
                continue
            ser_cut = recs[-1].row.lsn_upper
            pub = self.publisher_of(o)
            pub_cut = min(pub.frontier, ser_cut) if pub is not None else 0
            vs.published_cut[o] = pub_cut
            vs.publishers[o] = pub
            if pub_cut < ser_cut:
                pend = [r for r in _tail_after(recs, pub_cut)
                        if table_id is None or table_id in r.tables]
                vs.pending_log_ranges[o] = (pub_cut, ser_cut)
                if pend:
                    vs.pending_batches[o] = pend
        return vs

    # -- pending log decoding -----------------------------------------------

    def _decoded(self, origin: int, rec: BatchRecord) -> dict:
        key = rec.row.batch
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        try:
            deltas = self.fetch(origin, rec.lsn_lower, rec.row.lsn_upper)
        except RangeUnavailable as exc:
            raise VisibilityLag(str(exc)) from None
        self.pending_decodes += 1
        rolled = set(rec.rollbacks)
        tables: dict = {}
        ssn = rec.ssn_start
        for within, (_, d) in enumerate(deltas):
            if d.txn_id in rolled:
                continue
            pos = SerialPos(rec.row.batch, within)
            for r in d.upserts:
                schema = self.catalog[r.table_id]
                t = tables.get(r.table_id)
                if t is None:
                    t = tables[r.table_id] = {}
                k = tuple(r.values.get(c) for c in schema.primary_key) if schema.keyed else (ssn, pos)
                t.setdefault(k, []).append(r.stamped(ssn, pos))
            ssn += 1
        self._cache[key] = tables
        if len(self._cache) > self.cache_batches:
            self._cache.popitem(last=False)
        return tables

    # -- evaluation --------------------------------------------------------

    def _latest(self, vs: VisibleSet, table_id: int, key: tuple, hidden) -> Optional[RowVersion]:
        best = None
        for o, pub in vs.publishers.items():
            if pub is not None:
                r = pub.index.latest(table_id, key, vs.frontier, hidden)
                if r is not None and (best is None or r.pos > best.pos):
                    best = r
            for rec in vs.pending_batches.get(o, ()):
                rows = self._decoded(o, rec).get(table_id, {}).get(key)
                if rows:
                    for r in reversed(rows):
                        if hidden and r.ssn in hidden:
                            continue
                        if best is None or r.pos > best.pos:
                            best = r
                        break
        return best

    def evaluate(self, vs: VisibleSet, table_id: int, pred) -> list[RowVersion]:
        schema = self.catalog[table_id]
        hidden = self.view.failures
        key = point_key(schema, pred)
        if key is not None:
            r = self._latest(vs, table_id, key, hidden)
            if r is None or r.is_deleted or not pred.matches(r.values):
                return []
            return [r]
        col = low = high = None
        if isinstance(pred, Range):
            col, low, high = pred.column_id, pred.low, pred.high
        elif isinstance(pred, Eq) and pred.pairs:
            col, low = pred.pairs[0]
            high = low
        candidates: dict = {}
        keyless: list = []
        for o, pub in vs.publishers.items():
            found = []
            if pub is not None:
                found.extend(pub.scan(table_id, vs.frontier, col, low, high))
            for rec in vs.pending_batches.get(o, ()):
                for rows in self._decoded(o, rec).get(table_id, {}).values():
                    found.extend(rows)
            for r in found:
                if (hidden and r.ssn in hidden) or r.is_deleted or not pred.matches(r.values):
                    continue
                if schema.keyed:
                    candidates[r.key(schema)] = r
                else:
                    keyless.append(r)
        if not schema.keyed:
            return sorted(keyless, key=lambda r: r.pos)
        out = []
        for k in sorted(candidates, key=_sort_key):
            r = self._latest(vs, table_id, k, hidden)
            if r is not None and not r.is_deleted and pred.matches(r.values):
                out.append(r)
        return out

    def read(self, frontier: int, table_id: int, pred) -> list[RowVersion]:
        return self.evaluate(self.plan(frontier, table_id), table_id, pred)


def _tail_after(recs, lsn: int):
    """Records whose range ends beyond ``lsn`` (a suffix of ``recs``)."""
    i = len(recs)
    while i > 0 and recs[i - 1].row.lsn_upper > lsn:
        i -= 1
    return recs[i:]


def _sort_key(k):
    return tuple((v is None, type(v).__name__, v if v is not None else 0) for v in k)
