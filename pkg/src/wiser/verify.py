"""History capture and the brute-force oracles.

A History is plain data: every serialized delta in serial order, the
recorded reads of client transactions, Rollbacks, ConstraintFailures and
the consensus rows.  It round-trips through a JSON-lines trace so runs can
be verified offline.

Oracles:
  serializability  replay committed deltas in serial order with plain dicts
                   and re-evaluate every recorded read at its SerialPos
  conflicts        pairwise read/write comparison over the whole window
                   [(snapshot, 0), pos), both on hashes and on values
  constraints      SSN-order replay of the admitted set, plus a greedy
                   sequential oracle for exactness and conservatism
  failover         one accepted row per seq, prefix-consistent views,
                   every promised delta serialized exactly once
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .constraints import AggregationConstraint, contributions, parse_constraint
from .model import (Catalog, Column, Delta, EntryKind, KeyRange, RowVersion, RWEntry, TableSchema,
                    TransactionId, ValueType)
from .serializer import BatchRecord, ConstraintRecord, chain_of
from .txn import TxnState, read_entry_for
from .visibility import Eq, FullTable, Range, point_key


class TraceCorrupt(ValueError):
    pass


class UnknownTxn(KeyError):
    pass


# ---------------------------------------------------------------------------
# history data


@dataclass
class TxnRecord:
    txn_id: TransactionId
    node: int
    lsn: int
    snapshot: int
    upserts: list  # RowVersion
    priors: list  # RowVersion or None, parallel to upserts (may be empty)
    read_set: list  # RWEntry
    write_keys: list  # RWEntry
    reads: Optional[list] = None  # [(table, predicate, [values], implicit)]; None if not captured
    kind: str = ""
    state: Optional[str] = None
    promised: bool = True
    pos: Optional[tuple] = None
    ssn: Optional[int] = None
    begun_at: float = 0.0
    serialized_at: Optional[float] = None

    def delta(self) -> Delta:
        return Delta(self.txn_id, self.snapshot, tuple(self.upserts), tuple(self.read_set),
                     tuple(self.write_keys), tuple(self.priors))


@dataclass
class BatchEntry:
    batch: int
    node: int
    lower: int
    upper: int
    rollbacks: list
    ssn_start: int
    survivors: int
    txns: list  # TransactionId in within order


@dataclass
class ConstraintEntry:
    first: int
    end: int
    failures: list


@dataclass
class History:
    tables: list
    constraints: list  # texts
    strict: bool = False
    txns: dict = field(default_factory=dict)  # TransactionId -> TxnRecord
    batches: list = field(default_factory=list)
    constraint_rounds: list = field(default_factory=list)
    accepted: list = field(default_factory=list)  # (node, seq, starting_batch)
    views: dict = field(default_factory=dict)  # node -> [(batch, node, upper)]
    promised_uppers: dict = field(default_factory=dict)  # node -> hardened-on-quorum upper
    alive: dict = field(default_factory=dict)

    @property
    def catalog(self) -> Catalog:
        return Catalog(self.tables)

    def parsed_constraints(self) -> list[AggregationConstraint]:
        cat = self.catalog
        return [parse_constraint(t, cat) for t in self.constraints]

    def rollbacks(self) -> set:
        return {t for b in self.batches for t in b.rollbacks}

    def failures(self) -> set:
        return {s for r in self.constraint_rounds for s in r.failures}

    def constraint_frontier(self) -> int:
        return self.constraint_rounds[-1].end if self.constraint_rounds else 0

    # -- capture ---------------------------------------------------------

    @classmethod
    def from_cluster(cls, cluster) -> "History":
        c = cluster
        tables = [t for tid, t in sorted(c.catalog.tables.items())]
        h = cls(tables, [con.name for con in c.constraints], c.config.strict_constraint_reads)
        handles = {hd.txn_id: hd for hd, _ in c.txn_log}
        for rec in c.global_records():
            if isinstance(rec, BatchRecord):
                o = rec.row.node_id
                log = c.nodes[o].log
                ids = []
                for lsn in range(rec.lsn_lower, rec.row.lsn_upper):
                    d = log._records[lsn]
                    ids.append(d.txn_id)
                    if d.txn_id not in h.txns:
                        h.txns[d.txn_id] = _record(o, lsn, d, handles.get(d.txn_id))
                h.batches.append(BatchEntry(rec.row.batch, o, rec.lsn_lower, rec.row.lsn_upper,
                                            list(rec.rollbacks), rec.ssn_start, rec.survivors, ids))
            elif isinstance(rec, ConstraintRecord):
                h.constraint_rounds.append(ConstraintEntry(rec.first_batch, rec.end_batch, list(rec.failures)))
        for hd, d in c.txn_log:
            if hd.txn_id not in h.txns:
                h.txns[hd.txn_id] = _record(hd.txn_id.node_id, hd.lsn, d, hd)
        for r in c.accepted_rows():
            h.accepted.append((r.node_id, r.seq, r.starting_batch))
        for nid, n in sorted(c.nodes.items()):
            h.views[nid] = [(b.row.batch, b.row.node_id, b.row.lsn_upper) for b in n.view.batches]
            h.promised_uppers[nid] = n.quorum_upper()
            h.alive[nid] = n.alive
        return h

    # -- serialization ----------------------------------------------------

    def lines(self):
        yield _dump({"rec": "meta", "tables": [_schema_out(t) for t in self.tables],
                     "constraints": self.constraints, "strict": self.strict})
        for t in self.txns.values():
            yield _dump({"rec": "txn", "id": str(t.txn_id), "node": t.node, "lsn": t.lsn,
                         "snapshot": t.snapshot, "kind": t.kind, "state": t.state, "promised": t.promised,
                         "pos": list(t.pos) if t.pos else None, "ssn": t.ssn, "begun_at": t.begun_at,
                         "serialized_at": t.serialized_at,
                         "upserts": [_row_out(r) for r in t.upserts],
                         "priors": [_row_out(r) if r is not None else None for r in t.priors],
                         "read_set": [_entry_out(e) for e in t.read_set],
                         "write_keys": [_entry_out(e) for e in t.write_keys],
                         "reads": None if t.reads is None else
                         [[tb, _pred_out(p), [_vals_out(v) for v in rows], imp] for tb, p, rows, imp in t.reads]})
        for b in self.batches:
            yield _dump({"rec": "batch", "batch": b.batch, "node": b.node, "lower": b.lower, "upper": b.upper,
                         "rollbacks": [str(x) for x in b.rollbacks], "ssn_start": b.ssn_start,
                         "survivors": b.survivors, "txns": [str(x) for x in b.txns]})
        for r in self.constraint_rounds:
            yield _dump({"rec": "constraint", "first": r.first, "end": r.end, "failures": r.failures})
        for node, seq, sb in self.accepted:
            yield _dump({"rec": "accepted", "node": node, "seq": seq, "starting_batch": sb})
        for nid, rows in self.views.items():
            yield _dump({"rec": "view", "node": nid, "rows": [list(r) for r in rows],
                         "promised_upper": self.promised_uppers.get(nid, 0), "alive": self.alive.get(nid, True)})

    def dump(self, path, extra_lines=()) -> None:
        with open(path, "w") as fh:
            for line in extra_lines:
                fh.write(line + "\n")
            for line in self.lines():
                fh.write(line + "\n")

    @classmethod
    def load(cls, path) -> "History":
        try:
            with open(path) as fh:
                raw = [json.loads(line) for line in fh if line.strip()]
        except (OSError, json.JSONDecodeError) as exc:
            raise TraceCorrupt(f"{path}: {exc}") from None
        return cls.from_records(raw)

    @classmethod
    def from_records(cls, raw) -> "History":
        h = None
        try:
            for d in raw:
                kind = d.get("rec")
                if kind is None:
                    continue  # simulator trace record
                if kind == "meta":
                    h = cls([_schema_in(t) for t in d["tables"]], list(d["constraints"]), bool(d["strict"]))
                    continue
                if h is None:
                    raise TraceCorrupt("history records before meta record")
                if kind == "txn":
                    tid = TransactionId.parse(d["id"])
                    h.txns[tid] = TxnRecord(
                        tid, d["node"], d["lsn"], d["snapshot"],
                        [_row_in(r) for r in d["upserts"]],
                        [_row_in(r) if r is not None else None for r in d["priors"]],
                        [_entry_in(e) for e in d["read_set"]], [_entry_in(e) for e in d["write_keys"]],
                        None if d["reads"] is None else
                        [(tb, _pred_in(p), [_vals_in(v) for v in rows], imp) for tb, p, rows, imp in d["reads"]],
                        d["kind"], d["state"], d["promised"], tuple(d["pos"]) if d["pos"] else None,
                        d["ssn"], d["begun_at"], d["serialized_at"])
                elif kind == "batch":
                    h.batches.append(BatchEntry(d["batch"], d["node"], d["lower"], d["upper"],
                                                [TransactionId.parse(x) for x in d["rollbacks"]], d["ssn_start"],
                                                d["survivors"], [TransactionId.parse(x) for x in d["txns"]]))
                elif kind == "constraint":
                    h.constraint_rounds.append(ConstraintEntry(d["first"], d["end"], list(d["failures"])))
                elif kind == "accepted":
                    h.accepted.append((d["node"], d["seq"], d["starting_batch"]))
                elif kind == "view":
                    h.views[d["node"]] = [tuple(r) for r in d["rows"]]
                    h.promised_uppers[d["node"]] = d["promised_upper"]
                    h.alive[d["node"]] = d["alive"]
                else:
                    raise TraceCorrupt(f"unknown record kind {kind!r}")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, TraceCorrupt):
                raise
            raise TraceCorrupt(f"malformed history record: {exc!r}") from None
        if h is None:
            raise TraceCorrupt("trace has no history")
        for b in h.batches:
            for t in b.txns:
                if t not in h.txns:
                    raise TraceCorrupt(f"batch {b.batch} names unknown txn {t}")
        return h

    # -- status ----------------------------------------------------------

    def status(self, txn_id: TransactionId) -> tuple[str, Optional[int]]:
        """Stage from frontiers, Rollbacks and ConstraintFailures: (state, ssn)."""
        t = self.txns.get(txn_id)
        if t is None:
            raise UnknownTxn(str(txn_id))
        for b in self.batches:
            if b.node == t.node and b.lower <= t.lsn < b.upper:
                if t.txn_id in b.rollbacks:
                    return TxnState.ROLLED_BACK_CONFLICT.value, None
                ssn = _ssn_in(b, t.txn_id)
                if self.constraints:
                    if b.batch >= self.constraint_frontier():
                        return TxnState.SERIALIZED.value, ssn
                    if ssn in self.failures():
                        return TxnState.ROLLED_BACK_CONSTRAINT.value, ssn
                return TxnState.COMMITTED.value, ssn
        return (TxnState.PROMISED.value if t.promised else TxnState.ACTIVE.value), None


def _ssn_in(b: BatchEntry, tid) -> int:
    rolled = set(b.rollbacks)
    ssn = b.ssn_start
    for t in b.txns:
        if t == tid:
            return ssn
        if t not in rolled:
            ssn += 1
    raise KeyError(tid)


def _record(node: int, lsn: int, d: Delta, hd) -> TxnRecord:
    rec = TxnRecord(d.txn_id, node, lsn, d.snapshot, list(d.upserts), list(d.priors), list(d.read_set),
                    list(d.write_keys))
    if hd is not None:
        rec.reads = [(r.table_id, r.predicate, [dict(v) for v in r.rows], r.implicit) for r in hd.reads]
        rec.kind = hd.kind
        rec.state = hd.state.value
        rec.promised = hd.promised_at is not None
        rec.pos = tuple(hd.pos) if hd.pos is not None else None
        rec.ssn = hd.ssn
        rec.begun_at = hd.begun_at
        rec.serialized_at = hd.serialized_at
    return rec


# -- JSON helpers -------------------------------------------------------------

def _dump(d) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def _vals_out(values: dict) -> list:
    return [[c, values[c]] for c in sorted(values)]


def _vals_in(pairs) -> dict:
    return {int(c): v for c, v in pairs}


def _row_out(r: RowVersion) -> list:
    return [r.table_id, _vals_out(r.values), r.is_deleted, str(r.txn_id) if r.txn_id else None]


def _row_in(x) -> RowVersion:
    return RowVersion(x[0], _vals_in(x[1]), bool(x[2]), TransactionId.parse(x[3]) if x[3] else None)


def _entry_out(e: RWEntry) -> list:
    return [int(e.kind), e.table_id, e.key_hash, list(e.range) if e.range is not None else None,
            [list(cv) for cv in e.column_values]]


def _entry_in(x) -> RWEntry:
    return RWEntry(EntryKind(x[0]), x[1], x[2], KeyRange(*x[3]) if x[3] is not None else None,
                   tuple(tuple(cv) for cv in x[4]))


def _pred_out(p) -> dict:
    if isinstance(p, Eq):
        return {"eq": [list(cv) for cv in p.pairs]}
    if isinstance(p, Range):
        return {"range": [p.column_id, p.low, p.high, p.low_inclusive, p.high_inclusive]}
    return {"full": True}


def _pred_in(d):
    if "eq" in d:
        return Eq(tuple(tuple(cv) for cv in d["eq"]))
    if "range" in d:
        return Range(*d["range"])
    if "full" in d:
        return FullTable()
    raise TraceCorrupt(f"bad predicate {d!r}")


def _schema_out(t: TableSchema) -> dict:
    return {"id": t.table_id, "name": t.name, "columns": [[c.column_id, c.name, int(c.type)] for c in t.columns],
            "pk": list(t.primary_key), "range": sorted(t.range_indexed)}


def _schema_in(d) -> TableSchema:
    return TableSchema(d["id"], d["name"], tuple(Column(i, n, ValueType(ty)) for i, n, ty in d["columns"]),
                       tuple(d["pk"]), frozenset(d["range"]))


# ---------------------------------------------------------------------------
# oracles


@dataclass
class Verdict:
    name: str
    ok: bool
    detail: str = ""
    cases: list = field(default_factory=list)

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}" + (f"  ({self.detail})" if self.detail else "")


def _sort_key(k):
    return tuple((v is None, type(v).__name__, v if v is not None else 0) for v in k)


def _evaluate(state: dict, schema: TableSchema, pred) -> list:
    rows = state.get(schema.table_id)
    if rows is None:
        return []
    if schema.keyed:
        key = point_key(schema, pred)
        if key is not None:
            v = rows.get(key)
            return [v] if v is not None and pred.matches(v) else []
        return [rows[k] for k in sorted(rows, key=_sort_key) if pred.matches(rows[k])]
    return [v for v in rows if pred.matches(v)]


def _apply(state: dict, schema: TableSchema, row: RowVersion) -> None:
    t = state.setdefault(schema.table_id, {} if schema.keyed else [])
    if schema.keyed:
        k = tuple(row.values.get(c) for c in schema.primary_key)
        if row.is_deleted:
            t.pop(k, None)
        else:
            t[k] = dict(row.values)
    elif not row.is_deleted:
        t.append(dict(row.values))


def _same_rows(schema, got: list, want: list) -> bool:
    if schema.keyed:
        return got == want
    canon = lambda rows: sorted(tuple(sorted(r.items())) for r in rows)  # noqa: E731
    return canon(got) == canon(want)


def serial_order(h: History):
    """(batch, within, TxnRecord, committed) in SerialPos order."""
    rolled = h.rollbacks()
    failed = h.failures()
    for b in h.batches:
        ssn = b.ssn_start
        for w, tid in enumerate(b.txns):
            t = h.txns[tid]
            if tid in rolled:
                yield b.batch, w, t, None
                continue
            yield b.batch, w, t, (ssn if ssn not in failed else -ssn)
            ssn += 1


def check_serializability(h: History, pending_ok: bool = False) -> Verdict:
    """Every committed txn's recorded reads equal re-evaluation at its SerialPos."""
    cat = h.catalog
    c_front = h.constraint_frontier()
    state: dict = {}
    bad = []
    checked = 0
    for b, w, t, ssn in serial_order(h):
        if ssn is None or ssn < 0:
            continue
        if h.constraints and b >= c_front:
            if not pending_ok:
                continue
        if t.reads is not None:
            checked += 1
            for tb, pred, rows, implicit in t.reads:
                got = _evaluate(state, cat[tb], pred)
                if not _same_rows(cat[tb], rows, got):
                    bad.append((str(t.txn_id), (b, w), tb, pred, rows, got))
                    break
        for r in t.upserts:
            _apply(state, cat[r.table_id], r)
    return Verdict("serializability", not bad, f"{checked} committed txns replayed, {len(bad)} mismatches", bad)


def _hash_conflict(e: RWEntry, w: RWEntry) -> bool:
    if e.kind is EntryKind.EQ_READ:
        return e.key_hash == w.key_hash
    if e.table_id != w.table_id:
        return False
    if e.kind is EntryKind.TABLE_READ:
        return True
    if e.kind is EntryKind.RANGE_READ:
        return any(c == e.range.column_id and v is not None and e.range.contains(v) for c, v in w.column_values)
    return False


def _value_items(t: TxnRecord, cat: Catalog):
    """Read-set entries with equality hashes replaced by the actual keys."""
    if t.reads is None:
        return None
    items = []
    for tb, pred, _, _ in t.reads:
        schema = cat[tb]
        e = read_entry_for(schema, pred)
        if e.kind is EntryKind.EQ_READ:
            items.append(("key", tb, point_key(schema, pred)))
        elif e.kind is EntryKind.RANGE_READ:
            items.append(("range", tb, e.range))
        else:
            items.append(("table", tb, None))
    for r in t.upserts:
        schema = cat[r.table_id]
        if schema.keyed:
            items.append(("key", r.table_id, r.key(schema)))
    return items


def _value_writes(t: TxnRecord, cat: Catalog):
    out = []
    for r, w in zip(t.upserts, t.write_keys):
        schema = cat[r.table_id]
        out.append((r.table_id, r.key(schema) if schema.keyed else None, w.column_values))
    return out


def _value_conflict(item, write) -> bool:
    kind, tb, arg = item
    wt, wkey, cvs = write
    if tb != wt:
        return False
    if kind == "key":
        return wkey is not None and wkey == arg
    if kind == "range":
        return any(c == arg.column_id and v is not None and arg.contains(v) for c, v in cvs)
    return True


def check_conflicts(h: History) -> Verdict:
    """Resolver output vs brute force over every write in [(snapshot, 0), pos).

    Hash level: the Rollbacks set must be reproduced exactly.  Value level
    over committed writers only: no false negatives, and every extra rollback
    must be a cascade (it conflicts with a rolled-back writer) or a hash
    collision (hashes match, values do not).
    """
    cat = h.catalog
    rolled = h.rollbacks()
    order = list(serial_order(h))
    seq = [(b, w, t) for b, w, t, _ in order]
    dead = rolled | {t.txn_id for _, _, t, ssn in order if ssn is not None and ssn < 0}
    bad = []
    audit = []
    for i, (b, w, t) in enumerate(seq):
        snap = t.snapshot
        window = []
        j = i - 1
        while j >= 0 and seq[j][0] >= snap:
            window.append(seq[j][2])
            j -= 1
        hash_hit = any(_hash_conflict(e, we) for wt in window for we in wt.write_keys for e in t.read_set)
        lost = t.txn_id in rolled
        if hash_hit != lost:
            bad.append((str(t.txn_id), "hash-level", hash_hit, lost))
            continue
        items = _value_items(t, cat)
        if items is None:
            continue
        committed_hit = any(_value_conflict(it, vw) for wt in window if wt.txn_id not in dead
                            for vw in _value_writes(wt, cat) for it in items)
        if committed_hit and not lost:
            bad.append((str(t.txn_id), "false negative", True, lost))
        elif lost and not committed_hit:
            cascade = any(_value_conflict(it, vw) for wt in window if wt.txn_id in dead
                          for vw in _value_writes(wt, cat) for it in items)
            audit.append((str(t.txn_id), "cascade" if cascade else "hash collision"))
    detail = f"{len(rolled)} rollbacks, {len(audit)} attributed false positives, {len(bad)} violations"
    return Verdict("conflicts", not bad, detail, bad or audit)


def _replay_constraints(h: History):
    """(ssn, batch, contributions) for conflict survivors in SSN order."""
    cons = h.parsed_constraints()
    out = []
    for b, _, t, ssn in serial_order(h):
        if ssn is None:
            continue
        out.append((abs(ssn), b, contributions(t.delta(), cons)))
    return cons, out


def check_constraint_soundness(h: History) -> Verdict:
    """Replaying the admitted set in SSN order never breaks a constraint."""
    if not h.constraints:
        return Verdict("constraint soundness", True, "no constraints")
    cons, txns = _replay_constraints(h)
    failed = h.failures()
    front = h.constraint_frontier()
    state: dict = {}
    bad = []
    for ssn, b, cs in txns:
        if b >= front or ssn in failed:
            continue
        for k, v in cs.items():
            state[k] = state.get(k, 0) + v
            if not cons[k[0]].ok(state[k]):
                bad.append((ssn, k, state[k]))
    return Verdict("constraint soundness", not bad, f"{len(bad)} violations", bad)


def greedy_exclusions(cons, txns) -> set:
    """Sequential oracle: admit each txn in SSN order iff it keeps every constraint."""
    state: dict = {}
    out = set()
    for ssn, _, cs in txns:
        if any(not cons[k[0]].ok(state.get(k, 0) + v) for k, v in cs.items()):
            out.add(ssn)
            continue
        for k, v in cs.items():
            state[k] = state.get(k, 0) + v
    return out


def check_constraint_conservatism(h: History) -> Verdict:
    """Exclusions must cover the greedy sequential oracle's exclusions."""
    if not h.constraints:
        return Verdict("constraint conservatism", True, "no constraints")
    cons, txns = _replay_constraints(h)
    front = h.constraint_frontier()
    oracle = greedy_exclusions(cons, [t for t in txns if t[1] < front])
    missing = sorted(oracle - h.failures())
    return Verdict("constraint conservatism", not missing,
                   f"oracle excludes {len(oracle)}, resolver {len(h.failures())}, missing {len(missing)}", missing)


def check_failover(h: History) -> Verdict:
    problems = []
    seen: dict = {}
    for node, seq, sb in h.accepted:
        if seq in seen and seen[seq] != (node, sb):
            problems.append(f"two accepted rows for seq {seq}")
        seen[seq] = (node, sb)
    glob = [(b.batch, b.node, b.upper) for b in h.batches]
    for nid, rows in h.views.items():
        if rows != glob[:len(rows)]:
            problems.append(f"view of node {nid} is not a prefix of the reconciled order")
    for i, b in enumerate(h.batches):
        if b.batch != i:
            problems.append(f"batch ordinal gap at {i}")
            break
    uppers: dict = {}
    for b in h.batches:
        if b.lower != uppers.get(b.node, 0):
            problems.append(f"node {b.node}: batch {b.batch} starts at {b.lower}, expected {uppers.get(b.node, 0)}")
        uppers[b.node] = b.upper
    seen_ids: set = set()
    for b in h.batches:
        for t in b.txns:
            if t in seen_ids:
                problems.append(f"{t} serialized twice")
            seen_ids.add(t)
    for nid, up in h.promised_uppers.items():
        if uppers.get(nid, 0) < up:
            problems.append(f"node {nid}: promised upper {up} but serialized only {uppers.get(nid, 0)}")
    for t in h.txns.values():
        if t.promised and t.txn_id not in seen_ids and t.state is not None:
            problems.append(f"promised {t.txn_id} never serialized")
    return Verdict("failover safety", not problems, f"{len(problems)} problems", problems)


def check_strict(h: History) -> Verdict:
    """A txn begun after another's Serialize, at a covering frontier, sees its writes."""
    cat = h.catalog
    committed = {}
    for b, w, t, ssn in serial_order(h):
        if ssn is not None and ssn > 0:
            committed[t.txn_id] = (b, w)
    bad = []
    pairs = 0
    order = sorted((t for t in h.txns.values() if t.txn_id in committed), key=lambda t: committed[t.txn_id])
    history_writes: dict = {}
    for t in order:
        for r in t.upserts:
            schema = cat[r.table_id]
            if schema.keyed:
                history_writes.setdefault((r.table_id, r.key(schema)), []).append((committed[t.txn_id], t, r))
    for t2 in order:
        if t2.reads is None:
            continue
        for tb, pred, rows, _ in t2.reads:
            schema = cat[tb]
            key = point_key(schema, pred)
            if key is None:
                continue
            ws = history_writes.get((tb, key), [])
            # latest committed write that T2's begin followed and its frontier covered
            prior = [x for x in ws if x[1].serialized_at is not None and x[1].serialized_at <= t2.begun_at
                     and x[0][0] < t2.snapshot and x[0] < committed[t2.txn_id]]
            if not prior:
                continue
            pairs += 1
            (_, t1, r1) = prior[-1]
            later = [x for x in ws if prior[-1][0] < x[0] < committed[t2.txn_id]]
            if later:
                continue  # a newer write intervened; serializability covers that case
            want = [] if r1.is_deleted or not pred.matches(r1.values) else [r1.values]
            if rows != want:
                bad.append((str(t1.txn_id), str(t2.txn_id), key))
    return Verdict("strict serializability", not bad, f"{pairs} ordered pairs, {len(bad)} stale reads", bad)


def verify_history(h: History) -> list[Verdict]:
    return [check_serializability(h), check_conflicts(h), check_constraint_soundness(h),
            check_constraint_conservatism(h), check_failover(h), check_strict(h)]


# ---------------------------------------------------------------------------
# resolver-level constraint histories (no cluster)

CASE_TABLE = TableSchema(1, "T", (Column(0, "id", ValueType.INT64), Column(1, "grp", ValueType.INT64),
                                  Column(2, "qty", ValueType.INT64)), (0,))
CASE_CONSTRAINT = "SUM(qty) >= 0 ON T GROUP BY grp"


@dataclass
class ConstraintCase:
    seed: int
    excluded: set
    oracle: set
    violations: list
    rounds: list  # batch counts per round

    @property
    def sound(self) -> bool:
        return not self.violations

    @property
    def covers_oracle(self) -> bool:
        return self.oracle <= self.excluded

    @property
    def exact(self) -> bool:
        return self.oracle == self.excluded


def constraint_case(seed: int, nodes: Optional[int] = None, single_batch_rounds: bool = False,
                    workers: int = 1) -> ConstraintCase:
    """Random batches fed through ConstraintResolver, compared with the greedy oracle."""
    import random
    from .constraints import ConstraintResolver, partial_aggregate

    rng = random.Random(f"constraint-case-{seed}")
    cat = Catalog([CASE_TABLE])
    cons = [parse_constraint(CASE_CONSTRAINT, cat)]
    nodes = nodes or rng.randint(1, 4)
    groups = rng.randint(1, 3)
    ssn = 1
    rid = 0
    batches = []  # (node, [(ssn, Delta)])
    for b in range(rng.randint(1, 8)):
        node = rng.randrange(nodes)
        txns = []
        for _ in range(rng.randint(1, 5)):
            rows = []
            for _ in range(rng.randint(1, 2)):
                rid += 1
                rows.append(RowVersion(1, {0: rid, 1: rng.randrange(groups), 2: rng.choice((-4, -3, -2, -1, 1, 2, 3, 4))}))
            txns.append((ssn, Delta(TransactionId(node, ssn), 0, tuple(rows))))
            ssn += 1
        batches.append((node, txns))
    res = ConstraintResolver(cons, workers)
    excluded: set = set()
    rounds = []
    i = 0
    while i < len(batches):
        used = set()
        part = []
        limit = 1 if single_batch_rounds else rng.randint(1, nodes)
        while i < len(batches) and len(part) < limit and batches[i][0] not in used:
            node, txns = batches[i]
            used.add(node)
            part.append(partial_aggregate(node, i, txns, cons))
            i += 1
        r = res.resolve_round(part)
        excluded.update(r.excluded)
        rounds.append(len(part))
    flat = [(s, b, contributions(d, cons)) for b, (_, txns) in enumerate(batches) for s, d in txns]
    oracle = greedy_exclusions(cons, flat)
    state: dict = {}
    bad = []
    for s, _, cs in flat:
        if s in excluded:
            continue
        for k, v in cs.items():
            state[k] = state.get(k, 0) + v
            if not cons[k[0]].ok(state[k]):
                bad.append((s, k, state[k]))
    return ConstraintCase(seed, excluded, oracle, bad, rounds)


def clamp_example() -> list:
    """Prefix values around a batch that takes the running sum from 12 to -5."""
    from .constraints import PartialAggregate, compute_prefixes

    cat = Catalog([CASE_TABLE])
    cons = [parse_constraint(CASE_CONSTRAINT, cat)]
    key = (0, (7,))
    first = PartialAggregate(0, 0, {key: 12}, [(1, {key: 12})])
    second = PartialAggregate(1, 1, {key: -17}, [(2, {key: -17})])
    return [p[key] for p in compute_prefixes([first, second], {}, cons)]
