"""Lazy aggregation-constraint resolution over published batches.

A round takes contiguous batches (at most one per node).  Each node reports
a per-group partial aggregate for its batch; the resolver turns those into
clamped prefix values at every batch boundary; each node then re-walks its
batch in SSN order starting from its prefix and excludes the transactions
that would break a constraint.  Exclusions are not fed back into the
prefixes of the same round.  Between rounds the resolver carries the exact
admitted aggregate forward.

State keys are (constraint index, group key) pairs so several constraints
are resolved jointly: a transaction is excluded when it would break any of
them.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .model import Catalog, Delta, encode_value, hash64


class NotPublished(Exception):
    pass


@dataclass(frozen=True)
class AggregationConstraint:
    table_id: int
    group_by: tuple
    aggregate: str  # "SUM" or "COUNT"
    column_id: Optional[int]
    comparison: str  # ">=" or "<="
    threshold: float
    name: str = ""

    def __post_init__(self):
        if self.aggregate not in ("SUM", "COUNT"):
            raise ValueError(f"unsupported aggregate {self.aggregate}")
        if self.comparison not in (">=", "<="):
            raise ValueError(f"unsupported comparison {self.comparison}")
        if self.aggregate == "SUM" and self.column_id is None:
            raise ValueError("SUM needs a column")

    def ok(self, value) -> bool:
        return value >= self.threshold if self.comparison == ">=" else value <= self.threshold

    def adverse(self, contribution) -> bool:
        return contribution < 0 if self.comparison == ">=" else contribution > 0

    def clamp(self, value):
        return value if self.ok(value) else self.threshold

    def row_value(self, row) -> float:
        if row is None or row.is_deleted:
            return 0
        if self.aggregate == "COUNT":
            return 1
        v = row.values.get(self.column_id)
        return 0 if v is None else v

    def group_of(self, row) -> tuple:
        return tuple(row.values.get(c) for c in self.group_by)

    def describe(self, catalog: Optional[Catalog] = None) -> str:
        if catalog is not None:
            t = catalog[self.table_id]
            col = t.column(self.column_id).name if self.column_id is not None else ""
            groups = ",".join(t.column(c).name for c in self.group_by)
            tname = t.name
        else:
            col, groups, tname = str(self.column_id), ",".join(map(str, self.group_by)), str(self.table_id)
        agg = f"SUM({col})" if self.aggregate == "SUM" else "COUNT(*)"
        return f"{agg} {self.comparison} {self.threshold:g} ON {tname} GROUP BY {groups}"


_CONSTRAINT_RE = re.compile(
    r"^\s*(SUM|COUNT)\s*\(\s*([\w*]*)\s*\)\s*(>=|<=)\s*(-?[\d.]+)\s+ON\s+(\w+)"
    r"(?:\s+GROUP\s+BY\s+([\w,\s]+))?\s*$", re.IGNORECASE)


def parse_constraint(text: str, catalog: Catalog) -> AggregationConstraint:
    """``SUM(qty) >= 0 ON Orders GROUP BY productId`` or ``COUNT(*) <= 5 ON T``."""
    m = _CONSTRAINT_RE.match(text)
    if not m:
        raise ValueError(f"cannot parse constraint {text!r}")
    agg, col, cmp, thr, tname, groups = m.groups()
    schema = catalog.by_name(tname)
    agg = agg.upper()
    column_id = schema.col_id(col) if agg == "SUM" else None
    group_by = tuple(schema.col_id(g.strip()) for g in groups.split(",")) if groups else ()
    thr_v = float(thr)
    if thr_v.is_integer():
        thr_v = int(thr_v)
    return AggregationConstraint(schema.table_id, group_by, agg, column_id, cmp, thr_v, text.strip())


def contributions(delta: Delta, constraints) -> dict:
    """Net effect of one transaction: {(constraint index, group): value}, zeros dropped.

    An upsert contributes its new row minus the prior row it replaced.
    """
    out: dict = {}
    priors = delta.priors or (None,) * len(delta.upserts)
    for ci, c in enumerate(constraints):
        for row, prior in zip(delta.upserts, priors):
            if row.table_id != c.table_id:
                continue
            if not row.is_deleted:
                k = (ci, c.group_of(row))
                out[k] = out.get(k, 0) + c.row_value(row)
            if prior is not None and not prior.is_deleted:
                k = (ci, c.group_of(prior))
                out[k] = out.get(k, 0) - c.row_value(prior)
    return {k: v for k, v in out.items() if v != 0}


def is_risky(contribs: dict, constraints) -> bool:
    return any(constraints[ci].adverse(v) for (ci, _), v in contribs.items())


@dataclass
class PartialAggregate:
    node_id: int
    batch: int
    per_group: dict = field(default_factory=dict)
    txns: list = field(default_factory=list)  # (ssn, contributions) in SSN order


def partial_aggregate(node_id: int, batch: int, txns, constraints) -> PartialAggregate:
    """``txns``: (ssn, Delta) of the batch's surviving transactions."""
    pa = PartialAggregate(node_id, batch)
    for ssn, delta in sorted(txns, key=lambda t: t[0]):
        cs = contributions(delta, constraints)
        if not cs:
            continue
        pa.txns.append((ssn, cs))
        for k, v in cs.items():
            pa.per_group[k] = pa.per_group.get(k, 0) + v
    return pa


def safe_net(pa: PartialAggregate, constraints) -> dict:
    """Batch net with favorable parts of risky transactions dropped.

    A risky transaction (one with any adverse contribution) may be excluded
    later for a reason in another group or constraint; counting only its
    adverse parts keeps the prefix a lower bound of what is admitted.
    """
    net: dict = {}
    for _, cs in pa.txns:
        risky = is_risky(cs, constraints)
        for k, v in cs.items():
            if risky and not constraints[k[0]].adverse(v):
                continue
            net[k] = net.get(k, 0) + v
    return net


def compute_prefixes(partials, prior: dict, constraints) -> list[dict]:
    """States at every batch boundary: [start, after batch 1, ..., after batch n].

    Only keys touched by the round appear; others keep their ``prior`` value.
    A boundary value breaking its constraint is clamped to the threshold.
    """
    keys = set()
    for pa in partials:
        keys.update(pa.per_group)
    cur = {k: prior.get(k, 0) for k in keys}
    out = [dict(cur)]
    for pa in partials:
        for k, v in safe_net(pa, constraints).items():
            cur[k] = constraints[k[0]].clamp(cur[k] + v)
        out.append(dict(cur))
    return out


def reevaluate(pa: PartialAggregate, start: dict, constraints, owned=None) -> list[int]:
    """Walk the batch in SSN order from ``start``; return excluded SSNs.

    A transaction is excluded whole if applying it would break any constraint
    for any group.  With ``owned`` (one worker's set of state keys) only
    those keys are checked, and
    favorable contributions of risky transactions spanning several workers
    are ignored because another worker may exclude them.
    """
    state = dict(start)
    excluded = []
    for ssn, cs in pa.txns:
        items = cs.items()
        if owned is not None:
            mine = {k: v for k, v in items if k in owned}
            if not mine:
                continue
            spans = any(k not in owned for k in cs)
            if spans and is_risky(cs, constraints):
                mine = {k: v for k, v in mine.items() if constraints[k[0]].adverse(v)}
            items = mine.items()
        bad = False
        for k, v in items:
            if not constraints[k[0]].ok(state.get(k, 0) + v):
                bad = True
                break
        if bad:
            excluded.append(ssn)
            continue
        for k, v in items:
            state[k] = state.get(k, 0) + v
    return excluded


def worker_of(key, workers: int) -> int:
    ci, group = key
    return hash64(bytes([ci]) + b"".join(encode_value(v) for v in group)) % workers


@dataclass
class RoundResult:
    first_batch: int
    end_batch: int
    excluded: list
    prefixes: list
    changes: dict  # state keys touched by the round, with their new values


class ConstraintResolver:
    """Runs rounds and keeps the exact admitted aggregate at its frontier."""

    def __init__(self, constraints, workers: int = 1, state: Optional[dict] = None, frontier: int = 0):
        self.constraints = list(constraints)
        self.workers = workers
        self.state: dict = dict(state or {})
        self.frontier = frontier
        self.failures: list[int] = []
        self.rounds = 0

    def resolve_round(self, partials) -> RoundResult:
        partials = list(partials)
        for i, pa in enumerate(partials):
            if pa.batch != self.frontier + i:
                raise ValueError(f"round must cover contiguous batches from {self.frontier}")
        cs = self.constraints
        prefixes = compute_prefixes(partials, self.state, cs)
        excluded: set = set()
        if self.workers <= 1:
            for i, pa in enumerate(partials):
                excluded.update(reevaluate(pa, prefixes[i], cs))
        else:
            keys = set(prefixes[0])
            parts: dict = {}
            for k in keys:
                parts.setdefault(worker_of(k, self.workers), set()).add(k)
            for w in sorted(parts):
                owned = parts[w]
                for i, pa in enumerate(partials):
                    start = {k: v for k, v in prefixes[i].items() if k in owned}
                    excluded.update(reevaluate(pa, start, cs, owned))
        touched = set()
        for pa in partials:
            for ssn, contrib in pa.txns:
                if ssn in excluded:
                    continue
                for k, v in contrib.items():
                    self.state[k] = self.state.get(k, 0) + v
                    touched.add(k)
        new = sorted(excluded)
        self.failures.extend(new)
        first = self.frontier
        self.frontier += len(partials)
        self.rounds += 1
        return RoundResult(first, self.frontier, new, prefixes, {k: self.state[k] for k in touched})

    def lines(self) -> list[str]:
        return [f"{s}\n" for s in self.failures]
