"""Nodes table: the membership list is an ordinary table whose rows are
written by ordinary transactions, so joins are serialized like any change.

Ids are never reused.  A restarted process rejoins under a fresh id; the old
id's hardened log stays readable from its replicas.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .model import RowVersion, ValueType, table
from .visibility import FullTable

NODES_TABLE_ID = 0
NODES = table(NODES_TABLE_ID, "Nodes",
              [("nodeId", ValueType.INT64), ("address", ValueType.INT64),
               ("replicaSet", ValueType.UTF8), ("status", ValueType.UTF8)],
              primary_key=["nodeId"])


class OldNodeAlive(Exception):
    pass


class JoinFailed(Exception):
    pass


@dataclass(frozen=True)
class NodesRow:
    node_id: int
    address: int
    replica_set: tuple = ()
    status: str = "Active"

    def values(self) -> dict:
        return {0: self.node_id, 1: self.address,
                2: ",".join(str(r) for r in self.replica_set), 3: self.status}

    @classmethod
    def from_values(cls, values: dict) -> "NodesRow":
        rs = values.get(2) or ""
        return cls(values[0], values[1], tuple(int(x) for x in rs.split(",") if x), values.get(3) or "Active")

    @classmethod
    def from_version(cls, row: RowVersion) -> "NodesRow":
        return cls.from_values(row.values)


def replica_ring(node_ids, rf: int) -> dict:
    """Each node's replicas are the next rf-1 members in id order, wrapping."""
    ids = sorted(node_ids)
    n = len(ids)
    out = {}
    for i, nid in enumerate(ids):
        out[nid] = tuple(ids[(i + j) % n] for j in range(1, min(rf, n)))
    return out


def replica_set_for(existing_ids, new_id: int, rf: int) -> tuple:
    return replica_ring(list(existing_ids) + [new_id], rf)[new_id]


def founding_rows(count: int, rf: int) -> list[NodesRow]:
    ring = replica_ring(range(count), rf)
    return [NodesRow(i, i, ring[i]) for i in range(count)]


class FailureDetector:
    """Advisory: a node is suspected once nothing was heard for ``timeout`` ms."""

    def __init__(self, timeout: float, started: float = 0.0):
        self.timeout = timeout
        self.started = started
        self.last_seen: dict[int, float] = {}

    def saw(self, node_id: int, now: float) -> None:
        self.last_seen[node_id] = now

    def suspect(self, node_id: int, now: float) -> bool:
        return now - self.last_seen.get(node_id, self.started) > self.timeout

    def recently_seen(self, node_id: int, now: float) -> bool:
        t = self.last_seen.get(node_id)
        return t is not None and now - t <= self.timeout


def join_process(engine, address: int, rf: int, max_attempts: int = 20, deadline_ms: float = 5000.0):
    """Sponsor-side join: claim id max+1 with an upsert into Nodes; retry on conflict.

    A generator for ``Simulator.spawn``; returns (node id, NodesRow).
    """
    from .txn import TxnState
    for _ in range(max_attempts):
        h = engine.begin("Join")
        rows = engine.read(h, NODES_TABLE_ID, FullTable())
        existing = [r.values[0] for r in rows]
        new_id = max(existing, default=-1) + 1
        row = NodesRow(new_id, address, replica_set_for(existing, new_id, rf))
        engine.upsert(h, NODES_TABLE_ID, row.values())
        try:
            yield engine.promise(h)
        except Exception:  # noqa: BLE001 - promise timeout; try again
            continue
        state = yield engine.await_outcome(h, engine.node.sim.now() + deadline_ms)
        if state is TxnState.COMMITTED:
            return new_id, row
        if state is TxnState.UNKNOWN:
            # the claim may still land; waiting it out keeps ids unique
            state = yield engine.await_outcome(h)
            if state is TxnState.COMMITTED:
                return new_id, row
    raise JoinFailed(f"join of address {address} gave up after {max_attempts} attempts")


def membership_from(rows) -> dict:
    return {r.node_id: r for r in rows}


def active_ids(members: dict, exclude: Optional[set] = None) -> list[int]:
    return sorted(n for n, r in members.items() if r.status == "Active" and not (exclude and n in exclude))
