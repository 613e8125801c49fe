"""A simulated cluster: every node runs log, replication, heartbeats,
consensus, the serializer role when elected, publishing and transactions.

Timing: all nodes heartbeat at multiples of ``hb_period``; the serializer
drains its pending ranges at ``tick_phase`` ms after each heartbeat instant
and pushes its file to every member.  Nodes learn which stream entries are
revealed from heartbeat replies and stream pushes.

Remote reads (log ranges, published blocks, file copies) are synchronous
in-process calls, allowed only when the network says the two nodes can
reach each other.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .conflicts import ConflictResolver
from .consensus import ConsensusParticipant
from .constraints import (ConstraintResolver, PartialAggregate, parse_constraint,
                          partial_aggregate)
from .log import LocalLog, PromiseTracker, RangeUnavailable, ReplicaStore, ReplicationState
from .membership import (NODES, NODES_TABLE_ID, FailureDetector, NodesRow, OldNodeAlive,
                         founding_rows, join_process)
from .model import Catalog, SerialPos
from .publisher import Publisher
from .serializer import (BatchRecord, ConstraintRecord, FrontierView, Heartbeat, HeartbeatAck,
                         MissingFile, NotSerializer, PayloadItem, Serializer, StaleNode,
                         adopt, chain_of, reconcile)
from .simnet import Future, Network, Scenario, Simulator, Trace
from .txn import TxnEngine
from .visibility import Reader


@dataclass
class ClusterConfig:
    nodes: int = 3
    rf: int = 3
    hb_period: float = 100.0
    tick_phase: float = 10.0
    latency: tuple = ("fixed", 1.0)
    drop_rate: float = 0.0
    election_timeout: tuple = (300.0, 600.0)
    candidacy_timeout: float = 200.0
    auto_failover: bool = True
    suspect_after: float = 300.0
    promise_timeout: float = 2000.0
    strict_constraint_reads: bool = False
    constraints: tuple = ()
    constraint_workers: int = 1
    retain_batches: int = 32
    seed: int = 0
    trace_messages: bool = False


@dataclass
class Envelope:
    src: int
    dst: int
    body: object

    @property
    def kind(self) -> str:
        return type(self.body).__name__


@dataclass
class Replicate:
    origin: int
    start: int
    records: tuple


@dataclass
class ReplicaAck:
    origin: int
    replica: int
    upper: int


@dataclass
class StreamAppend:
    seq: int
    leader: int
    fid: tuple
    start: int
    entries: tuple
    revealed: int
    rows: tuple
    backfill: tuple = ()


@dataclass
class StreamAck:
    node: int
    seq: int
    fid: tuple
    held: int
    ok: bool
    promised: int
    have: dict = field(default_factory=dict)


def payload_item(lsn: int, d: Delta) -> PayloadItem:
    return PayloadItem(lsn, d.txn_id, d.snapshot, d.read_set, d.write_keys,
                       tuple(r for r in d.upserts if r.table_id == NODES_TABLE_ID),
                       frozenset(r.table_id for r in d.upserts))


def majority(n: int) -> int:
    return n // 2 + 1


class SimNode:
    def __init__(self, cluster: "Cluster", node_id: int, address: int, members: dict):
        cfg = cluster.config
        self.cluster = cluster
        self.sim: Simulator = cluster.sim
        self.net: Network = cluster.net
        self.catalog: Catalog = cluster.catalog
        self.node_id = node_id
        self.address = address
        self.alive = True
        self.members: dict[int, NodesRow] = dict(members)
        self.log = LocalLog(node_id)
        self.replicas = ReplicaStore()
        rs = self.members[node_id].replica_set
        self.repl = ReplicationState(rs)
        self.quorum = majority(1 + len(rs))
        self._sent: dict[int, int] = {r: 0 for r in rs}
        self.tracker = PromiseTracker()
        self.view = FrontierView()
        self.publisher = Publisher(node_id, self.catalog)
        self.reader = Reader(self.view, self.catalog, self.publisher_of, self.fetch)
        self.engine = TxnEngine(self, cluster.constraint_tables, cfg.strict_constraint_reads,
                                cfg.promise_timeout, history=cluster._record_txn)
        self.consensus = ConsensusParticipant(node_id, self.send, self.member_ids,
                                              self._on_elected, self._on_row_committed,
                                              vote_payload=self._files_snapshot)
        self.serializer: Optional[Serializer] = None
        self.stream: dict = {}
        self.revealed_len = 0
        self.c_resolver: Optional[ConstraintResolver] = None
        self.ser_batches: list[BatchRecord] = []
        self.acked_upper = 0
        self.rng = random.Random(f"node-{cfg.seed}-{node_id}")
        self.last_heard = self.sim.now()
        self.election_timeout = self._new_timeout()
        self.detector = FailureDetector(cfg.suspect_after, self.sim.now())
        self._payload_cache: dict[int, PayloadItem] = {}
        self._adoption = None
        self._timers = []

    # -- plumbing ------------------------------------------------------------

    def member_ids(self) -> list[int]:
        return sorted(self.members)

    def send(self, dst: int, body) -> None:
        addr = self.cluster.address_of.get(dst)
        if addr is None:
            return
        self.net.send(self.address, addr, Envelope(self.node_id, dst, body))

    def reachable(self, other: "SimNode") -> bool:
        return other.alive and self.alive and self.net.can_reach(self.address, other.address)

    def start_timers(self, first_period: Optional[float] = None) -> None:
        cfg = self.cluster.config
        p = cfg.hb_period
        now = self.sim.now()
        base = (now // p + 1) * p if first_period is None else first_period
        self._timers = [
            self.sim.every(p, self._on_hb_timer, start=base),
            self.sim.every(p, self._on_tick, start=base + cfg.tick_phase),
            self.sim.every(p / 2, self._on_election_timer, start=base + p / 4),
        ]

    def stop(self) -> None:
        self.alive = False
        for t in self._timers:
            t.cancel()
        self._timers = []

    def _new_timeout(self) -> float:
        lo, hi = self.cluster.config.election_timeout
        return self.rng.uniform(lo, hi)

    def handle(self, src: int, msg) -> None:
        if isinstance(msg, Replicate):
            upper = self.replicas.offer(msg.origin, msg.start, msg.records)
            self.send(src, ReplicaAck(msg.origin, self.node_id, upper))
        elif isinstance(msg, ReplicaAck):
            self.repl.ack(msg.replica, msg.upper)
            self._promises()
        elif isinstance(msg, Heartbeat):
            self._on_heartbeat(src, msg)
        elif isinstance(msg, HeartbeatAck):
            self._on_hb_ack(msg)
        elif isinstance(msg, StreamAppend):
            self._on_stream(src, msg)
        elif isinstance(msg, StreamAck):
            self._on_stream_ack(msg)
        else:
            before = self.consensus.committed
            self.consensus.handle(src, msg)
            if self.consensus.committed is not before:
                self.view.set_rows(self.consensus.committed)
                self._refresh()
            self._check_deposed()

    # -- local log, replication, promises ---------------------------------

    def append_delta(self, delta: Delta) -> int:
        lsn = self.log.append(delta)
        self.log.harden()
        self._replicate(retransmit=False)
        return lsn

    def quorum_upper(self) -> int:
        return self.repl.quorum_upper(self.log.hardened_upper, self.quorum)

    def wait_quorum(self, lsn: int) -> Future:
        f = self.tracker.wait(lsn, self.quorum)
        self._promises()
        return f

    def _promises(self) -> None:
        hard = self.log.hardened_upper
        self.tracker.update(self.node_id, lambda q: self.repl.quorum_upper(hard, q))

    def _replicate(self, retransmit: bool) -> None:
        hard = self.log.hardened_upper
        for r in self.repl.replica_set:
            start = self.repl.acked[r] if retransmit else self._sent[r]
            if start < hard:
                self.send(r, Replicate(self.node_id, start, tuple(self.log._records[start:hard])))
                self._sent[r] = hard

    def fetch(self, origin: int, lo: int, hi: int):
        """(lsn, Delta) pairs [lo, hi) from the origin's log or a replica."""
        if origin == self.node_id:
            return self.log.scan(lo, hi)
        c = self.cluster
        n = c.nodes.get(origin)
        if n is not None and self.reachable(n) and n.log.hardened_upper >= hi:
            return n.log.scan(lo, hi)
        row = self.members.get(origin) or c.all_rows.get(origin)
        for r in (row.replica_set if row else ()):
            rn = c.nodes.get(r)
            if rn is None:
                continue
            if (rn is self or self.reachable(rn)) and rn.replicas.upper(origin) >= hi:
                return rn.replicas.scan(origin, lo, hi)
        raise RangeUnavailable(f"node {self.node_id} cannot reach [{lo},{hi}) of node {origin}")

    def publisher_of(self, origin: int) -> Optional[Publisher]:
        if origin == self.node_id:
            return self.publisher
        n = self.cluster.nodes.get(origin)
        if n is not None and self.reachable(n):
            return n.publisher
        return None

    # -- heartbeats ------------------------------------------------------------

    def _payload(self, lo: int, hi: int) -> tuple:
        cache = self._payload_cache
        out = []
        for lsn in range(lo, hi):
            it = cache.get(lsn)
            if it is None:
                it = cache[lsn] = payload_item(lsn, self.log._records[lsn])
            out.append(it)
        if len(cache) > 4 * (hi - lo) + 1024:
            for k in [k for k in cache if k < lo]:
                del cache[k]
        return tuple(out)

    def _on_hb_timer(self) -> None:
        if not self.alive:
            return
        self._replicate(retransmit=True)
        cur = self.consensus.current()
        upper = self.quorum_upper()
        lo = min(self.acked_upper, upper)
        hb = Heartbeat(self.node_id, upper, lo, self._payload(lo, upper),
                       {o: self.replicas.upper(o) for o in self.replicas.held}, cur.seq)
        self.send(cur.node_id, hb)

    def _on_heartbeat(self, src: int, hb: Heartbeat) -> None:
        ser = self.serializer
        rows = self.consensus.committed
        if ser is None:
            self.send(src, HeartbeatAck(hb.node_id, 0, "NotSerializer", rows=rows))
            return
        try:
            ack = ser.ingest_heartbeat(hb, self.sim.now())
        except StaleNode:
            self.send(src, HeartbeatAck(hb.node_id, 0, "StaleNode", rows=rows))
            return
        except NotSerializer:
            self.send(src, HeartbeatAck(hb.node_id, 0, "NotSerializer", rows=rows))
            return
        self.detector.saw(hb.node_id, self.sim.now())
        ack.rows = rows
        ack.revealed = self.revealed_len
        self.send(src, ack)

    def _on_hb_ack(self, ack: HeartbeatAck) -> None:
        self._learn_rows(ack.rows)
        if ack.error:
            return
        cur = self.consensus.current()
        if ack.seq != cur.seq or ack.serializer != cur.node_id:
            return
        self.acked_upper = ack.received_upper
        self.last_heard = self.sim.now()
        if ack.file_id is not None:
            self.view.reveal(ack.file_id, ack.revealed)
        self._refresh()

    def _learn_rows(self, rows) -> None:
        if rows and self.consensus.learn(rows):
            self.view.set_rows(self.consensus.committed)
            self._check_deposed()

    # -- stream (serializer file replication) ----------------------------------

    def _chain_fids(self) -> list:
        return [(r.node_id, r.seq) for r in chain_of(self.consensus.committed)]

    def _on_stream(self, src: int, m: StreamAppend) -> None:
        self._learn_rows(m.rows)
        c = self.consensus
        if m.seq < c.promised:
            self.send(src, StreamAck(self.node_id, m.seq, m.fid, 0, False, c.promised))
            return
        c.promised = m.seq
        self._check_deposed()
        for fid, start, ents in m.backfill:
            self.view.receive(fid, start, ents)
        held = self.view.receive(m.fid, m.start, m.entries)
        self.view.reveal(m.fid, min(m.revealed, held))
        self.last_heard = self.sim.now()
        have = {fid: len(self.view.files.get(fid, ())) for fid in self._chain_fids()}
        self.send(src, StreamAck(self.node_id, m.seq, m.fid, held, True, c.promised, have))
        self._refresh()

    def _on_stream_ack(self, a: StreamAck) -> None:
        ser = self.serializer
        if not a.ok:
            if a.promised > self.consensus.promised:
                self.consensus.promised = a.promised
            self._check_deposed()
            return
        if ser is None or a.seq != ser.seq:
            return
        st = self.stream
        if a.held > st["match"].get(a.node, 0):
            st["match"][a.node] = a.held
        st["have"][a.node] = a.have
        self._update_revealed()

    def _update_revealed(self) -> None:
        ser = self.serializer
        st = self.stream
        st["match"][self.node_id] = len(ser.entries)
        ids = self.member_ids()
        vals = sorted((st["match"].get(m, 0) for m in ids), reverse=True)
        r = vals[majority(len(ids)) - 1]
        if r > self.revealed_len:
            self.revealed_len = r
            self.view.reveal(ser.fid, r)
            self._refresh()

    def _push_stream(self) -> None:
        ser = self.serializer
        st = self.stream
        ents = ser.entries
        own = self.view.files.get(ser.fid, [])
        self.view.receive(ser.fid, len(own), ents[len(own):])
        rows = self.consensus.committed
        for m in self.member_ids():
            if m == self.node_id:
                continue
            start = st["match"].get(m, 0)
            have = st["have"].get(m)
            backfill = []
            for fid, full in st["adopted"].items():
                h = have.get(fid, 0) if have is not None else 0
                if h < len(full):
                    backfill.append((fid, h, tuple(full[h:])))
            self.send(m, StreamAppend(ser.seq, self.node_id, ser.fid, start, tuple(ents[start:]),
                                      self.revealed_len, rows, tuple(backfill)))
        self._update_revealed()

    # -- serializer role ---------------------------------------------------------

    def _check_deposed(self) -> None:
        ser = self.serializer
        if ser is None:
            return
        c = self.consensus
        if c.promised > ser.seq or (c.committed and c.current().seq > ser.seq):
            ser.deposed = True
            self.serializer = None
            self.cluster.trace.record(self.sim.now(), "deposed", node=self.node_id, seq=ser.seq,
                                      batches=ser.batch_count)

    def become_serializer(self, seq: int, starting_batch: int, adoption: dict, adopted_files: dict) -> None:
        cfg = self.cluster.config
        chain = chain_of(self.consensus.committed)
        prev = chain[-2] if len(chain) >= 2 and chain[-1].seq == seq else None
        prev_fid = (prev.node_id, prev.seq) if prev else None
        prev_len = len(adopted_files.get(prev_fid, ())) if prev_fid else 0
        self.ser_batches = [r for r in adoption["records"] if isinstance(r, BatchRecord)]
        resolver = ConflictResolver(start_batch=starting_batch, fetch_writes=self._fetch_writes)
        ser = Serializer(self.node_id, seq, starting_batch, adoption["node_uppers"], adoption["next_ssn"],
                         resolver, is_member=lambda n: n in self.members,
                         prev_file=prev_fid, prev_len=prev_len)
        self.serializer = ser
        self.revealed_len = 0
        self.stream = {"match": {}, "have": {}, "adopted": {f: list(e) for f, e in adopted_files.items()}}
        for fid, ents in adopted_files.items():
            self.view.receive(fid, 0, list(ents))
        self.detector = FailureDetector(cfg.suspect_after, self.sim.now())
        if self.cluster.constraints:
            self.c_resolver = ConstraintResolver(self.cluster.constraints, cfg.constraint_workers,
                                                 adoption["constraint_state"], adoption["constraint_frontier"])
            self.c_resolver.failures = list(adoption["failures"])
        self.cluster.trace.record(self.sim.now(), "serializer", node=self.node_id, seq=seq,
                                  starting_batch=starting_batch)
        self._push_stream()

    def _fetch_writes(self, batch: int):
        rec = self.ser_batches[batch]
        deltas = self.fetch(rec.row.node_id, rec.lsn_lower, rec.row.lsn_upper)
        return [(SerialPos(batch, i), d.write_keys) for i, (_, d) in enumerate(deltas)]

    def _on_tick(self) -> None:
        if not self.alive:
            return
        self._check_deposed()
        ser = self.serializer
        if ser is None:
            return
        now = self.sim.now()
        self._proxy_suspects(ser, now)
        tr = self.cluster.trace
        while True:
            try:
                rec = ser.serialize_batch()
            except RangeUnavailable as exc:
                tr.record(now, "serialize_blocked", node=self.node_id, error=str(exc))
                break
            if rec is None:
                break
            self.ser_batches.append(rec)
            self.cluster.batch_emitted[rec.row.batch] = now
            tr.record(now, "batch", batch=rec.row.batch, node=rec.row.node_id, upper=rec.row.lsn_upper,
                      rollbacks=[str(t) for t in rec.rollbacks], seq=ser.seq)
        self._constraint_rounds()
        older = ser.batch_count - self.cluster.config.retain_batches
        snap = ser.min_pending_snapshot()
        if snap is not None:
            older = min(older, snap)
        if older > 0:
            ser.resolver.evict(older)
        self._push_stream()

    def _proxy_suspects(self, ser: Serializer, now: float) -> None:
        """Serialize the replicated prefix of nodes that stopped heartbeating."""
        for m, row in sorted(self.members.items()):
            if m == self.node_id or not self.detector.suspect(m, now):
                continue
            known = ser.known_upper(m)
            best = None
            for r in row.replica_set:
                rn = self.cluster.nodes.get(r)
                if rn is None or not (rn is self or self.reachable(rn)):
                    continue
                up = rn.replicas.upper(m)
                if up > known and (best is None or up > best[0]):
                    best = (up, rn)
            if best is None:
                continue
            up, rn = best
            items = tuple(payload_item(lsn, d) for lsn, d in rn.replicas.scan(m, known, up))
            ser.ingest_heartbeat(Heartbeat(self.node_id, up, known, items), now, origin=m)

    def _partial(self, rec: BatchRecord) -> Optional[PartialAggregate]:
        o = rec.row.node_id
        pub = self.publisher_of(o)
        cs = self.cluster.constraints
        if pub is not None:
            txns = pub.batch_txns.get(rec.row.batch)
            if txns is not None:
                return partial_aggregate(o, rec.row.batch, txns, cs)
            n = self.cluster.nodes.get(o)
            if n is not None and n.alive:
                return None
        try:
            deltas = self.fetch(o, rec.lsn_lower, rec.row.lsn_upper)
        except RangeUnavailable:
            return None
        rolled = set(rec.rollbacks)
        txns = []
        ssn = rec.ssn_start
        for _, d in deltas:
            if d.txn_id in rolled:
                continue
            txns.append((ssn, d))
            ssn += 1
        return partial_aggregate(o, rec.row.batch, txns, cs)

    def _constraint_rounds(self) -> None:
        cr = self.c_resolver
        if cr is None:
            return
        tables = self.cluster.constraint_tables
        view = self.view
        ser = self.serializer
        while cr.frontier < view.frontier:
            partials = []
            origins = set()
            b = cr.frontier
            while b < view.frontier:
                rec = view.batches[b]
                if rec.tables & tables:
                    if rec.row.node_id in origins:
                        break
                    pa = self._partial(rec)
                    if pa is None:
                        break
                    origins.add(rec.row.node_id)
                else:
                    pa = PartialAggregate(rec.row.node_id, b)
                partials.append(pa)
                b += 1
            if not partials:
                return
            res = cr.resolve_round(partials)
            ser.append_constraint_record(ConstraintRecord(res.first_batch, res.end_batch,
                                                          tuple(res.excluded), res.changes))
            self.cluster.trace.record(self.sim.now(), "constraint_round", first=res.first_batch,
                                      end=res.end_batch, excluded=list(res.excluded))

    # -- elections -------------------------------------------------------------

    def _files_snapshot(self) -> dict:
        return {fid: tuple(ents) for fid, ents in self.view.files.items()}

    def _on_election_timer(self) -> None:
        if not self.alive or not self.cluster.config.auto_failover:
            return
        if self.serializer is not None or self.consensus.candidacy is not None:
            return
        now = self.sim.now()
        if now - self.last_heard < self.election_timeout:
            return
        self.start_election()

    def start_election(self) -> int:
        now = self.sim.now()
        self.last_heard = now
        self.election_timeout = self._new_timeout()
        seq = self.consensus.start_candidacy()
        self.cluster.trace.record(now, "candidacy", node=self.node_id, seq=seq)
        self.sim.schedule(self.cluster.config.candidacy_timeout, self._candidacy_expired, seq)
        return seq

    def _candidacy_expired(self, seq: int) -> None:
        c = self.consensus.candidacy
        if c is not None and c["seq"] == seq:
            self.consensus.abandon()
            self.cluster.trace.record(self.sim.now(), "candidacy_expired", node=self.node_id, seq=seq)

    def _on_elected(self, seq: int, payloads: dict) -> None:
        files: dict = {}

        def merge(src: dict):
            for fid, ents in src.items():
                if len(ents) > len(files.get(fid, ())):
                    files[fid] = ents

        merge(self.view.files)
        for p in payloads.values():
            if p:
                merge(p)
        for n in self.cluster.nodes.values():
            if n is not self and self.reachable(n):
                merge(n.view.files)
        rows = self.consensus.acked
        try:
            ad = adopt(rows, files)
        except MissingFile as exc:
            self.consensus.abandon()
            self.cluster.trace.record(self.sim.now(), "missing_file", node=self.node_id, seq=seq, error=str(exc))
            return
        self._adoption = (seq, ad, files)
        self.consensus.append_self(ad["starting_batch"])

    def _on_row_committed(self, row) -> None:
        self.view.set_rows(self.consensus.committed)
        if self._adoption is None or self._adoption[0] != row.seq:
            return
        _, ad, files = self._adoption
        self._adoption = None
        self.become_serializer(row.seq, row.starting_batch, ad, files)

    # -- view refresh: publish, outcomes, membership -----------------------------

    def _refresh(self) -> None:
        new = self.view.refresh()
        if not new:
            return
        saw_constraints = False
        for r in new:
            if isinstance(r, BatchRecord):
                for nr in r.node_rows:
                    row = NodesRow.from_version(nr)
                    self.members[row.node_id] = row
                    self.cluster.all_rows[row.node_id] = row
                if r.row.node_id == self.node_id:
                    deltas = self.log.scan(r.lsn_lower, r.row.lsn_upper)
                    self.publisher.publish_batch(r.row, deltas, set(r.rollbacks), r.ssn_start)
                    self.engine.on_batch(r, deltas)
            else:
                saw_constraints = True
        if saw_constraints:
            self.engine.on_constraints()


class Cluster:
    def __init__(self, config: ClusterConfig, tables=(), record_history: bool = True):
        self.config = config
        self.sim = Simulator(config.seed)
        self.trace = Trace(messages=config.trace_messages)
        self.net = Network(self.sim, config.latency, config.drop_rate, self.trace)
        self.catalog = Catalog([NODES] + list(tables))
        self.constraints = [parse_constraint(t, self.catalog) for t in config.constraints]
        self.constraint_tables = frozenset(c.table_id for c in self.constraints)
        self.nodes: dict[int, SimNode] = {}
        self.address_of: dict[int, int] = {}
        self.by_address: dict[int, SimNode] = {}
        self.all_rows: dict[int, NodesRow] = {}
        self.batch_emitted: dict[int, float] = {}
        self.record_history = record_history
        self.txn_log: list = []
        self.joins: list = []
        rows = founding_rows(config.nodes, config.rf)
        members = {r.node_id: r for r in rows}
        self.all_rows.update(members)
        for r in rows:
            self._add_node(SimNode(self, r.node_id, r.address, members))
        for n in self.nodes.values():
            n.consensus.bootstrap()
            n.view.set_rows(n.consensus.committed)
        creator = self.nodes[0]
        h = creator.engine.begin("Create")
        for r in rows:
            creator.engine.upsert(h, NODES_TABLE_ID, r.values())
        creator.append_delta(creator.engine.build_delta(h))
        creator.become_serializer(0, 0, {"records": [], "node_uppers": {}, "next_ssn": 1,
                                         "constraint_state": {}, "constraint_frontier": 0,
                                         "failures": []}, {})
        for n in self.nodes.values():
            n.start_timers()

    def _add_node(self, node: SimNode) -> None:
        self.nodes[node.node_id] = node
        self.address_of[node.node_id] = node.address
        self.by_address[node.address] = node
        self.net.register(node.address, lambda src, env, a=node.address: self._deliver(a, env))

    def _deliver(self, address: int, env: Envelope) -> None:
        node = self.by_address.get(address)
        if node is None or not node.alive or node.node_id != env.dst:
            return
        node.handle(env.src, env.body)

    def _record_txn(self, h, delta) -> None:
        if self.record_history:
            self.txn_log.append((h, delta))

    # -- control -------------------------------------------------------------

    def node(self, node_id: int) -> SimNode:
        return self.nodes[node_id]

    def run(self, until: float) -> None:
        self.sim.run(until=until)

    def serializer_node(self) -> Optional[SimNode]:
        best = None
        for n in self.nodes.values():
            if n.alive and n.serializer is not None:
                if best is None or n.serializer.seq > best.serializer.seq:
                    best = n
        return best

    def crash(self, address: int) -> None:
        node = self.by_address.get(address)
        self.net.crash(address)
        if node is not None and node.alive:
            node.log.crash()
            node.stop()
            node.tracker.fail_all(RangeUnavailable(f"node {node.node_id} crashed"))
            self.trace.record(self.sim.now(), "crash", node=node.node_id, address=address)

    def restart(self, address: int, retry_ms: float = 100.0, attempts: int = 50) -> Future:
        """Bring the address back under a fresh node id."""
        self.net.restart(address)
        old = self.by_address.get(address)
        out = Future()

        def attempt(left):
            try:
                f = self.rejoin(old.node_id, address)
            except OldNodeAlive:
                if left > 0:
                    self.sim.schedule(retry_ms, attempt, left - 1)
                else:
                    out.set_error(OldNodeAlive(f"node {old.node_id} still heartbeating"))
                return
            f.add_done_callback(lambda r: out.set_error(r.error) if r.error else out.set_result(r.value))

        attempt(attempts)
        return out

    def _sponsor(self, address: int) -> Optional[SimNode]:
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            if n.alive and n.address != address and self.net.can_reach(n.address, address):
                return n
        return None

    def rejoin(self, old_id: int, address: int) -> Future:
        ser = self.serializer_node()
        if ser is not None and ser.detector.recently_seen(old_id, self.sim.now()):
            raise OldNodeAlive(f"node {old_id} heartbeated within {self.config.suspect_after} ms")
        old = self.nodes.get(old_id)
        if old is not None and old.alive:
            raise OldNodeAlive(f"node {old_id} is still running")
        return self.join(address)

    def join(self, address: int, sponsor: Optional[int] = None) -> Future:
        sp = self.nodes[sponsor] if sponsor is not None else self._sponsor(address)
        out = Future()
        if sp is None:
            out.set_error(RuntimeError(f"no sponsor can reach address {address}"))
            return out
        proc = self.sim.spawn(join_process(sp.engine, address, self.config.rf))

        def done(f):
            if f.error is not None:
                out.set_error(f.error)
                return
            new_id, row = f.value
            node = self._spawn_from(sp, new_id, address)
            self.joins.append((new_id, address, sp.node_id))
            self.trace.record(self.sim.now(), "join", node=new_id, address=address, sponsor=sp.node_id)
            out.set_result(node.node_id)

        proc.add_done_callback(done)
        return out

    def _spawn_from(self, sponsor: SimNode, node_id: int, address: int) -> SimNode:
        members = dict(sponsor.members)
        if node_id not in members:
            members[node_id] = self.all_rows[node_id]
        node = SimNode(self, node_id, address, members)
        node.consensus.learn(sponsor.consensus.committed)
        node.consensus.promised = max(node.consensus.promised, sponsor.consensus.promised)
        for fid, ents in sponsor.view.files.items():
            node.view.files[fid] = list(ents)
        node.view.revealed = dict(sponsor.view.revealed)
        node.view.set_rows(node.consensus.committed)
        node.acked_upper = 0
        self._add_node(node)
        node._refresh()
        node.start_timers()
        return node

    def apply_scenario(self, scenario: Scenario) -> None:
        for ev in scenario.events:
            if ev.kind == "partition":
                self.sim.at(ev.at, self._partition, ev.groups)
            elif ev.kind == "heal":
                self.sim.at(ev.at, self._heal)
            elif ev.kind == "crash":
                self.sim.at(ev.at, self.crash, ev.node)
            elif ev.kind == "restart":
                self.sim.at(ev.at, self.restart, ev.node)
            elif ev.kind == "droprate":
                self.sim.at(ev.at, setattr, self.net, "drop_rate", ev.rate)

    def _partition(self, groups) -> None:
        self.net.partition(groups)
        self.trace.record(self.sim.now(), "partition", groups=[list(g) for g in groups])

    def _heal(self) -> None:
        self.net.heal()
        self.trace.record(self.sim.now(), "heal")

    # -- observation ----------------------------------------------------------

    def alive_nodes(self) -> list[SimNode]:
        return [n for _, n in sorted(self.nodes.items()) if n.alive]

    def max_frontier(self) -> int:
        return max((n.view.frontier for n in self.alive_nodes()), default=0)

    def reference_view(self) -> FrontierView:
        """The most advanced view among live nodes."""
        best = None
        for n in self.alive_nodes():
            if best is None or n.view.frontier > best.view.frontier or (
                    n.view.frontier == best.view.frontier and
                    len(n.view.constraint_records) > len(best.view.constraint_records)):
                best = n
        return best.view

    def global_records(self) -> list:
        """Reconciled stream over every file copy and the newest Serializers log."""
        files: dict = {}
        revealed: dict = {}
        rows = ()
        for n in self.nodes.values():
            for fid, ents in n.view.files.items():
                if len(ents) > len(files.get(fid, ())):
                    files[fid] = ents
            for fid, r in n.view.revealed.items():
                revealed[fid] = max(revealed.get(fid, 0), r)
            if n.consensus.committed and (not rows or n.consensus.committed[-1].seq > rows[-1].seq):
                rows = n.consensus.committed
        return reconcile(rows, files, revealed)

    def accepted_rows(self) -> list:
        out = []
        for n in self.nodes.values():
            out.extend(n.consensus.accepted)
        return out

    def handles(self) -> list:
        return [h for h, _ in self.txn_log]

    def unresolved(self) -> list:
        return [h for h, _ in self.txn_log if not h.state.final]

    def drain(self, limit_ms: float = 5000.0, step_ms: Optional[float] = None) -> bool:
        """Run until every recorded transaction has a final outcome."""
        step = step_ms or self.config.hb_period
        end = self.sim.now() + limit_ms
        while self.sim.now() < end:
            if not any(not h.state.final for h, _ in self.txn_log
                       if self.nodes[h.txn_id.node_id].alive):
                return True
            self.run(self.sim.now() + step)
        return not self.unresolved()
