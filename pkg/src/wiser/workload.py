"""Online-shopping benchmark and randomized mixed histories.

NewOrder: read the price of ``reads_per_new_order`` random products and
insert one Orders row per product.  UpdatePrice: a separate single client
that rewrites the price of k random products every ``update_interval_ms``.
Every NewOrder client runs back to back with no think time, waiting only
for its Promise.
"""
from __future__ import annotations

import random
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

from .cluster import Cluster, ClusterConfig
from .log import RangeUnavailable
from .model import ValueType, table
from .simnet import Scenario
from .txn import PromiseTimeout, TxnState
from .visibility import Eq, FullTable, Range, VisibilityLag

PRODUCTS_ID = 1
ORDERS_ID = 2
PRODUCTS = table(PRODUCTS_ID, "Products", [("productId", ValueType.INT64), ("price", ValueType.FLOAT64)],
                 primary_key=["productId"], range_indexed=["price"])
ORDERS = table(ORDERS_ID, "Orders", [("orderId", ValueType.INT64), ("productId", ValueType.INT64),
                                     ("qty", ValueType.INT64), ("price", ValueType.FLOAT64)],
               primary_key=["orderId"])
STOCK_CONSTRAINT = "SUM(qty) >= 0 ON Orders GROUP BY productId"


class ConfigError(ValueError):
    pass


@dataclass
class WorkloadConfig:
    product_count: int = 10000
    reads_per_new_order: int = 10
    update_price_size: int = 10
    update_interval_ms: float = 100.0
    new_order_nodes: int = 4
    duration_virtual_ms: Optional[float] = None
    new_orders: Optional[int] = 50000
    constraints: bool = False
    seed: int = 0
    initial_stock: int = 20
    restock_size: int = 50
    restock_qty: int = 10

    def validate(self) -> None:
        if self.product_count < 1:
            raise ConfigError("product_count must be positive")
        if not 0 <= self.reads_per_new_order <= self.product_count:
            raise ConfigError("reads_per_new_order must be within [0, product_count]")
        if not 0 <= self.update_price_size <= self.product_count:
            raise ConfigError("update_price_size must be within [0, product_count]")
        if self.update_interval_ms <= 0:
            raise ConfigError("update_interval_ms must be positive")
        if self.new_order_nodes < 1:
            raise ConfigError("need at least one NewOrder node")
        if self.duration_virtual_ms is None and self.new_orders is None:
            raise ConfigError("set a duration or a NewOrder count")
        if self.duration_virtual_ms is not None and self.duration_virtual_ms <= 0:
            raise ConfigError("duration must be positive")

    def expected_commit_rate(self) -> float:
        return (1 - self.update_price_size / self.product_count) ** self.reads_per_new_order


def _summary(xs: list) -> dict:
    if not xs:
        return {"n": 0}
    xs = sorted(xs)
    q = statistics.quantiles(xs, n=100, method="inclusive") if len(xs) > 1 else [xs[0]] * 99
    return {"n": len(xs), "mean": round(statistics.fmean(xs), 3), "p50": round(q[49], 3),
            "p90": round(q[89], 3), "p99": round(q[98], 3), "max": round(xs[-1], 3)}


@dataclass
class RunMetrics:
    issued: int = 0
    committed: int = 0
    conflict_rollbacks: int = 0
    constraint_rollbacks: int = 0
    unknown: int = 0
    commit_rate: float = 0.0
    expected_commit_rate: float = 0.0
    serialize_latency_ms: dict = field(default_factory=dict)
    publish_latency_ms: dict = field(default_factory=dict)
    update_prices: int = 0
    update_price_rollbacks: int = 0
    batches: int = 0
    virtual_ms: float = 0.0
    wall_s: float = 0.0

    @property
    def balanced(self) -> bool:
        return self.issued == self.committed + self.conflict_rollbacks + self.constraint_rollbacks + self.unknown

    def to_dict(self) -> dict:
        d = asdict(self)
        d["balanced"] = self.balanced
        return d

    def table(self) -> str:
        rows = [("issued", self.issued), ("committed", self.committed),
                ("conflict rollbacks", self.conflict_rollbacks),
                ("constraint rollbacks", self.constraint_rollbacks), ("unknown", self.unknown),
                ("commit rate", f"{self.commit_rate:.4f}"),
                ("expected", f"{self.expected_commit_rate:.4f}"),
                ("serialize p50/p99 ms", f"{self.serialize_latency_ms.get('p50', '-')}/"
                                         f"{self.serialize_latency_ms.get('p99', '-')}"),
                ("publish p50/p99 ms", f"{self.publish_latency_ms.get('p50', '-')}/"
                                       f"{self.publish_latency_ms.get('p99', '-')}"),
                ("batches", self.batches), ("virtual ms", round(self.virtual_ms, 1)),
                ("wall s", round(self.wall_s, 2))]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(w)}  {v}" for k, v in rows)


class Bench:
    """Builds a shopping cluster, loads it and drives the clients."""

    def __init__(self, cfg: WorkloadConfig, scenario: Optional[Scenario] = None, **cluster_kw):
        cfg.validate()
        self.cfg = cfg
        n = cfg.new_order_nodes + 2
        ccfg = ClusterConfig(nodes=n, seed=cfg.seed,
                             constraints=(STOCK_CONSTRAINT,) if cfg.constraints else (), **cluster_kw)
        if scenario is not None:
            ccfg.latency = scenario.latency
            ccfg.drop_rate = scenario.drop_rate
        self.cluster = Cluster(ccfg, tables=[PRODUCTS, ORDERS], record_history=False)
        self.scenario = scenario
        self.loader = 0
        self.new_order_ids = list(range(1, cfg.new_order_nodes + 1))
        self.update_id = cfg.new_order_nodes + 1
        self.orders: list = []
        self.updates: list = []
        self.issued = 0
        self._next_order: dict[int, int] = {}
        self._stop_at: Optional[float] = None

    # -- setup -----------------------------------------------------------

    def load(self) -> None:
        cfg = self.cfg
        c = self.cluster
        eng = c.node(self.loader).engine
        rng = random.Random(f"load-{cfg.seed}")
        h = eng.begin("Load")
        for pid in range(1, cfg.product_count + 1):
            eng.upsert(h, PRODUCTS_ID, {0: pid, 1: round(rng.uniform(1, 100), 2)})
        if cfg.constraints:
            for pid in range(1, cfg.product_count + 1):
                eng.upsert(h, ORDERS_ID, {0: self._order_id(self.loader), 1: pid,
                                          2: cfg.initial_stock, 3: 0.0})
        eng.promise(h)
        limit = c.sim.now() + 10_000
        while not h.state.final and c.sim.now() < limit:
            c.run(c.sim.now() + cfg.update_interval_ms)
        if h.state is not TxnState.COMMITTED:
            raise RuntimeError(f"initial load ended as {h.state.value}")
        # every client node must see the loaded products before starting
        while any(c.node(i).view.frontier <= h.pos.batch for i in self.new_order_ids + [self.update_id]):
            c.run(c.sim.now() + 10)

    def _order_id(self, node: int) -> int:
        n = self._next_order.get(node, 0)
        self._next_order[node] = n + 1
        return (node << 40) | n

    # -- clients ---------------------------------------------------------

    def _done(self) -> bool:
        cfg = self.cfg
        if cfg.new_orders is not None and self.issued >= cfg.new_orders:
            return True
        return self._stop_at is not None and self.cluster.sim.now() >= self._stop_at

    def new_order_client(self, node_id: int):
        cfg = self.cfg
        c = self.cluster
        node = c.node(node_id)
        eng = node.engine
        rng = random.Random(f"neworder-{cfg.seed}-{node_id}")
        products = range(1, cfg.product_count + 1)
        while not self._done():
            if not node.alive:
                return
            h = eng.begin("NewOrder")
            pids = rng.sample(products, cfg.reads_per_new_order)
            try:
                prices = []
                for pid in pids:
                    rows = eng.read(h, PRODUCTS_ID, Eq(((0, pid),)))
                    prices.append(rows[0].values[1] if rows else 0.0)
            except (VisibilityLag, RangeUnavailable):
                yield c.sim.sleep(1.0)
                continue
            for pid, price in zip(pids, prices):
                eng.upsert(h, ORDERS_ID, {0: self._order_id(node_id), 1: pid,
                                          2: -rng.randint(1, 3), 3: price})
            f = eng.promise(h)
            self.issued += 1
            self.orders.append(h)
            try:
                yield f
            except PromiseTimeout:
                pass
            except RangeUnavailable:
                return

    def update_price(self) -> None:
        cfg = self.cfg
        if self._done() or cfg.update_price_size == 0:
            return
        node = self.cluster.node(self.update_id)
        if not node.alive:
            return
        eng = node.engine
        h = eng.begin("UpdatePrice")
        for pid in self._up_rng.sample(range(1, cfg.product_count + 1), cfg.update_price_size):
            eng.upsert(h, PRODUCTS_ID, {0: pid, 1: round(self._up_rng.uniform(1, 100), 2)})
        eng.promise(h)
        self.updates.append(h)

    def restock(self) -> None:
        cfg = self.cfg
        if self._done():
            return
        node = self.cluster.node(self.update_id)
        if not node.alive:
            return
        eng = node.engine
        h = eng.begin("Restock")
        for pid in self._up_rng.sample(range(1, cfg.product_count + 1), min(cfg.restock_size, cfg.product_count)):
            eng.upsert(h, ORDERS_ID, {0: self._order_id(self.update_id), 1: pid, 2: cfg.restock_qty, 3: 0.0})
        eng.promise(h)

    # -- run -------------------------------------------------------------

    def run(self, drain_ms: float = 10_000.0) -> RunMetrics:
        cfg = self.cfg
        c = self.cluster
        wall = time.perf_counter()
        self.load()
        t0 = c.sim.now()
        period = cfg.update_interval_ms
        start = (t0 // period + 1) * period
        if cfg.duration_virtual_ms is not None:
            self._stop_at = start + cfg.duration_virtual_ms
        if self.scenario is not None:
            self.scenario = _shift(self.scenario, start)
            c.apply_scenario(self.scenario)
        self._up_rng = random.Random(f"updateprice-{cfg.seed}")
        timers = [c.sim.every(period, self.update_price, start=start)]
        if cfg.constraints:
            timers.append(c.sim.every(period, self.restock, start=start + period / 2))
        procs = [c.sim.spawn(self._delayed(start, self.new_order_client, i)) for i in self.new_order_ids]
        while not self._done():
            c.run(c.sim.now() + period)
            if all(p.done for p in procs):
                break
        for t in timers:
            t.cancel()
        end = c.sim.now() + drain_ms
        while c.sim.now() < end and any(not h.state.final for h in self.orders
                                        if c.node(h.txn_id.node_id).alive):
            c.run(c.sim.now() + period)
        return self.metrics(time.perf_counter() - wall)

    def _delayed(self, start: float, fn, *args):
        yield self.cluster.sim.sleep(max(0.0, start - self.cluster.sim.now()))
        yield from fn(*args)

    def metrics(self, wall_s: float = 0.0) -> RunMetrics:
        c = self.cluster
        m = RunMetrics(expected_commit_rate=self.cfg.expected_commit_rate())
        ser, pub = [], []
        for h in self.orders:
            m.issued += 1
            st = h.state
            if st is TxnState.COMMITTED:
                m.committed += 1
            elif st is TxnState.ROLLED_BACK_CONFLICT:
                m.conflict_rollbacks += 1
            elif st is TxnState.ROLLED_BACK_CONSTRAINT:
                m.constraint_rollbacks += 1
            else:
                m.unknown += 1
            if h.pos is not None and h.promised_at is not None:
                emitted = c.batch_emitted.get(h.pos.batch)
                if emitted is not None:
                    ser.append(max(0.0, emitted - h.promised_at))
                if h.serialized_at is not None:
                    pub.append(h.serialized_at - h.promised_at)
        m.commit_rate = m.committed / m.issued if m.issued else 0.0
        m.serialize_latency_ms = _summary(ser)
        m.publish_latency_ms = _summary(pub)
        m.update_prices = len(self.updates)
        m.update_price_rollbacks = sum(1 for h in self.updates if h.state is TxnState.ROLLED_BACK_CONFLICT)
        m.batches = c.max_frontier()
        m.virtual_ms = c.sim.now()
        m.wall_s = wall_s
        return m


def _shift(sc: Scenario, offset: float) -> Scenario:
    from dataclasses import replace
    return replace(sc, events=[replace(ev, at=ev.at + offset) for ev in sc.events])


def run_bench(cfg: WorkloadConfig, scenario: Optional[Scenario] = None, **cluster_kw) -> RunMetrics:
    return Bench(cfg, scenario, **cluster_kw).run()


# ---------------------------------------------------------------------------
# randomized mixed histories for the oracles

ITEMS_ID = 1
STOCK_ID = 2
EVENTS_ID = 3
ITEMS = table(ITEMS_ID, "Items", [("k", ValueType.INT64), ("v", ValueType.INT64)],
              primary_key=["k"], range_indexed=["v"])
STOCK = table(STOCK_ID, "Stock", [("id", ValueType.INT64), ("grp", ValueType.INT64), ("qty", ValueType.INT64)],
              primary_key=["id"])
EVENTS = table(EVENTS_ID, "Events", [("x", ValueType.INT64), ("y", ValueType.INT64)])
MIXED_TABLES = (ITEMS, STOCK, EVENTS)
MIXED_CONSTRAINT = "SUM(qty) >= 0 ON Stock GROUP BY grp"


@dataclass
class MixedConfig:
    nodes: int = 3
    txns_per_node: int = 6
    keys: int = 24
    groups: int = 3
    constraints: bool = False
    seed: int = 0
    duration_ms: float = 2000.0


def _mixed_client(cluster: Cluster, node_id: int, mc: MixedConfig, rng: random.Random, out: list):
    node = cluster.node(node_id)
    eng = node.engine
    sim = cluster.sim
    stock_ids = iter(range((node_id + 1) << 20, (node_id + 2) << 20))
    for _ in range(mc.txns_per_node):
        yield sim.sleep(rng.choice((0.0, 1.0, 3.0, 20.0, 60.0, 110.0, 150.0, 250.0)))
        if not node.alive:
            return
        h = eng.begin("Mixed")
        try:
            for _ in range(rng.randint(0, 4)):
                r = rng.random()
                if r < 0.45:
                    eng.read(h, ITEMS_ID, Eq(((0, rng.randrange(mc.keys)),)))
                elif r < 0.7:
                    lo = rng.randrange(100)
                    eng.read(h, ITEMS_ID, Range(1, lo, lo + rng.randrange(40), rng.random() < 0.8,
                                                rng.random() < 0.8))
                elif r < 0.8:
                    eng.read(h, ITEMS_ID, Eq(((1, rng.randrange(100)),)))
                elif r < 0.9:
                    eng.read(h, EVENTS_ID, FullTable())
                else:
                    eng.read(h, STOCK_ID, Eq(((1, rng.randrange(mc.groups)),)))
        except (VisibilityLag, RangeUnavailable):
            continue
        try:
            for _ in range(rng.randint(1, 3)):
                r = rng.random()
                if r < 0.55:
                    k = rng.randrange(mc.keys)
                    if rng.random() < 0.1:
                        eng.delete(h, ITEMS_ID, {0: k})
                    else:
                        eng.upsert(h, ITEMS_ID, {0: k, 1: rng.randrange(100)})
                elif r < 0.75:
                    eng.upsert(h, EVENTS_ID, {0: rng.randrange(10), 1: rng.randrange(10)})
                else:
                    eng.upsert(h, STOCK_ID, {0: next(stock_ids), 1: rng.randrange(mc.groups),
                                             2: rng.choice((-3, -2, -1, 1, 2, 4))})
        except (VisibilityLag, RangeUnavailable):
            continue
        f = eng.promise(h)
        out.append(h)
        try:
            yield f
        except (PromiseTimeout, RangeUnavailable):
            pass


def mixed_cluster(mc: MixedConfig, scenario: Optional[Scenario] = None, **cluster_kw) -> Cluster:
    """Run a small randomized history; the cluster keeps the full record."""
    kw = dict(nodes=mc.nodes, seed=mc.seed, strict_constraint_reads=mc.constraints,
              constraints=(MIXED_CONSTRAINT,) if mc.constraints else ())
    kw.update(cluster_kw)
    c = Cluster(ClusterConfig(**kw), tables=list(MIXED_TABLES))
    if scenario is not None:
        c.apply_scenario(scenario)
    out: list = []
    for i in range(mc.nodes):
        rng = random.Random(f"mixed-{mc.seed}-{i}")
        c.sim.spawn(_mixed_client(c, i, mc, rng, out))
    c.run(mc.duration_ms)
    c.drain(limit_ms=3000.0)
    return c
