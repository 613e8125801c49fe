"""Fault schedules: randomized split-brain runs and the availability run."""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .simnet import Scenario, ScenarioEvent
from .txn import TxnState
from .verify import History, check_failover, verify_history
from .visibility import Eq
from .workload import ITEMS_ID, MIXED_TABLES, MixedConfig, mixed_cluster
from .cluster import Cluster, ClusterConfig


def split_brain_schedule(seed: int) -> Scenario:
    """Random partitions and heals over 3-5 nodes, message loss, at most one crash."""
    rng = random.Random(f"splitbrain-{seed}")
    n = rng.randint(3, 5)
    events = []
    t = rng.uniform(50, 250)
    crashes = 0
    for _ in range(rng.randint(1, 4)):
        ids = list(range(n))
        rng.shuffle(ids)
        cut = rng.randint(1, n - 1)
        events.append(ScenarioEvent(round(t, 1), "partition", groups=(tuple(ids[:cut]), tuple(ids[cut:]))))
        t += rng.uniform(150, 900)
        if rng.random() < 0.5:
            events.append(ScenarioEvent(round(t, 1), "heal"))
            t += rng.uniform(50, 400)
        if rng.random() < 0.3 and n >= 4 and crashes < 1:
            crashes += 1
            victim = rng.randrange(n)
            events.append(ScenarioEvent(round(t, 1), "crash", node=victim))
            t += rng.uniform(300, 800)
            if rng.random() < 0.5:
                events.append(ScenarioEvent(round(t, 1), "restart", node=victim))
                t += rng.uniform(100, 300)
    events.append(ScenarioEvent(round(t, 1), "heal"))
    drop = 0.05 if rng.random() < 0.3 else 0.0
    return Scenario(seed=seed, node_count=n, drop_rate=drop, duration=t + 1500, events=events)


def run_split_brain(seed: int):
    sc = split_brain_schedule(seed)
    c = mixed_cluster(MixedConfig(nodes=sc.node_count, seed=seed, txns_per_node=8, duration_ms=sc.duration),
                      scenario=sc, drop_rate=sc.drop_rate)
    h = History.from_cluster(c)
    return c, h, verify_history(h)


@dataclass
class AvailabilityReport:
    promises_during: int = 0
    promises_ok: int = 0
    frontier_during: set = field(default_factory=set)
    frontier_after: int = 0
    exactly_once: bool = False
    problems: list = field(default_factory=list)

    @property
    def frozen(self) -> bool:
        return len(self.frontier_during) == 1

    @property
    def ok(self) -> bool:
        return (self.promises_during > 0 and self.promises_ok == self.promises_during and self.frozen
                and self.exactly_once)


def run_availability(seed: int = 0, nodes: int = 5, start: float = 300.0, end: float = 1300.0,
                     period: float = 20.0) -> tuple[Cluster, AvailabilityReport]:
    """Isolate the serializer (node 0) from every transaction node, then heal.

    Failover is off so the serializer stays put; the other nodes keep
    promising throughout.
    """
    c = Cluster(ClusterConfig(nodes=nodes, seed=seed, auto_failover=False), tables=list(MIXED_TABLES))
    rep = AvailabilityReport()
    rng = random.Random(f"availability-{seed}")
    others = tuple(range(1, nodes))
    c.sim.at(start, c._partition, ((0,), others))
    c.sim.at(end, c._heal)
    futures = []

    def issue():
        now = c.sim.now()
        for nid in others:
            eng = c.node(nid).engine
            h = eng.begin("Avail")
            k = rng.randrange(50)
            eng.read(h, ITEMS_ID, Eq(((0, k),)))
            eng.upsert(h, ITEMS_ID, {0: k, 1: rng.randrange(100)})
            f = eng.promise(h)
            if start <= now < end:
                futures.append(f)

    def sample():
        now = c.sim.now()
        if start + period <= now < end:
            for nid in others:
                rep.frontier_during.add(c.node(nid).view.frontier)

    t1 = c.sim.every(period, issue, start=period)
    t2 = c.sim.every(5.0, sample, start=5.0)
    c.sim.at(end + 500, t1.cancel)
    c.sim.at(end + 500, t2.cancel)
    c.run(end + 500)
    c.drain(limit_ms=5000.0)
    rep.promises_during = len(futures)
    rep.promises_ok = sum(1 for f in futures if f.done and f.error is None)
    rep.frontier_after = c.max_frontier()
    h = History.from_cluster(c)
    v = check_failover(h)
    rep.problems = list(v.cases)
    unresolved = [x for x in c.unresolved()]
    rep.exactly_once = v.ok and not unresolved and all(
        x.state in (TxnState.COMMITTED, TxnState.ROLLED_BACK_CONFLICT) for x in c.handles())
    return c, rep


def run_scenario(sc: Scenario):
    """Run the mixed workload under a scenario; options come from the file."""
    opts = dict(sc.options)
    constraints = str(opts.pop("constraints", "off")).lower() in ("on", "true", "1", "yes")
    txns = int(opts.pop("txns_per_node", 8))
    failover = str(opts.pop("auto_failover", "on")).lower() in ("on", "true", "1", "yes")
    if opts:
        raise ValueError(f"unknown scenario options: {', '.join(sorted(opts))}")
    mc = MixedConfig(nodes=sc.node_count, seed=sc.seed, txns_per_node=txns, constraints=constraints,
                     duration_ms=sc.duration)
    return mixed_cluster(mc, scenario=sc, latency=sc.latency, drop_rate=sc.drop_rate, auto_failover=failover)
