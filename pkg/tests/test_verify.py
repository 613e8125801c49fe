import json

import pytest

from wiser.cluster import Cluster, ClusterConfig
from wiser.model import TransactionId
from wiser.verify import History, TraceCorrupt, UnknownTxn, check_serializability, verify_history
from wiser.visibility import Eq
from wiser.workload import ITEMS_ID, MIXED_CONSTRAINT, MIXED_TABLES, STOCK_ID, MixedConfig, mixed_cluster
from test_txn import cluster, commit, settle


def rmw(eng, h):
    rows = eng.read(h, ITEMS_ID, Eq(((0, 7),)))
    eng.upsert(h, ITEMS_ID, {0: 7, 1: (rows[0].values[1] if rows else 0) + 1})


def conflict_history():
    c = cluster()
    a = commit(c, 1, rmw)
    b = commit(c, 2, rmw)
    settle(c, a, b)
    return c, History.from_cluster(c)


def constraint_history():
    c = cluster(constraints=(MIXED_CONSTRAINT,), strict_constraint_reads=True)
    s = commit(c, 1, lambda eng, h: eng.upsert(h, STOCK_ID, {0: 1, 1: 0, 2: 2}))
    settle(c, s)
    c.run(c.sim.now() + 300)
    bad = commit(c, 2, lambda eng, h: eng.upsert(h, STOCK_ID, {0: 2, 1: 0, 2: -5}))
    settle(c, bad)
    return bad, History.from_cluster(c)


def records(h):
    return [json.loads(line) for line in h.lines()]


def test_clean_histories_pass():
    _, h = conflict_history()
    assert all(v.ok for v in verify_history(h))
    _, h = constraint_history()
    assert all(v.ok for v in verify_history(h))


def test_suppressed_rollback_breaks_serializability():
    _, h = conflict_history()
    recs = records(h)
    hit = False
    for r in recs:
        if r["rec"] == "batch" and r["rollbacks"]:
            r["rollbacks"] = []
            r["survivors"] += 1
            hit = True
    assert hit
    mutated = History.from_records(recs)
    v = check_serializability(mutated)
    assert not v.ok and v.cases


def test_admitted_violator_breaks_soundness():
    bad, h = constraint_history()
    recs = records(h)
    for r in recs:
        if r["rec"] == "constraint":
            r["failures"] = [s for s in r["failures"] if s != bad.ssn]
    verdicts = {v.name: v for v in verify_history(History.from_records(recs))}
    assert not verdicts["constraint soundness"].ok


def test_dump_load_roundtrip(tmp_path):
    c, h = conflict_history()
    path = tmp_path / "trace.jsonl"
    h.dump(path, extra_lines=c.trace.lines())
    back = History.load(path)
    assert list(back.lines()) == list(h.lines())


@pytest.mark.parametrize("text", ["not json\n", '{"rec": "txn"}\n', '{"t": 1, "kind": "x"}\n',
                                  '{"rec": "meta", "tables": [], "constraints": [], "strict": false}\n'
                                  '{"rec": "bogus"}\n'])
def test_corrupt_traces(tmp_path, text):
    p = tmp_path / "t.jsonl"
    p.write_text(text)
    with pytest.raises(TraceCorrupt):
        History.load(p)


def test_status_stages():
    _, h = conflict_history()
    states = sorted(h.status(t)[0] for t in h.txns if t.node_id in (1, 2))
    assert states == ["Committed", "RolledBackConflict"]
    with pytest.raises(UnknownTxn):
        h.status(TransactionId(9, 9))
    bad, h = constraint_history()
    assert h.status(bad.txn_id) == ("RolledBackConstraint", bad.ssn)


def test_status_promised_on_partitioned_node():
    c = Cluster(ClusterConfig(nodes=5, auto_failover=False), tables=list(MIXED_TABLES))
    c.run(150)
    c._partition(((0,), (1, 2, 3, 4)))
    h = commit(c, 1, lambda eng, h: eng.upsert(h, ITEMS_ID, {0: 3, 1: 3}))
    c.run(c.sim.now() + 500)
    assert History.from_cluster(c).status(h.txn_id) == ("Promised", None)


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("constraints", [False, True])
def test_random_mixed_histories(seed, constraints):
    c = mixed_cluster(MixedConfig(nodes=2 + seed % 5, seed=seed, constraints=constraints))
    bad = [v.line() for v in verify_history(History.from_cluster(c)) if not v.ok]
    assert not bad
