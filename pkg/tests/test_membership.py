import pytest

from wiser.cluster import Cluster, ClusterConfig
from wiser.membership import (FailureDetector, NodesRow, OldNodeAlive, active_ids, founding_rows,
                              membership_from, replica_ring, replica_set_for)
from wiser.txn import TxnState
from wiser.verify import History
from wiser.visibility import Eq
from wiser.workload import ITEMS_ID, MIXED_TABLES
from test_txn import commit, settle


def test_replica_ring():
    assert replica_ring([0, 1, 2, 3], 3) == {0: (1, 2), 1: (2, 3), 2: (3, 0), 3: (0, 1)}
    assert replica_ring([4], 3) == {4: ()}
    assert replica_set_for([0, 1, 2], 3, 3) == (0, 1)


def test_nodes_row_roundtrip_and_active():
    rows = founding_rows(3, 2)
    assert rows[2] == NodesRow(2, 2, (0,))
    assert NodesRow.from_values(rows[1].values()) == rows[1]
    members = membership_from(rows + [NodesRow(3, 9, (), "Left")])
    assert active_ids(members) == [0, 1, 2]
    assert active_ids(members, exclude={1}) == [0, 2]


def test_failure_detector():
    fd = FailureDetector(300, started=0)
    assert not fd.suspect(1, 200) and fd.suspect(1, 301)
    fd.saw(1, 500)
    assert fd.recently_seen(1, 700) and not fd.recently_seen(1, 900) and fd.suspect(1, 900)


def cluster(n=3, **kw):
    return Cluster(ClusterConfig(nodes=n, **kw), tables=list(MIXED_TABLES))


def test_join_claims_next_id_and_serves_transactions():
    c = cluster()
    f = c.join(10)
    c.run(c.sim.now() + 1500)
    assert f.result() == 3 and c.node(3).address == 10
    h = commit(c, 3, lambda eng, h: eng.upsert(h, ITEMS_ID, {0: 1, 1: 1}))
    settle(c, h)
    assert h.state is TxnState.COMMITTED


def test_concurrent_joins_get_distinct_ids():
    c = cluster()
    a = c.join(10, sponsor=1)
    b = c.join(11, sponsor=2)
    c.run(c.sim.now() + 4000)
    assert sorted([a.result(), b.result()]) == [3, 4]


def test_restart_uses_fresh_id_and_old_log_stays_readable():
    c = cluster(4)
    h = commit(c, 2, lambda eng, h: eng.upsert(h, ITEMS_ID, {0: 5, 1: 55}))
    c.run(c.sim.now() + 5)
    c.crash(2)
    settle(c, h)
    with pytest.raises(OldNodeAlive):
        c.rejoin(1, 20)
    f = c.restart(2)
    c.run(c.sim.now() + 3000)
    assert f.result() == 4
    # the handle died with node 2; the serialized history still knows the outcome
    assert History.from_cluster(c).status(h.txn_id)[0] == "Committed"
    eng = c.node(1).engine
    assert [r.values[1] for r in eng.read(eng.begin(), ITEMS_ID, Eq(((0, 5),)))] == [55]


def test_serializer_crash_elects_successor():
    c = cluster(3)
    c.run(200)
    c.crash(0)
    c.run(c.sim.now() + 2000)
    ser = c.serializer_node()
    assert ser is not None and ser.node_id != 0
    h = commit(c, 1, lambda eng, h: eng.upsert(h, ITEMS_ID, {0: 9, 1: 9}))
    settle(c, h)
    assert h.state is TxnState.COMMITTED
