import pytest

from wiser.model import SerializeFrontierRow, TransactionId, eq_read, write_entry
from wiser.serializer import (ConstraintRecord, Deposed, FrontierView, Heartbeat, MissingFile, NotSerializer,
                              PayloadItem, Serializer, SerializersRow, StaleNode, StartRecord, adopt, chain_of,
                              current_serializer, file_name, reconcile)


def items(node, lo, hi, snapshot=0, reads=(), writes=()):
    return tuple(PayloadItem(l, TransactionId(node, l), snapshot, tuple(reads), tuple(writes))
                 for l in range(lo, hi))


def hb(node, upper, frm=0, **kw):
    return Heartbeat(node, upper, frm, items(node, frm, upper, **kw))


def test_current_serializer_and_chain():
    rows = [SerializersRow(0, 0, 0), SerializersRow(2, 1, 4), SerializersRow(1, 1, 9)]
    assert current_serializer(rows) == SerializersRow(2, 1, 4)
    assert chain_of(rows) == [SerializersRow(0, 0, 0), SerializersRow(2, 1, 4)]
    with pytest.raises(ValueError):
        current_serializer([])
    assert file_name((2, 5)) == "SerFront.2.5"


def test_batches_follow_arrival_and_cover_ranges():
    s = Serializer(0, 0)
    s.ingest_heartbeat(hb(2, 3))
    s.ingest_heartbeat(hb(1, 2))
    a = s.serialize_batch()
    b = s.serialize_batch()
    assert (a.row, a.lsn_lower) == (SerializeFrontierRow(0, 2, 3), 0)
    assert (b.row, b.lsn_lower) == (SerializeFrontierRow(1, 1, 2), 0)
    assert s.serialize_batch() is None
    s.ingest_heartbeat(hb(2, 5, frm=3))
    c = s.serialize_batch()
    assert (c.row, c.lsn_lower, c.ssn_start) == (SerializeFrontierRow(2, 2, 5), 3, 6)
    assert s.lines() == ["0,2,3\n", "1,1,2\n", "2,2,5\n"]


def test_heartbeat_with_gap_is_not_taken():
    s = Serializer(0, 0)
    ack = s.ingest_heartbeat(hb(1, 5, frm=2))
    assert ack.received_upper == 0 and not s.has_pending()


def test_conflicts_resolved_at_serialize():
    s = Serializer(0, 0)
    s.ingest_heartbeat(Heartbeat(1, 1, 0, (PayloadItem(0, TransactionId(1, 0), 0, (), (write_entry(1, 7),)),)))
    s.serialize_batch()
    s.ingest_heartbeat(Heartbeat(2, 1, 0, (PayloadItem(0, TransactionId(2, 0), 0, (eq_read(1, 7),), ()),)))
    rec = s.serialize_batch()
    assert rec.rollbacks == (TransactionId(2, 0),) and rec.survivors == 0


def test_stale_node_and_deposed():
    s = Serializer(0, 0, is_member=lambda n: n != 9)
    with pytest.raises(StaleNode):
        s.ingest_heartbeat(hb(9, 1))
    s.deposed = True
    with pytest.raises(NotSerializer):
        s.ingest_heartbeat(hb(1, 1))
    with pytest.raises(Deposed):
        s.serialize_batch()


def _tenure(node, seq, start, uppers, prev=None, prev_len=0, next_ssn=1):
    s = Serializer(node, seq, start, node_uppers=dict(uppers), next_ssn=next_ssn, prev_file=prev, prev_len=prev_len)
    return s


def test_reconcile_drops_deposed_tail():
    rows = [SerializersRow(0, 0, 0)]
    a = _tenure(0, 0, 0, {})
    for i in range(3):
        a.ingest_heartbeat(hb(1, i + 1, frm=i))
        a.serialize_batch()
    # a successor takes over at batch 2; a's batch 2 is dropped
    rows.append(SerializersRow(2, 1, 2))
    b = _tenure(2, 1, 2, {1: 2}, prev=(0, 0), prev_len=3, next_ssn=3)
    b.ingest_heartbeat(hb(1, 4, frm=2, snapshot=2))
    b.serialize_batch()
    files = {(0, 0): a.entries, (2, 1): b.entries}
    recs = reconcile(rows, files)
    assert [(r.row.batch, r.row.node_id, r.row.lsn_upper) for r in recs] == [(0, 1, 1), (1, 1, 2), (2, 1, 4)]
    st = adopt(rows, files)
    assert st["starting_batch"] == 3 and st["node_uppers"] == {1: 4} and st["next_ssn"] == 5
    with pytest.raises(MissingFile):
        reconcile(rows, {(2, 1): b.entries})


def test_frontier_view_reveals_by_length():
    s = Serializer(0, 0)
    for i in range(3):
        s.ingest_heartbeat(hb(1, i + 1, frm=i))
        s.serialize_batch()
    s.append_constraint_record(ConstraintRecord(0, 3, (), {}))
    v = FrontierView()
    seen = []
    v.on_new_records(seen.extend)
    v.set_rows([SerializersRow(0, 0, 0)])
    v.receive((0, 0), 0, s.entries)
    v.refresh()
    assert v.frontier == 0
    v.reveal((0, 0), 3)  # start record plus two batches
    v.refresh()
    assert v.frontier == 2
    v.reveal((0, 0), len(s.entries))
    v.refresh()
    assert v.frontier == 3 and v.constraint_frontier == 3 and len(seen) == 4
    assert v.batch_of_lsn(1, 1).row.batch == 1
    assert [r.row.batch for r in v.node_batches(1, below=2)] == [0, 1]
    assert isinstance(s.entries[0], StartRecord)
