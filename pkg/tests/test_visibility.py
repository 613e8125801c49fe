import pytest

from wiser.log import LocalLog, RangeUnavailable
from wiser.model import Catalog, TransactionId, ValueType, table
from wiser.publisher import Publisher
from wiser.serializer import FrontierView, Heartbeat, PayloadItem, Serializer, SerializersRow
from wiser.visibility import Eq, FullTable, Range, Reader, VisibilityLag, point_key
from conftest import KV, delta

LOGROWS = table(2, "Ev", [("x", ValueType.INT64)])


def _setup():
    """Node 1 writes k=1..3 across three batches; txn 1:1 is rolled back."""
    log = LocalLog(1)
    ds = [delta(1, 0, [(1, 10), (2, 20)]), delta(1, 1, [(1, 99)]), delta(1, 2, [(3, 30), (1, 11)])]
    for d in ds:
        log.append(d)
    log.harden()
    s = Serializer(0, 0)
    for lsn, d in enumerate(ds):
        s.ingest_heartbeat(Heartbeat(1, lsn + 1, lsn, (PayloadItem(lsn, d.txn_id, 0, (), (), (), frozenset({1})),)))
        rec = s.serialize_batch()
        if lsn == 1:
            rec = rec._replace(rollbacks=(TransactionId(1, 1),), survivors=0)
            s.entries[-1] = rec
    # ssn bookkeeping for the hand-made rollback
    s.entries[-1] = s.entries[-1]._replace(ssn_start=2)
    view = FrontierView()
    view.set_rows([SerializersRow(0, 0, 0)])
    view.receive((0, 0), 0, s.entries)
    view.reveal((0, 0), len(s.entries))
    view.refresh()
    pub = Publisher(1, Catalog([KV]))
    return log, view, pub


def _reader(log, view, pub, reachable=True):
    return Reader(view, Catalog([KV]), lambda o: pub if reachable else None,
                  lambda o, lo, hi: log.scan(lo, hi))


def _publish_all(view, pub, log):
    for rec in view.batches:
        pub.publish_batch(rec.row, log.scan(rec.lsn_lower, rec.row.lsn_upper), set(rec.rollbacks), rec.ssn_start)


def values(rows):
    return [(r.values[0], r.values[1]) for r in rows]


def test_unpublished_tail_is_read_from_log():
    log, view, pub = _setup()
    r = _reader(log, view, pub)
    vs = r.plan(3, 1)
    assert not vs.fully_published
    assert values(r.read(3, 1, FullTable())) == [(1, 11), (2, 20), (3, 30)]
    assert values(r.read(2, 1, Eq(((0, 1),)))) == [(1, 10)]  # rolled back 99 never shows
    _publish_all(view, pub, log)
    assert r.plan(3, 1).fully_published
    assert values(r.read(3, 1, FullTable())) == [(1, 11), (2, 20), (3, 30)]


def test_range_reads_and_predicate_filtering():
    log, view, pub = _setup()
    _publish_all(view, pub, log)
    r = _reader(log, view, pub)
    assert values(r.read(3, 1, Range(1, 15, 30))) == [(2, 20), (3, 30)]
    assert values(r.read(1, 1, Range(1, 10, 10))) == [(1, 10)]
    # k=1 moved to 11 at batch 2: an old value must not resurface
    assert values(r.read(3, 1, Range(1, 10, 10))) == []


def test_constraint_failures_are_hidden():
    log, view, pub = _setup()
    _publish_all(view, pub, log)
    r = _reader(log, view, pub)
    view.failures.add(2)  # SSN of 1:2
    assert values(r.read(3, 1, FullTable())) == [(1, 10), (2, 20)]


def test_lag_errors():
    log, view, pub = _setup()
    r = _reader(log, view, pub)
    with pytest.raises(VisibilityLag):
        r.plan(9)
    dead = Reader(view, Catalog([KV]), lambda o: None,
                  lambda o, lo, hi: (_ for _ in ()).throw(RangeUnavailable("gone")))
    with pytest.raises(VisibilityLag):
        dead.read(3, 1, FullTable())


def test_point_key():
    assert point_key(KV, Eq(((0, 4),))) == (4,)
    assert point_key(KV, Eq(((1, 4),))) is None
    assert point_key(KV, Range(0, 1, 2)) is None
    assert point_key(LOGROWS, Eq(((0, 1),))) is None
