import random

import pytest

from wiser.conflicts import CacheEvicted, ConflictResolver, OutOfOrderBatch, RollbacksTable
from wiser.model import KeyRange, SerialPos, TransactionId, eq_read, range_read, table_read, write_entry

T = TransactionId


def w(k, v=None, old=None):
    cvs = [(1, x) for x in (v, old) if x is not None]
    return write_entry(1, k, cvs)


def test_eq_conflict_only_for_writes_in_snapshot_future():
    r = ConflictResolver()
    r.process_batch(0, [(SerialPos(0, 0), T(0, 0), 0, (), (w(5),))])
    lost = r.process_batch(1, [
        (SerialPos(1, 0), T(1, 0), 0, (eq_read(1, 5),), ()),   # snapshot 0 misses batch 0's write
        (SerialPos(1, 1), T(1, 1), 1, (eq_read(1, 5),), ()),   # snapshot 1 covers it
        (SerialPos(1, 2), T(1, 2), 0, (eq_read(1, 6),), ()),
    ])
    assert lost == [T(1, 0)]


def test_within_batch_order_matters():
    r = ConflictResolver()
    lost = r.process_batch(0, [
        (SerialPos(0, 0), T(0, 0), 0, (eq_read(1, 9),), (w(9),)),
        (SerialPos(0, 1), T(0, 1), 0, (eq_read(1, 9),), ()),
    ])
    assert lost == [T(0, 1)]


def test_range_phantom_and_table_read():
    r = ConflictResolver()
    r.process_batch(0, [(SerialPos(0, 0), T(0, 0), 0, (), (w(1, v=15),))])
    lost = r.process_batch(1, [
        (SerialPos(1, 0), T(1, 0), 0, (range_read(1, KeyRange(1, 10, 20)),), ()),
        (SerialPos(1, 1), T(1, 1), 0, (range_read(1, KeyRange(1, 16, 20)),), ()),
        (SerialPos(1, 2), T(1, 2), 0, (range_read(1, KeyRange(1, 10, 15, True, False)),), ()),
        (SerialPos(1, 3), T(1, 3), 0, (table_read(1),), ()),
        (SerialPos(1, 4), T(1, 4), 0, (table_read(2),), ()),
    ])
    assert lost == [T(1, 0), T(1, 3)]


def test_moving_row_out_of_range_conflicts():
    r = ConflictResolver()
    r.process_batch(0, [(SerialPos(0, 0), T(0, 0), 0, (), (w(1, v=99, old=12),))])
    lost = r.process_batch(1, [(SerialPos(1, 0), T(1, 0), 0, (range_read(1, KeyRange(1, 10, 20)),), ())])
    assert lost == [T(1, 0)]


def test_out_of_order_batches_rejected():
    r = ConflictResolver()
    with pytest.raises(OutOfOrderBatch):
        r.process_batch(1, [])


def test_eviction_uses_fallback():
    history = {0: [(SerialPos(0, 0), (w(5),))]}
    r = ConflictResolver(merge_below=1, fetch_writes=lambda b: history.get(b, []))
    r.ingest_writes(0, history[0])
    for b in range(1, 4):
        r.process_batch(b, [])
    assert r.evict(2) >= 1
    assert r.evicted_below >= 1
    lost = r.process_batch(4, [(SerialPos(4, 0), T(2, 0), 0, (eq_read(1, 5),), ())])
    assert lost == [T(2, 0)] and r.fallbacks >= 1


def test_eviction_without_fallback_raises():
    r = ConflictResolver(merge_below=1)
    for b in range(3):
        r.process_batch(b, [(SerialPos(b, 0), T(9, b), b, (), (w(b),))])
    assert r.evict(2) == 2
    with pytest.raises(CacheEvicted):
        r.process_batch(3, [(SerialPos(3, 0), T(0, 0), 0, (eq_read(1, 1),), ())])


def test_rollbacks_table_rejects_duplicates():
    t = RollbacksTable()
    t.append(T(1, 2))
    with pytest.raises(ValueError):
        t.append(T(1, 2))
    assert t.lines() == ["1,2\n"] and T(1, 2) in t


@pytest.mark.parametrize("seed", range(30))
def test_matches_brute_force(seed):
    """Random reads and writes: resolver outcome equals a scan over all earlier writes."""
    rng = random.Random(seed)
    r = ConflictResolver(merge_below=rng.choice((1, 3, 1000)))
    writes = []  # (pos, key, value)
    for b in range(12):
        items = []
        for i in range(rng.randint(0, 4)):
            pos = SerialPos(b, i)
            snap = rng.randint(max(0, b - 4), b)
            reads = []
            for _ in range(rng.randint(0, 3)):
                if rng.random() < 0.6:
                    reads.append(eq_read(1, rng.randrange(8)))
                else:
                    lo = rng.randrange(20)
                    reads.append(range_read(1, KeyRange(1, lo, lo + rng.randrange(6))))
            ws = []
            for _ in range(rng.randint(0, 2)):
                k = rng.randrange(8)
                ws.append((k, rng.randrange(20)))
            items.append((pos, T(b, i), snap, tuple(reads), tuple(w(k, v) for k, v in ws), ws))
        want = []
        for pos, tid, snap, reads, _, ws in items:
            hit = False
            for e in reads:
                for wpos, k, v in writes:
                    if wpos < pos and wpos[0] >= snap:
                        if e.range is None and e.key_hash == k:
                            hit = True
                        if e.range is not None and e.range.contains(v):
                            hit = True
            if hit:
                want.append(tid)
            writes.extend((pos, k, v) for k, v in ws)
        got = r.process_batch(b, [it[:5] for it in items])
        assert got == want
