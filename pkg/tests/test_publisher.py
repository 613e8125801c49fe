import pytest

from wiser.model import Catalog, SerializeFrontierRow, SerialPos, TransactionId
from wiser.publisher import CorruptBlock, PrimaryIndex, PublishedBlock, Publisher
from conftest import KV, delta


def _pub():
    p = Publisher(1, Catalog([KV]))
    ds = [(0, delta(1, 0, [(1, 10), (2, 20)])), (1, delta(1, 1, [(1, 11)])), (2, delta(1, 2, [(3, 30)]))]
    blocks = p.publish_batch(SerializeFrontierRow(4, 1, 3), ds, {TransactionId(1, 1)}, 100)
    return p, blocks


def test_publish_stamps_survivors_densely():
    p, blocks = _pub()
    assert p.frontier == 3 and p.frontier_line() == "1,3\n"
    (b,) = blocks
    assert [(r.values[0], r.ssn, r.pos) for r in b.rows] == [
        (1, 100, SerialPos(4, 0)), (2, 100, SerialPos(4, 0)), (3, 101, SerialPos(4, 2))]
    assert (b.min_ssn, b.max_ssn) == (100, 101)
    assert [s for s, _ in p.batch_txns[4]] == [100, 101]


def test_publish_checks_owner_and_frontier():
    p, _ = _pub()
    with pytest.raises(ValueError):
        p.publish_batch(SerializeFrontierRow(5, 2, 1), [], set(), 1)
    with pytest.raises(ValueError):
        p.publish_batch(SerializeFrontierRow(5, 1, 6), [(5, delta(1, 5))], set(), 1)


def test_index_visibility_by_frontier_and_hidden():
    p, _ = _pub()
    p.publish_batch(SerializeFrontierRow(7, 1, 4), [(3, delta(1, 3, [(1, 12)]))], set(), 102)
    assert p.index_lookup(1, (1,), 5).values[1] == 10
    assert p.index_lookup(1, (1,), 8).values[1] == 12
    assert p.index_lookup(1, (1,), 8, hidden={102}).values[1] == 10
    assert p.index_lookup(1, (1,), 4) is None


def test_scan_prunes_by_synopsis():
    p, (b,) = _pub()
    assert b.may_contain(1, 15, 25) and not b.may_contain(1, 31, None) and not b.may_contain(9)
    assert list(p.scan(1, 5, 1, 31, 40)) == []
    assert len(list(p.scan(1, 5))) == 3


def test_block_roundtrip_and_corruption():
    _, (b,) = _pub()
    raw = b.to_bytes()
    back = PublishedBlock.from_bytes(raw)
    assert [r.values for r in back.rows] == [r.values for r in b.rows]
    assert back.synopsis == b.synopsis and back.rows[2].txn_id == TransactionId(1, 2)
    bad = bytearray(raw)
    bad[20] ^= 0x40
    with pytest.raises(CorruptBlock):
        PublishedBlock.from_bytes(bytes(bad))


def test_primary_index_merges_keep_every_version():
    idx = PrimaryIndex(threshold=2)
    for b in range(6):
        r = delta(0, b, [(1, b)]).upserts[0].stamped(b + 1, SerialPos(b, 0))
        idx.add_run(1, [((1,), r)])
    assert idx.run_count(1) <= 2 and idx.merges > 0
    assert [r.values[1] for r in idx.versions(1, (1,))] == list(range(6))
    assert idx.latest(1, (1,), 3).values[1] == 2
