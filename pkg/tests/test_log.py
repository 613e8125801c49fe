import pytest
from hypothesis import given, settings, strategies as st

from wiser.log import (CorruptBlock, LocalLog, LogBlock, LogClosed, PromiseTracker, RangeUnavailable,
                       ReplicaStore, ReplicationState)
from wiser.model import decode_delta, encode_delta
from conftest import delta

values = st.one_of(st.none(), st.integers(-2**63, 2**63 - 1), st.text(max_size=8), st.booleans(),
                   st.floats(allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(rows=st.lists(st.tuples(st.integers(-2**63, 2**63 - 1), values), max_size=6),
       node=st.integers(0, 2**31), seq=st.integers(0, 2**40), snap=st.integers(0, 2**40))
def test_delta_codec_roundtrip_property(rows, node, seq, snap):
    d = delta(node, seq, rows, snapshot=snap)
    out = decode_delta(encode_delta(d))
    assert out.txn_id == d.txn_id and out.snapshot == snap
    assert [r.values for r in out.upserts] == [r.values for r in d.upserts]
    assert encode_delta(out) == encode_delta(d)


def test_append_harden_crash():
    log = LocalLog(0)
    for i in range(3):
        assert log.append(delta(0, i)) == i
    with pytest.raises(RangeUnavailable):
        log.get(0)
    assert log.harden() == 3
    log.append(delta(0, 3))
    log.crash()
    assert log.upper == 3
    assert [lsn for lsn, _ in log.scan(1, 3)] == [1, 2]
    with pytest.raises(RangeUnavailable):
        log.scan(0, 4)
    log.close()
    with pytest.raises(LogClosed):
        log.append(delta(0, 9))


def test_blocks_split_and_checksum():
    log = LocalLog(1, block_records=2)
    for i in range(5):
        log.append(delta(1, i, [(i, i)]))
    log.harden()
    blocks = log.blocks()
    assert [b.start_lsn for b in blocks] == [0, 2, 4]
    raw = blocks[1].to_bytes()
    back = LogBlock.from_bytes(raw)
    assert back.start_lsn == 2 and [d.txn_id.local_seq for d in back.deltas()] == [2, 3]
    flipped = bytearray(raw)
    flipped[10] ^= 0xFF
    with pytest.raises(CorruptBlock):
        LogBlock.from_bytes(bytes(flipped))
    with pytest.raises(CorruptBlock):
        LogBlock.from_bytes(b"xx")


def test_file_backed_recovery(tmp_path):
    log = LocalLog(2, tmp_path, block_records=2)
    for i in range(3):
        log.append(delta(2, i, [(i, -i)]))
    log.harden()
    log.append(delta(2, 3))
    log.harden()
    back = LocalLog.open(tmp_path, 2, block_records=2)
    assert back.hardened_upper == 4
    assert back.get(2).upserts[0].values == {0: 2, 1: -2}
    path = sorted(tmp_path.glob("log.2.*"))[0]
    data = bytearray(path.read_bytes())
    data[-1] ^= 1
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptBlock):
        LocalLog.open(tmp_path, 2)


def test_quorum_upper():
    rs = ReplicationState([1, 2])
    assert rs.quorum_upper(5, 2) == 0
    rs.ack(1, 3)
    rs.ack(1, 2)  # stale acks never regress
    assert rs.quorum_upper(5, 2) == 3
    rs.ack(2, 7)
    assert rs.quorum_upper(5, 2) == 5
    assert rs.quorum_upper(5, 3) == 3
    assert rs.quorum_upper(5, 4) == 0


def test_replica_store_offer_is_idempotent():
    rs = ReplicaStore()
    ds = [delta(0, i) for i in range(4)]
    assert rs.offer(0, 0, ds[:2]) == 2
    assert rs.offer(0, 1, ds[1:3]) == 3
    assert rs.offer(0, 5, ds[3:]) == 3  # gap: refused
    assert [lsn for lsn, _ in rs.scan(0, 0, 3)] == [0, 1, 2]
    with pytest.raises(RangeUnavailable):
        rs.scan(0, 0, 4)


def test_promise_tracker():
    pt = PromiseTracker()
    a = pt.wait(0, 2)
    b = pt.wait(3, 2)
    pt.update(7, lambda q: 2)
    assert a.done and a.result().lsn == 0 and not b.done
    pt.fail_all(RuntimeError("down"))
    assert b.done and isinstance(b.error, RuntimeError)
