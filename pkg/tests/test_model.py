import pytest

from wiser.model import (Catalog, Column, EncodingError, KeyRange, RowVersion, SchemaViolation, SerialPos,
                         TableSchema, TransactionId, ValueType, compare_serial_pos, decode_delta, decode_value,
                         encode_delta, encode_value, eq_read, key_hash, range_read, row_key_hash, table,
                         write_entry)
from conftest import KV, delta


@pytest.mark.parametrize("v", [None, 0, -1, 2**63 - 1, -2**63, 1.5, -0.0, "", "héllo", True, False])
def test_value_roundtrip(v):
    buf = encode_value(v)
    out, off = decode_value(buf)
    assert off == len(buf)
    assert out == v and type(out) is type(v)


def test_value_encoding_distinguishes_types():
    assert encode_value(1) != encode_value(1.0)
    assert encode_value(True) != encode_value(1)
    assert encode_value("1") != encode_value(1)


def test_value_errors():
    with pytest.raises(EncodingError):
        encode_value(2**63)
    with pytest.raises(EncodingError):
        encode_value(b"raw")
    with pytest.raises(EncodingError):
        decode_value(b"\x01\x00")
    with pytest.raises(EncodingError):
        decode_value(b"\x09")


def test_key_hash_depends_on_table_and_values():
    assert key_hash(1, [(0, 5)]) == key_hash(1, [(0, 5)])
    assert key_hash(1, [(0, 5)]) != key_hash(2, [(0, 5)])
    assert key_hash(1, [(0, 5)]) != key_hash(1, [(0, 6)])
    assert row_key_hash(KV, {0: 5, 1: 1}) == row_key_hash(KV, {0: 5, 1: 99})


def test_transaction_id_text():
    t = TransactionId(3, 17)
    assert str(t) == "3:17"
    assert TransactionId.parse("3:17") == t


def test_serial_pos_order():
    assert compare_serial_pos(SerialPos(1, 5), SerialPos(2, 0)) == -1
    assert compare_serial_pos(SerialPos(2, 1), SerialPos(2, 0)) == 1
    assert compare_serial_pos(SerialPos(2, 1), SerialPos(2, 1)) == 0


def test_schema_validation():
    with pytest.raises(SchemaViolation):
        TableSchema(1, "x", (Column(0, "a", ValueType.INT64), Column(0, "b", ValueType.INT64)))
    with pytest.raises(SchemaViolation):
        TableSchema(1, "x", (Column(0, "a", ValueType.INT64),), primary_key=(3,))
    KV.check_row({0: 1, 1: 2})
    with pytest.raises(SchemaViolation):
        KV.check_row({0: 1, 1: "two"})
    with pytest.raises(SchemaViolation):
        KV.check_row({1: 2})
    with pytest.raises(SchemaViolation):
        KV.check_row({0: 1, 7: 2})
    cat = Catalog([KV])
    with pytest.raises(SchemaViolation):
        cat.add(KV)
    assert cat.by_name("KV") is KV


def test_float_column_accepts_int():
    t = table(2, "P", [("id", ValueType.INT64), ("price", ValueType.FLOAT64)], primary_key=["id"])
    t.check_row({0: 1, 1: 3})


def test_key_range_bounds():
    r = KeyRange(1, 10, 20, low_inclusive=False)
    assert not r.contains(10) and r.contains(11) and r.contains(20) and not r.contains(21)
    assert not r.contains(None)
    assert KeyRange(1).contains(-10**9)


def test_delta_roundtrip_with_entries():
    d = delta(2, 9, [(1, 10), (2, 20)], snapshot=4,
              read_set=[eq_read(1, 123), range_read(1, KeyRange(1, 5, None, True, False))],
              write_keys=[write_entry(1, 77, [(1, 10), (1, None)])])
    out = decode_delta(encode_delta(d))
    assert out.txn_id == d.txn_id and out.snapshot == 4
    assert [r.values for r in out.upserts] == [r.values for r in d.upserts]
    assert out.read_set == d.read_set
    assert out.write_keys == d.write_keys


def test_row_version_stamp():
    r = RowVersion(1, {0: 1})
    s = r.stamped(5, SerialPos(2, 0))
    assert s.ssn == 5 and s.pos == SerialPos(2, 0) and r.ssn is None
