import pytest

from wiser.model import Delta, RowVersion, TransactionId, ValueType, table, Catalog

KV = table(1, "KV", [("k", ValueType.INT64), ("v", ValueType.INT64)], primary_key=["k"], range_indexed=["v"])


def delta(node, seq, rows=(), snapshot=0, read_set=(), write_keys=()):
    tid = TransactionId(node, seq)
    ups = tuple(RowVersion(1, {0: k, 1: v}, txn_id=tid) for k, v in rows)
    return Delta(tid, snapshot, ups, tuple(read_set), tuple(write_keys))


@pytest.fixture
def kv_catalog():
    return Catalog([KV])


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = mod.summary_lines() if mod is not None else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
