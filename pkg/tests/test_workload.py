import pytest

from wiser.simnet import parse_scenario
from wiser.workload import ConfigError, RunMetrics, WorkloadConfig, run_bench


def test_expected_commit_rate():
    assert WorkloadConfig(update_price_size=10).expected_commit_rate() == pytest.approx(0.99004, abs=1e-5)
    assert WorkloadConfig(update_price_size=20).expected_commit_rate() == pytest.approx(0.98017, abs=1e-5)
    assert WorkloadConfig(update_price_size=0).expected_commit_rate() == 1.0


@pytest.mark.parametrize("kw", [dict(product_count=0), dict(reads_per_new_order=20000),
                                dict(update_price_size=-1), dict(update_interval_ms=0),
                                dict(new_order_nodes=0), dict(new_orders=None),
                                dict(duration_virtual_ms=-5)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        WorkloadConfig(**kw).validate()


def test_no_updates_means_no_rollbacks():
    m = run_bench(WorkloadConfig(update_price_size=0, new_orders=600, seed=1))
    assert m.commit_rate == 1.0 and m.issued == 600 and m.balanced


def test_small_run_accounts_for_everything():
    m = run_bench(WorkloadConfig(update_price_size=50, product_count=1000, new_orders=800, seed=2))
    assert m.balanced and m.unknown == 0
    assert m.conflict_rollbacks > 0
    assert m.serialize_latency_ms["n"] == m.issued
    assert m.update_prices > 0
    assert "commit rate" in m.table()


def test_duration_bound_run():
    m = run_bench(WorkloadConfig(duration_virtual_ms=500, new_orders=None, seed=3))
    assert m.issued > 0 and m.balanced


def test_constraints_mode_records_constraint_rollbacks():
    m = run_bench(WorkloadConfig(constraints=True, product_count=20, reads_per_new_order=2, initial_stock=1,
                                 restock_size=2, restock_qty=1, new_orders=400, seed=4))
    assert m.balanced and m.constraint_rollbacks > 0


def test_bench_under_fault_scenario():
    sc = parse_scenario("seed=1\nevents:\n  200 partition 1 | 0,2,3,4,5\n  700 heal\n")
    m = run_bench(WorkloadConfig(new_orders=600, seed=5), sc)
    assert m.balanced


def test_metrics_identity():
    m = RunMetrics(issued=5, committed=3, conflict_rollbacks=1, unknown=1)
    assert m.balanced and m.to_dict()["balanced"]
    m.issued = 6
    assert not m.balanced
