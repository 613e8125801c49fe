import json

import pytest

from wiser.cli import main

SCENARIO = """seed=4
nodes=4
duration=2000
constraints=on
events:
  300 partition 0 | 1,2,3
  1200 heal
"""


def test_bench_json(capsys):
    assert main(["bench", "--new-orders", "300", "--update-size", "0", "--seed", "1", "--json"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2
    metrics = json.loads(lines[1])
    assert metrics["rec"] == "metrics" and metrics["commit_rate"] == 1.0 and metrics["balanced"]


def test_bench_env_seed_overrides(capsys, monkeypatch):
    monkeypatch.setenv("WISER_SEED", "77")
    assert main(["bench", "--new-orders", "50", "--seed", "1", "--json"]) == 0
    cfg = json.loads(capsys.readouterr().out.splitlines()[0])
    assert cfg["seed"] == 77


def test_bench_tolerance_can_fail(capsys):
    rc = main(["bench", "--new-orders", "300", "--products", "100", "--update-size", "50",
               "--tolerance", "0.0001", "--json"])
    assert rc == 1


def test_bench_config_file(tmp_path, capsys):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"new_orders": 40, "update_price_size": 0}))
    assert main(["bench", "--config", str(p), "--json"]) == 0
    assert json.loads(capsys.readouterr().out.splitlines()[0])["new_orders"] == 40
    p.write_text(json.dumps({"bogus": 1}))
    assert main(["bench", "--config", str(p)]) == 2


def test_bench_config_error(capsys):
    assert main(["bench", "--nodes", "0"]) == 2
    assert "error" in capsys.readouterr().err


def test_sim_verify_status(tmp_path, capsys):
    sc = tmp_path / "s.txt"
    sc.write_text(SCENARIO)
    out = tmp_path / "trace.jsonl"
    assert main(["sim", str(sc), "--out", str(out)]) == 0
    assert main(["verify", "--trace", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.count("PASS") == 12 and "FAIL" not in text
    ids = [json.loads(l)["id"] for l in out.read_text().splitlines() if '"rec":"txn"' in l.replace(" ", "")]
    assert main(["status", "--txn", ids[0], "--trace", str(out)]) == 0
    st = json.loads(capsys.readouterr().out)
    assert st["txn"] == ids[0] and st["state"] in ("Committed", "RolledBackConflict", "RolledBackConstraint")


def test_status_and_verify_errors(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    assert main(["verify", "--trace", str(bad)]) == 2
    assert main(["status", "--txn", "1:1", "--trace", str(bad)]) == 2
    assert main(["status", "--txn", "nope", "--trace", str(bad)]) == 2


def test_unknown_txn_exit_code(tmp_path, capsys):
    sc = tmp_path / "s.txt"
    sc.write_text("seed=1\nnodes=3\nduration=800\n")
    out = tmp_path / "t.jsonl"
    assert main(["sim", str(sc), "--out", str(out)]) == 0
    assert main(["status", "--txn", "99:0", "--trace", str(out)]) == 3


def test_missing_verb_is_usage_error():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2
