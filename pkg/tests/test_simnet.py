import pytest

from wiser.simnet import (DurableStore, EmptyQueue, Future, Network, Scenario, ScenarioEvent, SimTimeout,
                          Simulator, Trace, load_trace, parse_latency, parse_scenario)


def test_events_run_in_time_then_insertion_order():
    sim = Simulator()
    out = []
    sim.at(5, out.append, "b")
    sim.at(1, out.append, "a")
    sim.at(5, out.append, "c")
    ev = sim.at(3, out.append, "x")
    ev.cancel()
    sim.run()
    assert out == ["a", "b", "c"] and sim.now() == 5
    with pytest.raises(EmptyQueue):
        sim.step()


def test_run_until_advances_clock():
    sim = Simulator()
    sim.at(50, lambda: None)
    sim.run(until=10)
    assert sim.now() == 10 and sim.pending() == 1


def test_timer_has_no_drift():
    sim = Simulator()
    seen = []
    t = sim.every(100, lambda: seen.append(sim.now()), start=25)
    sim.run(until=430)
    t.cancel()
    sim.run(until=1000)
    assert seen == [25, 125, 225, 325, 425]


def test_spawn_and_deadline():
    sim = Simulator()

    def proc():
        yield sim.sleep(10)
        x = yield 5
        return x * 2

    f = sim.spawn(proc())
    never = Future()
    g = sim.with_deadline(never, 30)
    sim.run()
    assert f.result() == 10
    assert isinstance(g.error, SimTimeout)


def test_spawn_surfaces_errors():
    sim = Simulator()

    def proc():
        yield sim.sleep(1)
        raise KeyError("boom")

    f = sim.spawn(proc())
    sim.run()
    with pytest.raises(KeyError):
        f.result()


def _net(drop=0.0, latency=("fixed", 1.0)):
    sim = Simulator(7)
    tr = Trace()
    net = Network(sim, latency, drop, tr)
    inbox = {a: [] for a in range(3)}
    for a in range(3):
        net.register(a, lambda src, msg, a=a: inbox[a].append((sim.now(), src, msg)))
    return sim, net, inbox, tr


def test_partition_blocks_and_heal_restores():
    sim, net, inbox, tr = _net()
    net.partition([(0,), (1, 2)])
    net.send(0, 1, "lost")
    net.send(1, 2, "kept")
    sim.run()
    assert inbox[1] == [] and [m for _, _, m in inbox[2]] == ["kept"]
    net.heal()
    net.send(0, 1, "ok")
    sim.run()
    assert [m for _, _, m in inbox[1]] == ["ok"]
    assert {r["kind"] for r in tr.records} >= {"send", "drop"}


def test_partition_formed_in_flight_drops():
    sim, net, inbox, _ = _net(latency=("fixed", 5.0))
    net.send(0, 1, "m")
    sim.at(2, net.partition, [(0,), (1,)])
    sim.run()
    assert inbox[1] == [] and net.dropped == 1


def test_crash_and_drop_rate():
    sim, net, inbox, _ = _net(drop=0.5)
    for i in range(400):
        net.send(0, 1, i)
    sim.run()
    assert 120 < len(inbox[1]) < 280
    net.crash(2)
    net.send(0, 2, "x")
    sim.run()
    assert inbox[2] == []


def test_uniform_latency_is_seeded():
    times = []
    for _ in range(2):
        sim, net, inbox, _ = _net(latency=("uniform", 1.0, 3.0))
        for i in range(20):
            net.send(0, 1, i)
        sim.run()
        times.append([t for t, _, _ in inbox[1]])
    assert times[0] == times[1]
    assert all(1.0 <= t <= 3.0 for t in times[0])


def test_durable_store_crash_loses_unhardened(tmp_path):
    ds = DurableStore(tmp_path)
    ds.append("f", "a\n")
    ds.harden("f")
    ds.append("f", "b\n")
    assert ds.read("f", include_buffered=True) == ["a\n", "b\n"]
    ds.crash()
    assert ds.read("f") == ["a\n"]
    assert (tmp_path / "f").read_text() == "a\n"
    ds.truncate("f", 0)
    assert ds.read("f") == [] and ds.exists("f")


def test_trace_roundtrip(tmp_path):
    tr = Trace()
    tr.record(1.5, "x", groups=[(0, 1)], s={3, 1})
    tr.dump(tmp_path / "t.jsonl")
    assert load_trace(tmp_path / "t.jsonl") == [{"t": 1.5, "kind": "x", "groups": [[0, 1]], "s": [1, 3]}]


def test_parse_scenario():
    sc = parse_scenario("""
seed=3
nodes=4
latency=uniform:1:2
drop_rate=0.1
duration=900
constraints=on
events:
  100 partition 0 | 1,2,3   # isolate the serializer
  400 crash 2
  500 heal
  600 droprate 0
""")
    assert (sc.seed, sc.node_count, sc.latency, sc.drop_rate, sc.duration) == (3, 4, ("uniform", 1.0, 2.0), 0.1, 900)
    assert sc.options == {"constraints": "on"}
    assert [e.kind for e in sc.events] == ["partition", "crash", "heal", "droprate"]
    assert sc.events[0].groups == ((0,), (1, 2, 3))


@pytest.mark.parametrize("text", ["events:\n 10 explode", "nonsense", "latency=gauss:1",
                                  "events:\n 10 heal\n 5 heal", "events:\n 1 partition 0,1 | 1"])
def test_parse_scenario_errors(text):
    with pytest.raises(ValueError):
        parse_scenario(text)


def test_parse_latency():
    assert parse_latency("fixed:2") == ("fixed", 2.0)
    with pytest.raises(ValueError):
        parse_latency("uniform:3:1")
