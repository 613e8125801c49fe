"""Deterministic discrete-event simulation: virtual clock, network, durable stores.

Everything runs on one event loop.  Events with the same timestamp fire in
insertion order, and every random choice comes from RNGs seeded off the
scenario seed, so a (seed, scenario, workload) triple always yields the same
trace.
"""
from __future__ import annotations

import heapq
import itertools
import json
import random
import re
from dataclasses import dataclass, field, is_dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Optional


class EmptyQueue(Exception):
    pass


class SimTimeout(Exception):
    pass


class Future:
    __slots__ = ("done", "value", "error", "_callbacks")

    def __init__(self):
        self.done = False
        self.value = None
        self.error = None
        self._callbacks = []

    def set_result(self, value=None):
        if self.done:
            return
        self.done = True
        self.value = value
        self._fire()

    def set_error(self, error: BaseException):
        if self.done:
            return
        self.done = True
        self.error = error
        self._fire()

    def _fire(self):
        cbs, self._callbacks = self._callbacks, []
        for cb in cbs:
            cb(self)

    def add_done_callback(self, cb):
        if self.done:
            cb(self)
        else:
            self._callbacks.append(cb)

    def result(self):
        if not self.done:
            raise RuntimeError("future not resolved")
        if self.error is not None:
            raise self.error
        return self.value


def resolved(value=None) -> Future:
    f = Future()
    f.set_result(value)
    return f


class _Event:
    __slots__ = ("fn", "args", "cancelled")

    def __init__(self, fn, args):
        self.fn = fn
        self.args = args
        self.cancelled = False

    def cancel(self):
        self.cancelled = True


class Simulator:
    def __init__(self, seed: int = 0):
        self.seed = seed
        self._now = 0.0
        self._queue: list = []
        self._seq = itertools.count()
        self.rng = random.Random(seed)
        self.events_processed = 0

    def now(self) -> float:
        return self._now

    def at(self, when: float, fn: Callable, *args) -> _Event:
        if when < self._now:
            when = self._now
        ev = _Event(fn, args)
        heapq.heappush(self._queue, (when, next(self._seq), ev))
        return ev

    def schedule(self, delay: float, fn: Callable, *args) -> _Event:
        return self.at(self._now + delay, fn, *args)

    def step(self) -> None:
        while self._queue:
            when, _, ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self._now = when
            self.events_processed += 1
            ev.fn(*ev.args)
            return
        raise EmptyQueue()

    def pending(self) -> int:
        return sum(1 for _, _, ev in self._queue if not ev.cancelled)

    def run(self, until: Optional[float] = None, max_events: Optional[int] = None) -> None:
        q = self._queue
        n = 0
        while q:
            when, _, ev = q[0]
            if until is not None and when > until:
                break
            heapq.heappop(q)
            if ev.cancelled:
                continue
            self._now = when
            self.events_processed += 1
            ev.fn(*ev.args)
            n += 1
            if max_events is not None and n >= max_events:
                return
        if until is not None and until > self._now:
            self._now = until

    def every(self, period: float, fn: Callable, start: Optional[float] = None) -> "Timer":
        t = Timer(self, period, fn)
        t.start(self._now + period if start is None else start)
        return t

    def sleep(self, delay: float) -> Future:
        f = Future()
        self.schedule(delay, f.set_result, None)
        return f

    def spawn(self, gen) -> Future:
        """Drive a generator process; it yields Futures and receives their values."""
        done = Future()

        def advance(value=None, error=None):
            while True:
                try:
                    fut = gen.throw(error) if error is not None else gen.send(value)
                except StopIteration as stop:
                    done.set_result(stop.value)
                    return
                except Exception as exc:  # noqa: BLE001 - surfaced through the future
                    done.set_error(exc)
                    return
                if not isinstance(fut, Future):
                    fut = resolved(fut)
                if fut.done:
                    value, error = fut.value, fut.error
                    continue
                fut.add_done_callback(lambda f: advance(f.value, f.error))
                return

        self.schedule(0, advance)
        return done

    def with_deadline(self, fut: Future, deadline: float) -> Future:
        """Future that fails with SimTimeout if ``fut`` is not done by ``deadline``."""
        out = Future()
        ev = self.at(deadline, lambda: out.set_error(SimTimeout()))

        def relay(f):
            ev.cancel()
            if f.error is not None:
                out.set_error(f.error)
            else:
                out.set_result(f.value)

        fut.add_done_callback(relay)
        return out


class Timer:
    """Periodic callback at start + k * period (no drift)."""

    def __init__(self, sim: Simulator, period: float, fn: Callable):
        self.sim = sim
        self.period = period
        self.fn = fn
        self._ev = None
        self._next = None

    def start(self, first: float):
        self._next = first
        self._ev = self.sim.at(first, self._fire)

    def _fire(self):
        self._next += self.period
        self._ev = self.sim.at(self._next, self._fire)
        self.fn()

    def cancel(self):
        if self._ev is not None:
            self._ev.cancel()
            self._ev = None


# ---------------------------------------------------------------------------
# trace


def _plain(obj):
    if is_dataclass(obj):
        return {k: _plain(v) for k, v in obj.__dict__.items()}
    if isinstance(obj, tuple) and hasattr(obj, "_fields"):
        return list(obj)
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(_plain(x) for x in obj)
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, bytes):
        return obj.hex()
    return obj


class Trace:
    """Line-delimited structured records: {"t": ms, "kind": ..., ...}."""

    def __init__(self, messages: bool = True):
        self.messages = messages
        self.records: list[dict] = []

    def record(self, t: float, kind: str, **fields):
        rec = {"t": round(t, 6), "kind": kind}
        rec.update(fields)
        self.records.append(rec)

    def lines(self) -> Iterable[str]:
        for rec in self.records:
            yield json.dumps(_plain(rec), sort_keys=True, separators=(",", ":"))

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["kind"] == kind]


def load_trace(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# network


class Network:
    """Message delivery between addresses with latency, loss and partitions."""

    def __init__(self, sim: Simulator, latency=("fixed", 1.0), drop_rate: float = 0.0,
                 trace: Optional[Trace] = None):
        self.sim = sim
        self.latency = latency
        self.drop_rate = drop_rate
        self.trace = trace
        self.rng = random.Random(f"net-{sim.seed}")
        self._handlers: dict[Any, Callable] = {}
        self._group: dict[Any, int] = {}
        self.crashed: set = set()
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self.sent_by_type: dict[str, int] = {}

    def register(self, address, handler: Callable) -> None:
        self._handlers[address] = handler

    @property
    def addresses(self):
        return list(self._handlers)

    def partition(self, groups: Iterable[Iterable]) -> None:
        """Split into disjoint groups; unlisted addresses share one implicit group."""
        self._group = {}
        seen = set()
        for i, g in enumerate(groups, start=1):
            for a in g:
                if a in seen:
                    raise ValueError(f"address {a} in two partition groups")
                seen.add(a)
                self._group[a] = i

    def heal(self) -> None:
        self._group = {}

    def crash(self, address) -> None:
        self.crashed.add(address)

    def restart(self, address) -> None:
        self.crashed.discard(address)

    def can_reach(self, a, b) -> bool:
        if a in self.crashed or b in self.crashed:
            return False
        return self._group.get(a, 0) == self._group.get(b, 0)

    def _delay(self) -> float:
        kind = self.latency[0]
        if kind == "fixed":
            return self.latency[1]
        lo, hi = self.latency[1], self.latency[2]
        return self.rng.uniform(lo, hi)

    def send(self, src, dst, msg) -> None:
        name = getattr(msg, "kind", None) or type(msg).__name__
        self.sent += 1
        self.sent_by_type[name] = self.sent_by_type.get(name, 0) + 1
        tr = self.trace if self.trace is not None and self.trace.messages else None
        if src != dst:
            if not self.can_reach(src, dst) or (self.drop_rate and self.rng.random() < self.drop_rate):
                self.dropped += 1
                if tr:
                    tr.record(self.sim.now(), "drop", src=src, dst=dst, msg=name)
                return
            delay = self._delay()
        else:
            if src in self.crashed:
                return
            delay = 0.0
        if tr:
            tr.record(self.sim.now(), "send", src=src, dst=dst, msg=name)
        self.sim.schedule(delay, self._deliver, src, dst, msg)

    def _deliver(self, src, dst, msg) -> None:
        if src != dst and not self.can_reach(src, dst):
            self.dropped += 1
            if self.trace is not None and self.trace.messages:
                self.trace.record(self.sim.now(), "drop", src=src, dst=dst,
                                  msg=getattr(msg, "kind", None) or type(msg).__name__)
            return
        if dst in self.crashed:
            return
        handler = self._handlers.get(dst)
        if handler is None:
            return
        self.delivered += 1
        handler(src, msg)


# ---------------------------------------------------------------------------
# durable storage


class DurableStore:
    """Append-only named files; writes stay buffered until harden().

    A crash discards every unhardened append.  With ``directory`` set, hardened
    lines are also written to real files (one per name).
    """

    def __init__(self, directory: Optional[Path] = None):
        self._hard: dict[str, list] = {}
        self._buf: dict[str, list] = {}
        self.directory = Path(directory) if directory else None

    def append(self, name: str, item) -> None:
        self._buf.setdefault(name, []).append(item)

    def harden(self, name: Optional[str] = None) -> None:
        names = [name] if name is not None else list(self._buf)
        for n in names:
            items = self._buf.pop(n, [])
            if not items:
                self._hard.setdefault(n, [])
                continue
            self._hard.setdefault(n, []).extend(items)
            if self.directory is not None:
                self.directory.mkdir(parents=True, exist_ok=True)
                with open(self.directory / n, "a") as fh:
                    for it in items:
                        fh.write(str(it))

    def truncate(self, name: str, length: int) -> None:
        self._buf.pop(name, None)
        self._hard[name] = self._hard.get(name, [])[:length]

    def crash(self) -> None:
        self._buf.clear()

    def read(self, name: str, include_buffered: bool = False) -> list:
        items = list(self._hard.get(name, []))
        if include_buffered:
            items.extend(self._buf.get(name, []))
        return items

    def names(self) -> list[str]:
        return sorted(set(self._hard) | set(self._buf))

    def exists(self, name: str) -> bool:
        return name in self._hard or name in self._buf


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class ScenarioEvent:
    at: float
    kind: str  # partition | heal | crash | restart | droprate
    groups: tuple = ()
    node: Optional[int] = None
    rate: float = 0.0


@dataclass
class Scenario:
    seed: int = 0
    node_count: int = 3
    latency: tuple = ("fixed", 1.0)
    drop_rate: float = 0.0
    duration: float = 1000.0
    events: list[ScenarioEvent] = field(default_factory=list)
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        last = float("-inf")
        for ev in self.events:
            if ev.at < last:
                raise ValueError("scenario event timestamps must be non-decreasing")
            last = ev.at
            if ev.kind == "partition":
                seen = set()
                for g in ev.groups:
                    if seen & set(g):
                        raise ValueError("partition groups must be disjoint")
                    seen |= set(g)


def parse_latency(text: str) -> tuple:
    parts = text.split(":")
    if parts[0] == "fixed" and len(parts) == 2:
        return ("fixed", float(parts[1]))
    if parts[0] == "uniform" and len(parts) == 3:
        lo, hi = float(parts[1]), float(parts[2])
        if lo > hi:
            raise ValueError("uniform latency needs lo <= hi")
        return ("uniform", lo, hi)
    raise ValueError(f"bad latency model {text!r}")


_EVENT_RE = re.compile(r"^\s*(?:-\s*)?(\S+)\s+(\w+)\s*(.*)$")


def parse_scenario(text: str) -> Scenario:
    """Parse ``key=value`` lines followed by an ``events:`` list.

    Event lines: ``<ms> partition 0,1 | 2,3``, ``<ms> heal``, ``<ms> crash 2``,
    ``<ms> restart 2``, ``<ms> droprate 0.1``.
    """
    sc = Scenario()
    events = []
    in_events = False
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.rstrip(":") == "events" and line.endswith(":"):
            in_events = True
            continue
        if in_events:
            m = _EVENT_RE.match(line)
            if not m:
                raise ValueError(f"bad event line {raw!r}")
            at, kind, rest = float(m.group(1)), m.group(2).lower(), m.group(3).strip()
            if kind == "partition":
                groups = tuple(tuple(int(x) for x in g.split(",") if x.strip())
                               for g in rest.split("|"))
                events.append(ScenarioEvent(at, kind, groups=groups))
            elif kind == "heal":
                events.append(ScenarioEvent(at, kind))
            elif kind in ("crash", "restart"):
                events.append(ScenarioEvent(at, kind, node=int(rest)))
            elif kind == "droprate":
                events.append(ScenarioEvent(at, kind, rate=float(rest)))
            else:
                raise ValueError(f"unknown event kind {kind!r}")
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {raw!r}")
        key, value = key.strip(), value.strip()
        if key == "seed":
            sc.seed = int(value)
        elif key in ("nodes", "node_count"):
            sc.node_count = int(value)
        elif key == "latency":
            sc.latency = parse_latency(value)
        elif key == "drop_rate":
            sc.drop_rate = float(value)
        elif key == "duration":
            sc.duration = float(value)
        else:
            sc.options[key] = value
    sc.events = events
    sc.__post_init__()
    return sc


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_text())
