"""Command-line entry point: bench, verify, status, sim."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Optional

from .model import TransactionId
from .scenarios import run_scenario
from .simnet import load_scenario
from .verify import History, TraceCorrupt, UnknownTxn, verify_history
from .workload import ConfigError, WorkloadConfig, run_bench

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_UNKNOWN_TXN = 3


def _seed(args) -> int:
    env = os.environ.get("WISER_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"WISER_SEED must be an integer, got {env!r}") from None
    return args.seed


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    known = {f.name for f in dataclasses.fields(WorkloadConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return raw


def cmd_bench(args) -> int:
    values = _load_config(args.config)
    flags = {"new_order_nodes": args.nodes, "duration_virtual_ms": args.duration,
             "update_price_size": args.update_size, "update_interval_ms": args.interval,
             "new_orders": args.new_orders, "product_count": args.products,
             "reads_per_new_order": args.reads}
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.constraints:
        values["constraints"] = True
    if args.duration is not None and args.new_orders is None:
        values["new_orders"] = None
    values["seed"] = _seed(args) if args.seed is not None or os.environ.get("WISER_SEED") \
        else values.get("seed", 0)
    cfg = WorkloadConfig(**values)
    cfg.validate()
    scenario = load_scenario(args.scenario) if args.scenario else None
    m = run_bench(cfg, scenario)
    d = m.to_dict()
    print(json.dumps({"rec": "config", **dataclasses.asdict(cfg)}, sort_keys=True))
    print(json.dumps({"rec": "metrics", **d}, sort_keys=True))
    if not args.json:
        print(m.table())
    ok = m.balanced
    if args.tolerance is not None:
        ok = ok and abs(m.commit_rate - m.expected_commit_rate) <= args.tolerance
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_verify(args) -> int:
    h = History.load(args.trace)
    verdicts = verify_history(h)
    for v in verdicts:
        print(v.line())
        for case in v.cases[:args.show]:
            print(f"      {case}")
    return EXIT_OK if all(v.ok for v in verdicts) else EXIT_CHECK_FAILED


def cmd_status(args) -> int:
    try:
        tid = TransactionId.parse(args.txn)
    except ValueError:
        raise ConfigError(f"--txn expects nodeId:seq, got {args.txn!r}") from None
    h = History.load(args.trace)
    state, ssn = h.status(tid)
    print(json.dumps({"txn": str(tid), "state": state, "ssn": ssn}))
    return EXIT_OK


def cmd_sim(args) -> int:
    sc = load_scenario(args.scenario)
    if args.seed is not None or os.environ.get("WISER_SEED"):
        sc.seed = _seed(args)
    c = run_scenario(sc)
    h = History.from_cluster(c)
    if args.out:
        h.dump(args.out, extra_lines=c.trace.lines())
        print(f"trace written to {args.out}")
    verdicts = verify_history(h)
    for v in verdicts:
        print(v.line())
    print(f"frontier {c.max_frontier()}  txns {len(h.txns)}  rollbacks {len(h.rollbacks())}  "
          f"constraint failures {len(h.failures())}")
    return EXIT_OK if all(v.ok for v in verdicts) else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wiser", description="Simulated lazy-serialization database driver")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run the shopping workload and report metrics")
    b.add_argument("--nodes", type=int, help="NewOrder client nodes (default 4)")
    b.add_argument("--duration", type=float, help="virtual run length in ms")
    b.add_argument("--new-orders", type=int, help="stop after this many NewOrders (default 50000)")
    b.add_argument("--update-size", type=int, help="products per UpdatePrice (k)")
    b.add_argument("--interval", type=float, help="UpdatePrice interval in virtual ms")
    b.add_argument("--products", type=int, help="product count (default 10000)")
    b.add_argument("--reads", type=int, help="price lookups per NewOrder (default 10)")
    b.add_argument("--seed", type=int)
    b.add_argument("--constraints", action="store_true", help="enforce SUM(qty) >= 0 per product")
    b.add_argument("--scenario", help="fault scenario file")
    b.add_argument("--config", help="JSON file with workload settings; flags win")
    b.add_argument("--tolerance", type=float, help="fail unless commit rate is this close to the model")
    b.add_argument("--json", action="store_true", help="structured lines only, no table")
    b.set_defaults(fn=cmd_bench)

    v = sub.add_parser("verify", help="run the oracles over a recorded trace")
    v.add_argument("--trace", required=True)
    v.add_argument("--show", type=int, default=5, help="failing cases to print per check")
    v.set_defaults(fn=cmd_verify)

    s = sub.add_parser("status", help="report a transaction's stage from a trace")
    s.add_argument("--txn", required=True, help="nodeId:seq")
    s.add_argument("--trace", required=True)
    s.set_defaults(fn=cmd_status)

    m = sub.add_parser("sim", help="run a raw scenario file with the mixed workload")
    m.add_argument("scenario")
    m.add_argument("--out", help="write the trace and history here")
    m.add_argument("--seed", type=int)
    m.set_defaults(fn=cmd_sim)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError, OSError) as exc:
        if isinstance(exc, TraceCorrupt):
            print(f"trace corrupt: {exc}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnknownTxn as exc:
        print(f"unknown transaction {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_TXN


if __name__ == "__main__":
    sys.exit(main())
