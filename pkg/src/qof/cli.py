"""Command-line front end.

Exit codes: 0 pass, 1 oracle or verification failure, 2 usage error.
Log verbosity comes from the ``QOF_LOG`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from qof.batchfile import keys_document, load_public_keys, make_batch_file, signing_keys, verify_batch_file
from qof.fairgraph import to_text
from qof.harness.attacks import attack_frontrun, run_campaign_seed, sandwich_scenario
from qof.harness.bench import SWEEPS, gnuplot_data, run_sweep
from qof.harness.metrics import write_csv
from qof.harness.oracle import check_all
from qof.harness.scenario import ScenarioError, load_scenario
from qof.harness.sim import InvariantViolation, Simulation, trace_lines

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("qof")


class UsageError(Exception):
    pass


def _out_dir(path: str | None) -> Path | None:
    if path is None:
        return None
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario(args):
    try:
        sc = load_scenario(args.scenario)
    except FileNotFoundError:
        raise UsageError(f"no such scenario file: {args.scenario}") from None
    except ScenarioError as exc:
        raise UsageError(f"{args.scenario}: {exc}") from None
    if args.seed is not None:
        sc = sc.replace(seed=args.seed)
    return sc


def corrupt_trace(traces: list) -> list:
    """Swap the first two batches of one correct party, or plant a phantom tx."""
    out = [dict(r) for r in traces]
    for party in sorted({r["party"] for r in out if r["ev"] == "batch"}):
        idx = [i for i, r in enumerate(out) if r["ev"] == "batch" and r["party"] == party]
        if len(idx) >= 2 and set(out[idx[0]]["txs"]) != set(out[idx[1]]["txs"]):
            a, b = idx[0], idx[1]
            out[a]["txs"], out[b]["txs"] = out[b]["txs"], out[a]["txs"]
            return out
    for r in out:
        if r["ev"] == "batch":
            r["txs"] = list(r["txs"]) + ["phantom"]
            return out
    out.append({"t": 0.0, "party": 0, "ev": "batch", "round": 0, "seq": 0, "txs": ["phantom"]})
    return out


def cmd_run(args) -> int:
    sc = _scenario(args)
    protocol = "baseline" if args.baseline else "qof"
    sim = Simulation(sc, protocol)
    try:
        res = sim.run()
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        _write_trace(_out_dir(args.out_dir), sim.traces)
        return EXIT_FAIL
    violations = check_all(res.traces, complete=res.quiescent)
    out = _out_dir(args.out_dir)
    if out is not None:
        _write_trace(out, res.traces)
        (out / "metrics.csv").write_text(res.metrics.to_csv())
        _write_batches(out, sim, res)
        first = sim.parties[res.correct[0]]
        if getattr(first, "last_graph", None) is not None:
            (out / "graph.txt").write_text(to_text(first.last_graph.collapsed, sim.labels))
    m = res.metrics
    print(
        f"{sc.name or args.scenario}: protocol={protocol} delivered={m.delivered}/{m.injected} "
        f"rounds={m.rounds} throughput={m.throughput:.1f} tx/s latency={m.latency_mean:.2f} ms "
        f"digest={res.digest[:16]}"
    )
    for v in violations:
        print(f"violation: {v}")
    if args.expect_trace:
        expected = Path(args.expect_trace).read_text().splitlines()
        got = trace_lines(res.traces)
        if expected != got:
            line = next((i for i, (a, b) in enumerate(zip(expected, got)) if a != b), min(len(expected), len(got)))
            print(f"trace differs from {args.expect_trace} at line {line + 1}")
            return EXIT_FAIL
        print(f"trace matches {args.expect_trace}")
    if args.self_test:
        flagged = check_all(corrupt_trace(res.traces))
        print(f"self-test: corrupted trace raised {len(flagged)} violation(s)")
        for v in flagged[:5]:
            print(f"  {v}")
        return EXIT_FAIL if flagged else EXIT_OK
    return EXIT_FAIL if violations else EXIT_OK


def _write_trace(out: Path | None, traces: list) -> None:
    if out is not None:
        (out / "trace.jsonl").write_text("".join(line + "\n" for line in trace_lines(traces)))


def _write_batches(out: Path, sim: Simulation, res) -> None:
    cfg = sim.scenario.config
    logs = {p: sim.parties[p].delivered_log for p in res.correct}
    ref = max(logs.values(), key=len)
    signers = [p for p, log in logs.items() if [b.ids for b in log] == [b.ids for b in ref]]
    scheme = signing_keys(cfg.n, sim.scenario.seed)
    (out / "batches.json").write_bytes(make_batch_file(ref, cfg.n, cfg.f, scheme, signers))
    (out / "keys.json").write_bytes(keys_document(scheme))


def cmd_bench(args) -> int:
    values = None
    if args.points:
        cast = float if args.sweep == "delay" else int
        try:
            values = [cast(v) for v in args.points.split(",")]
        except ValueError:
            raise UsageError(f"bad --points {args.points!r}") from None
    points = run_sweep(args.sweep, values, baseline=args.baseline, seed=args.seed or 1, tx_count=args.tx_count)
    rows = [pt.row() for pt in points]
    keys = list(rows[0])
    print("  ".join(f"{k:>20}" for k in keys))
    for row in rows:
        print("  ".join(f"{row[k]!s:>20}" for k in keys))
    out = _out_dir(args.out_dir)
    if out is not None:
        import csv

        with open(out / f"bench-{args.sweep}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(rows)
        columns = ["qof_throughput", "qof_latency_ms"]
        if args.baseline:
            columns += ["baseline_throughput", "baseline_latency_ms"]
        for col in columns:
            (out / f"bench-{args.sweep}-{col}.dat").write_text(gnuplot_data(points, col))
    return EXIT_OK


def cmd_attack(args) -> int:
    flagged = 0
    landed = 0
    premise = 0
    total = 0
    for i in range(args.runs):
        seed = (args.seed or 0) + i
        rep = attack_frontrun(sandwich_scenario(seed, kappa=args.kappa, lag=args.lag))
        for o in rep.outcomes:
            total += 1
            premise += o.premise
            landed += o.front_first
            flagged += o.flagged
            if args.verbose:
                print(
                    f"seed={seed} victim={o.victim} b(v,a)={o.b_victim_front} b(a,v)={o.b_front_victim} "
                    f"premise={o.premise} attacker_first={o.front_first}"
                )
    print(
        f"kappa={args.kappa}: {total} sandwiches, premise held in {premise}, attacker first in {landed}, "
        f"fairness violations {flagged}"
    )
    return EXIT_FAIL if flagged else EXIT_OK


def cmd_campaign(args) -> int:
    bad = 0
    start = args.seed or 0
    for seed in range(start, start + args.seeds):
        r = run_campaign_seed(seed)
        if r.violations:
            bad += 1
            print(f"seed {seed}: {r.scenario.config} faults={[fs.to_dict() for fs in r.scenario.faults]}")
            for v in r.violations[:5]:
                print(f"  {v}")
    print(f"{args.seeds} seeds, {bad} with violations")
    return EXIT_FAIL if bad else EXIT_OK


def cmd_tcp(args) -> int:
    from qof.netrun import run_tcp_cluster

    sc = _scenario(args)
    try:
        res = run_tcp_cluster(sc, "baseline" if args.baseline else "qof", timeout=args.timeout)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    m = res.metrics
    print(
        f"tcp: completed={res.completed} delivered={m.delivered}/{sc.tx_count} "
        f"throughput={m.throughput:.1f} tx/s latency={m.latency_mean:.2f} ms wall={res.wall_seconds:.2f}s"
    )
    out = _out_dir(args.out_dir)
    if out is not None:
        _write_trace(out, res.traces)
        (out / "metrics.csv").write_text(write_csv([m]))
    same = len({tuple(ids) for ids in res.logs.values()}) == 1
    return EXIT_OK if res.completed and same else EXIT_FAIL


def cmd_verify(args) -> int:
    try:
        data = Path(args.file).read_bytes()
        public = load_public_keys(Path(args.keys).read_bytes())
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {exc.filename}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad keys file: {exc}") from None
    verdict = verify_batch_file(data, public)
    if not verdict.accepted:
        print(f"reject: {verdict.reason}")
        return EXIT_FAIL
    print(f"accept: signers {verdict.signers}, {len(verdict.ledger)} transactions executed")
    lines = [f"{tx.id} client={tx.client_id} seq={tx.client_seq}" for tx in verdict.ledger]
    if args.ledger:
        Path(args.ledger).write_text("".join(line + "\n" for line in lines))
    else:
        for line in lines:
            print(f"  {line}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qof", description="Quick order-fair atomic broadcast simulator and tools")
    p.add_argument("--verify", metavar="FILE", help="shorthand for 'verify-batch FILE'")
    p.add_argument("--keys", help="public keys file for --verify")
    sub = p.add_subparsers(dest="command")

    run = sub.add_parser("run", help="simulate a scenario and check it with the oracles")
    run.add_argument("--scenario", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out-dir")
    run.add_argument("--baseline", action="store_true", help="run the baseline sequencer instead")
    run.add_argument("--expect-trace", help="fail unless the trace equals this JSON-lines file")
    run.add_argument("--self-test", action="store_true", help="corrupt the trace and expect the oracles to object")
    run.set_defaults(fn=cmd_run)

    bench = sub.add_parser("bench", help="benchmark sweeps against the baseline")
    bench.add_argument("--sweep", required=True, choices=sorted(SWEEPS))
    bench.add_argument("--points", help="comma-separated sweep values")
    bench.add_argument("--baseline", action=argparse.BooleanOptionalAction, default=True)
    bench.add_argument("--seed", type=int)
    bench.add_argument("--tx-count", type=int)
    bench.add_argument("--out-dir")
    bench.set_defaults(fn=cmd_bench)

    attack = sub.add_parser("attack", help="replay sandwich attacks")
    attack.add_argument("--runs", type=int, default=20)
    attack.add_argument("--seed", type=int)
    attack.add_argument("--kappa", type=int, default=0)
    attack.add_argument("--lag", type=float, help="attacker delay after seeing the victim, ms")
    attack.add_argument("--verbose", action="store_true")
    attack.set_defaults(fn=cmd_attack)

    camp = sub.add_parser("campaign", help="randomized adversarial scenarios")
    camp.add_argument("--seeds", type=int, default=100)
    camp.add_argument("--seed", type=int, help="first seed")
    camp.set_defaults(fn=cmd_campaign)

    tcp = sub.add_parser("tcp", help="run a scenario's workload over localhost TCP")
    tcp.add_argument("--scenario", required=True)
    tcp.add_argument("--seed", type=int)
    tcp.add_argument("--baseline", action="store_true")
    tcp.add_argument("--timeout", type=float, default=60.0)
    tcp.add_argument("--out-dir")
    tcp.set_defaults(fn=cmd_tcp)

    ver = sub.add_parser("verify-batch", help="verify a signed batch file and replay its ledger")
    ver.add_argument("file")
    ver.add_argument("--keys", required=True)
    ver.add_argument("--ledger", help="write the executed ledger here")
    ver.set_defaults(fn=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("QOF_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verify:
        if not args.keys:
            parser.error("--verify needs --keys")
        args = argparse.Namespace(file=args.verify, keys=args.keys, ledger=None, fn=cmd_verify)
    elif args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"qof: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
