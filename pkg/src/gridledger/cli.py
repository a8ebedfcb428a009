"""Command-line scenario runner.

Exit codes: 0 success, 2 not converged, 3 input error, 4 ledger integrity failure.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .coordinator import (DEFAULT_DELAY_PROB, RunConfig, run_distributed, setup_ledger,
                          write_area_trace_csv, write_objective_trace_csv)
from .decomposition import PartitionError, load_partition
from .estimator import (EstimationOptions, SingularGainError, reference_state, solve_wls,
                        write_estimates_csv, write_trace_csv)
from .ledger import (bulk_transfer_gas, export_chain, load_chain, gas_sweep_sizes,
                     replay_events, verify_chain, write_events_csv)
from .powernet import (CaseFormatError, data_path, default_plan, generate_measurements,
                       ieee14, load_case, load_plan, load_state)
from .report import (ScenarioReport, comparison_table, format_summary, summarize_central,
                     summarize_run, write_table_csv)

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INPUT, EXIT_LEDGER = 0, 2, 3, 4


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors, not the argparse default of 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", help="MATPOWER-style case file (default: bundled IEEE-14)")
    p.add_argument("--plan", help="measurement plan file (default: all V, injections, from-end flows)")
    p.add_argument("--state", help="true-state file 'bus v theta_rad' (default: case solution)")
    p.add_argument("--sigma2", type=float, default=1e-4, help="measurement noise variance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--no-plots", action="store_true", help="skip PNG rendering")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gridledger",
                 description="Centralized and ledger-coordinated distributed "
                             "power-system state estimation.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("central", help="centralized WLS estimate")
    _common(c)

    d = sub.add_parser("distributed", help="multi-area estimate over the ledger")
    _common(d)
    d.add_argument("--partition", help="partition file 'bus area' (default: bundled 4-area split)")
    d.add_argument("--delay-prob", type=float, default=DEFAULT_DELAY_PROB,
                   help="probability that one area skips an outer iteration (0 runs case 1 only)")
    d.add_argument("--mode", choices=["jacobi", "gauss-seidel"], default="jacobi")
    bulk = d.add_mutually_exclusive_group()
    bulk.add_argument("--bulk", dest="bulk", action="store_true", default=True,
                      help="one transfer per neighbour pair per iteration (default)")
    bulk.add_argument("--per-value", dest="bulk", action="store_false",
                      help="one transfer per value")
    d.add_argument("--workers", type=int, default=1, help="threads for Jacobi area solves")
    d.add_argument("--difficulty", type=int, default=0, help="PoW difficulty in leading zero bits")

    g = sub.add_parser("gas", help="gas needed to move a fixed amount of data")
    g.add_argument("--total-bytes", type=int, default=1024)
    g.add_argument("--sizes", type=float, nargs="*", default=None,
                   help="payload sizes in bytes (default 2^(k-1), k = 0..6)")
    g.add_argument("--out", default="out")
    g.add_argument("--no-plots", action="store_true")

    v = sub.add_parser("verify", help="verify an exported chain")
    v.add_argument("chain", help="chain export (one JSON block per line)")
    return ap


def _load_inputs(args):
    try:
        net = load_case(args.case) if args.case else ieee14()
        plan = load_plan(args.plan, net) if args.plan else default_plan(net)
        truth = load_state(args.state, net) if args.state else reference_state(net)
    except FileNotFoundError as err:
        raise InputError(f"file not found: {err.filename}") from None
    except (CaseFormatError, KeyError, ValueError) as err:
        raise InputError(str(err)) from None
    if args.sigma2 < 0:
        raise InputError("--sigma2 must be non-negative")
    ms = generate_measurements(truth, plan, math.sqrt(args.sigma2), args.seed, net)
    return net, ms


def _central(net, ms, args):
    opts = EstimationOptions(tol=args.tol, max_iter=args.max_iter or 50)
    return solve_wls(net, ms, opts)


def cmd_central(args) -> int:
    net, ms = _load_inputs(args)
    res = _central(net, ms, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_estimates_csv(out / "estimates_central.csv", net, res.state)
    write_trace_csv(out / "trace_central.csv", res)
    report = ScenarioReport(config=_echo(args), central=summarize_central(res),
                            table=comparison_table(net, res, {}))
    report.write(out / "report.json")
    print(format_summary(report))
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _echo(args) -> dict:
    keys = ("case", "plan", "state", "partition", "sigma2", "seed", "tol", "max_iter",
            "delay_prob", "mode", "bulk")
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def cmd_distributed(args) -> int:
    net, ms = _load_inputs(args)
    if not 0 <= args.delay_prob < 1:
        raise InputError("--delay-prob must lie in [0, 1)")
    try:
        if args.partition:
            part = load_partition(args.partition, net)
        elif args.case:
            raise InputError("--partition is required with a custom --case")
        else:
            part = load_partition(data_path("ieee14_partition.txt"), net)
    except FileNotFoundError as err:
        raise InputError(f"file not found: {err.filename}") from None
    except (CaseFormatError, PartitionError) as err:
        raise InputError(str(err)) from None

    central = _central(net, ms, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_estimates_csv(out / "estimates_central.csv", net, central.state)

    cases = [("case1", 0.0)]
    if args.delay_prob > 0:
        cases.append(("case2", args.delay_prob))
    runs, summaries, status = {}, [], EXIT_OK
    for label, p in cases:
        cfg = RunConfig(tol=args.tol, max_iter=args.max_iter or 500, mode=args.mode,
                        delay_prob=p, seed=args.seed, bulk=args.bulk, workers=args.workers)
        ledger, ids = setup_ledger(part, difficulty_bits=args.difficulty)
        try:
            res = run_distributed(net, ms, part, cfg, ledger, ids)
        except PartitionError as err:
            raise InputError(str(err)) from None
        runs[label] = res
        summaries.append(summarize_run(label, res, central))
        write_objective_trace_csv(out / f"objective_trace_{label}.csv", res)
        write_area_trace_csv(out / f"area_trace_{label}.csv", res)
        chain_file = out / f"chain_{label}.jsonl"
        export_chain(ledger.chain, chain_file)
        write_events_csv(ledger.events, out / f"events_{label}.csv")
        verdict = verify_chain(load_chain(chain_file))
        if not verdict.ok:
            print(f"{label}: exported chain fails verification at height "
                  f"{verdict.bad_height}: {verdict.reason}", file=sys.stderr)
            status = EXIT_LEDGER
        elif not res.converged and status == EXIT_OK:
            status = EXIT_NOT_CONVERGED

    table = comparison_table(net, central, runs)
    write_table_csv(table, out / "bus_comparison.csv")
    report = ScenarioReport(config=_echo(args), central=summarize_central(central),
                            runs=summaries, table=table)
    report.write(out / "report.json")
    if not args.no_plots:
        ids_ = list(net.bus_ids)
        plotting.plot_bus_comparison(ids_, central.state.v,
                                     {k: r.state.v for k, r in runs.items()},
                                     "voltage magnitude (p.u.)", out / "voltage_magnitude.png")
        plotting.plot_bus_comparison(ids_, np.rad2deg(central.state.theta),
                                     {k: np.rad2deg(r.state.theta) for k, r in runs.items()},
                                     "voltage angle (deg)", out / "voltage_angle.png")
        plotting.plot_objective_trace({k: r.objective_trace for k, r in runs.items()},
                                      central.objective, out / "objective_trace.png")
    print(format_summary(report))
    return status


def gas_rows(sizes, total_bytes: int) -> list[tuple[float, float, int, float]]:
    if any(s <= 0 for s in sizes) or total_bytes <= 0:
        raise InputError("sizes and total bytes must be positive")
    return [(s, *bulk_transfer_gas(s, total_bytes)) for s in sizes]


def cmd_gas(args) -> int:
    sizes = args.sizes or gas_sweep_sizes()
    rows = gas_rows(sizes, args.total_bytes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gas.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["payload_size", "gas_per_tx", "tx_count", "total_gas"])
        for s, per, n, tot in rows:
            wr.writerow([f"{s:g}", f"{per:.12g}", n, f"{tot:.12g}"])
    if not args.no_plots:
        plotting.plot_gas([r[0] for r in rows], [r[1] for r in rows], [r[3] for r in rows],
                          out / "gas.png")
    for s, per, n, tot in rows:
        print(f"size={s:g} gas_per_tx={per:.12g} tx_count={n} total_gas={tot:.12g}")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        chain = load_chain(args.chain)
    except FileNotFoundError:
        raise InputError(f"file not found: {args.chain}") from None
    except (ValueError, KeyError) as err:
        print(f"unreadable chain export: {err}", file=sys.stderr)
        return EXIT_LEDGER
    verdict = verify_chain(chain)
    if verdict.ok:
        n = sum(1 for e in replay_events(chain) if e.kind == "transfer")
        print(f"ok: {len(chain)} blocks, {n} transfers, head {chain[-1].hash.hex()}")
        return EXIT_OK
    print(f"FAILED at height {verdict.bad_height}: {verdict.reason}")
    return EXIT_LEDGER


COMMANDS = {"central": cmd_central, "distributed": cmd_distributed, "gas": cmd_gas,
            "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except SingularGainError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
