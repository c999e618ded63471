"""Command-line pipeline: generate, analyze, plan, simulate, sweep, compare,
and cost reporting. Exit codes: 0 success, 1 pipeline error, 2 usage error."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import analysis, planner, roofline, simulator, tracegen
from .bandwidth import ChannelRates
from .trace import load_trace, save_trace

log = logging.getLogger("offloader")

# hardware anchors: 94 GB HBM per GPU, one 4-SSD array per GPU at ~16 GB/s
DEFAULT_CAPACITY = 94_000_000_000
DEFAULT_SSD_RATE = 16_000  # bytes per microsecond

POLICIES = ("ideal", "on-demand", "layer-granularity", "lifetime-aware")

DEFAULT_COST_CONFIG = {
    "items": {
        "server_2xh100_128gb": 84139.9,
        "server_2xh100_1tb": 91047.9,
        "dual_8xh100_servers": 499591.4,
        "ssd_2tb_x8": 1360.0,
    },
    "setups": {
        "ssd-offload": {"server_2xh100_128gb": 1, "ssd_2tb_x8": 1},
        "mixed-offload": {"server_2xh100_1tb": 1, "ssd_2tb_x8": 1},
        "host-offload": {"server_2xh100_1tb": 1},
        "host-ssd-offload": {"server_2xh100_1tb": 1, "ssd_2tb_x8": 1},
        "pure-gpu": {"dual_8xh100_servers": 1},
    },
    "reference": "pure-gpu",
}


def cost_efficiency(config: dict) -> dict:
    """Total price per setup plus the cost ratio against the reference setup;
    cost per unit throughput when throughputs are supplied."""
    items = config["items"]
    for name, price in items.items():
        if price < 0:
            raise ValueError(f"item {name}: price must be non-negative")
    totals = {}
    for setup, counts in config["setups"].items():
        totals[setup] = round(sum(items[name] * count
                                  for name, count in counts.items()), 2)
    reference = config.get("reference")
    throughput = config.get("throughput", {})
    report = {"totals": totals, "reference": reference, "ratio_vs_reference": {}}
    if reference is not None:
        ref_total = totals[reference]
        report["ratio_vs_reference"] = {
            setup: round(ref_total / total, 2) for setup, total in totals.items()
        }
    if throughput:
        report["cost_per_throughput"] = {
            setup: round(totals[setup] / throughput[setup], 2)
            for setup in totals if setup in throughput and throughput[setup] > 0
        }
    return report


def _write_out(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _rates_from_args(args) -> ChannelRates:
    host = args.host_rate
    return ChannelRates(
        ssd_offload=args.ssd_rate,
        ssd_prefetch=args.ssd_prefetch_rate or args.ssd_rate,
        host_offload=host,
        host_prefetch=(args.host_prefetch_rate or host) if host else None,
    )


def _add_scenario_flags(p: argparse.ArgumentParser, require_trace=True) -> None:
    p.add_argument("--trace", required=require_trace, help="trace file path")
    p.add_argument("--capacity", type=int, default=DEFAULT_CAPACITY,
                   help="GPU memory capacity in bytes")
    p.add_argument("--ssd-rate", type=float, default=DEFAULT_SSD_RATE,
                   help="SSD offload rate, bytes per microsecond")
    p.add_argument("--ssd-prefetch-rate", type=float, default=None,
                   help="SSD prefetch rate (defaults to --ssd-rate)")
    p.add_argument("--host-rate", type=float, default=None,
                   help="host offload rate; omit to disable the host path")
    p.add_argument("--host-prefetch-rate", type=float, default=None)
    p.add_argument("--host-cap", type=int, default=0,
                   help="host memory byte cap for planned offloads")


def _cmd_gen_trace(args) -> int:
    if args.preset == "transformer":
        cfg = tracegen.TransformerGenConfig(
            num_layers=args.layers, hidden_dim=args.hidden, num_heads=args.heads,
            batch=args.batch, seq_len=args.seq, bytes_per_element=args.bpe,
            pipeline_stages=args.stages, compute_rate=args.compute_rate,
            seed=args.seed)
        trace = tracegen.gen_transformer_trace(cfg)
    else:
        trace = tracegen.gen_random_trace(args.seed, args.kernels, args.tensors)
    save_trace(trace, args.out)
    log.info("wrote %s (%d kernels, %d tensors)", args.out,
             trace.num_kernels, len(trace.tensors))
    return 0


def _cmd_analyze(args) -> int:
    trace = load_trace(args.trace)
    report = analysis.characterize(trace, args.capacity)
    prefix = args.out or "characterization"
    _write_out(analysis.fractions_csv(report), f"{prefix}_fractions.csv")
    _write_out(analysis.histogram_csv(report), f"{prefix}_histogram.csv")
    summary = {
        "kernels": trace.num_kernels,
        "tensors": len(trace.tensors),
        "peak_demand_bytes": analysis.compute_memory_timeline(trace).peak(),
        "mean_active_fraction": report.mean_active_fraction,
        "max_active_fraction": report.max_active_fraction,
        "inactive_periods": report.total_periods,
    }
    sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    return 0


def _cmd_plan(args) -> int:
    trace = load_trace(args.trace)
    plan = planner.plan_migrations(trace, args.capacity, _rates_from_args(args),
                                   host_cap=args.host_cap)
    data = planner.write_plan(plan)
    if args.out and args.out != "-":
        with open(args.out, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.write(data.decode("utf-8"))
    if plan.warning:
        log.warning("plan leaves kernels %s over capacity",
                    plan.over_capacity_kernels)
    return 0


def _run_policy(policy: str, trace, capacity, rates, host_cap, plan_entries=None):
    if policy == "ideal":
        ideal = simulator.simulate_ideal(trace)
        return simulator.SimReport(
            total_time=ideal, ideal_time=ideal,
            per_kernel_start=trace.kernel_start_times(),
            stall_per_kernel=[0] * trace.num_kernels,
            per_kernel_resident=[0] * trace.num_kernels,
            stall_time_total=0, peak_resident_bytes=0,
            channel_utilization={}, emergency_offloads=0,
            throughput_vs_ideal=1.0)
    if policy == "on-demand":
        return simulator.simulate_on_demand(trace, capacity, rates)
    if policy == "layer-granularity":
        return simulator.simulate_layer_granularity(trace, capacity, rates)
    if policy == "lifetime-aware":
        if plan_entries is None:
            plan_entries = planner.plan_migrations(trace, capacity, rates,
                                                   host_cap=host_cap)
        return simulator.simulate(trace, plan_entries, capacity, rates)
    raise ValueError(f"unknown policy {policy!r}")


def _cmd_simulate(args) -> int:
    trace = load_trace(args.trace)
    rates = _rates_from_args(args)
    entries = None
    if args.plan:
        with open(args.plan, "rb") as fh:
            _, entries = planner.parse_plan(fh.read())
        report = simulator.simulate(trace, entries, args.capacity, rates)
    else:
        report = _run_policy(args.policy, trace, args.capacity, rates,
                             args.host_cap)
    _write_out(simulator.report_json(report) + "\n", args.out)
    if args.timeline_out:
        _write_out(simulator.timeline_csv(report), args.timeline_out)
    return 0


def _cmd_roofline(args) -> int:
    trace = load_trace(args.trace)
    bandwidths = [float(b) * 1000 for b in args.bandwidths.split(",")]  # GB/s -> B/us
    points = roofline.roofline_curve(trace, args.capacity, bandwidths)
    _write_out(roofline.roofline_csv(points), args.out)
    return 0


def _cmd_compare(args) -> int:
    trace = load_trace(args.trace)
    rates = _rates_from_args(args)
    rows = ["policy,total_time_us,throughput_vs_ideal,stall_time_us,emergency_offloads"]
    for policy in POLICIES:
        try:
            report = _run_policy(policy, trace, args.capacity, rates, args.host_cap)
        except simulator.ConfigurationError as exc:
            log.warning("skipping %s: %s", policy, exc)
            continue
        rows.append(f"{policy},{report.total_time},"
                    f"{report.throughput_vs_ideal:.6f},"
                    f"{report.stall_time_total},{report.emergency_offloads}")
    _write_out("\n".join(rows) + "\n", args.out)
    return 0


def _cmd_cost(args) -> int:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    else:
        config = DEFAULT_COST_CONFIG
    report = cost_efficiency(config)
    _write_out(json.dumps(report, indent=2) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="offloader",
        description="Plan and simulate lifetime-aware GPU tensor offloading "
                    "from execution traces.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trace", help="generate a synthetic trace")
    p.add_argument("--preset", choices=("transformer", "random"),
                   default="transformer")
    p.add_argument("--layers", type=int, default=12)
    p.add_argument("--hidden", type=int, default=4096)
    p.add_argument("--heads", type=int, default=32)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seq", type=int, default=1024)
    p.add_argument("--bpe", type=int, default=4)
    p.add_argument("--stages", type=int, default=1)
    p.add_argument("--compute-rate", type=int, default=1_000_000_000)
    p.add_argument("--kernels", type=int, default=32, help="random preset only")
    p.add_argument("--tensors", type=int, default=16, help="random preset only")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_trace)

    p = sub.add_parser("analyze", help="tensor-activity characterization")
    p.add_argument("--trace", required=True)
    p.add_argument("--capacity", type=int, default=DEFAULT_CAPACITY)
    p.add_argument("--out", help="output file prefix")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("plan", help="build a migration plan")
    _add_scenario_flags(p)
    p.add_argument("--out", help="plan file path (default: stdout)")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("simulate", help="simulate one policy or a plan file")
    _add_scenario_flags(p)
    p.add_argument("--plan", help="plan file to execute")
    p.add_argument("--policy", choices=POLICIES, default="lifetime-aware")
    p.add_argument("--out", help="JSON report path (default: stdout)")
    p.add_argument("--timeline-out", help="per-kernel CSV path")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("roofline", help="throughput vs bandwidth sweep")
    p.add_argument("--trace", required=True)
    p.add_argument("--capacity", type=int, default=DEFAULT_CAPACITY)
    p.add_argument("--bandwidths", required=True,
                   help="comma-separated list in GB/s")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=_cmd_roofline)

    p = sub.add_parser("compare", help="run every policy on one scenario")
    _add_scenario_flags(p)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("cost", help="hardware cost report")
    p.add_argument("--config", help="cost config JSON (defaults built in)")
    p.add_argument("--out", help="JSON path (default: stdout)")
    p.set_defaults(func=_cmd_cost)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("OFFLOADER_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        log.error("%s", exc)
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
