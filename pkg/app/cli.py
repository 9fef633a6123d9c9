# app/cli.py

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional

import uvicorn
from pydantic import ValidationError as PydanticValidationError

from app.core.config import (
    ConnectionMode,
    PolicyMode,
    RunConfig,
    load_run_config,
    settings,
)
from app.core.errors import (
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_PARTIAL,
    EXIT_USAGE,
    FlowTracerError,
    ParseError,
    UsageError,
)
from app.core.logging import init_logging
from app.main import create_app
from app.services.agents import AgentConfig, AgentFleet, dump_registry, load_registry
from app.services.analysis import (
    analyze,
    compare,
    dump_json,
    write_comparison_csv,
    write_links_csv,
    write_throughput_csv,
)
from app.services.bench import DEFAULT_FLOWS, DEFAULT_THREADS, run_bench, write_bench_csv
from app.services.fabric import Topology, dump_topology, generate_leaf_spine, generate_reference_testbed, load_topology
from app.services.flowgen import (
    FilterProtocol,
    FilterSpec,
    FlowClass,
    WorkloadSpec,
    dump_workload,
    generate_flows,
    load_workload,
    make_bipartite_workload,
)
from app.services.routing import (
    EcmpConfig,
    FieldSet,
    RoutingPolicy,
    build_balanced_static_tables,
    dump_static_tables,
    load_static_tables,
)
from app.services.tracer import RunPlan, dump_run_result, load_run_result, run, run_in_process

logger = logging.getLogger("flowtracer.cli")

# -------------------------------------------------
# HELPERS
# -------------------------------------------------

def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be >= 1")
    return values


def _mode_list(text: str) -> List[ConnectionMode]:
    try:
        return [ConnectionMode.parse(v.strip()) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown connection mode in {text!r}")


def _mode(text: str) -> ConnectionMode:
    try:
        return ConnectionMode.parse(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown connection mode {text!r}")


def _topology_or_reference(path: Optional[str]) -> Topology:
    return load_topology(path) if path else generate_reference_testbed()


def _run_config(args) -> RunConfig:
    """Config file first, flags win."""
    config = load_run_config(args.config)
    updates = {
        name: getattr(args, name)
        for name in ("topology", "workload", "registry", "out", "seed")
        if getattr(args, name, None) is not None
    }
    if getattr(args, "in_process", False):
        updates["in_process"] = True

    policy_updates = {}
    if getattr(args, "policy", None):
        policy_updates["mode"] = PolicyMode(args.policy)
    if getattr(args, "static_tables", None):
        policy_updates["static_tables"] = args.static_tables
    if getattr(args, "field_set", None):
        policy_updates["field_set"] = args.field_set
    if getattr(args, "include_ingress", False):
        policy_updates["include_ingress"] = True

    plan_updates = {}
    for flag, field in (("procs", "procs"), ("threads", "threads"), ("mode", "mode"), ("hop_limit", "hop_limit")):
        value = getattr(args, flag, None)
        if value is not None:
            plan_updates[field] = value

    latency_updates = {
        name: getattr(args, name)
        for name in ("connect_latency_ms", "query_latency_ms")
        if getattr(args, name, None) is not None
    }

    config = config.model_copy(update=updates)
    return config.model_copy(update={
        "policy": config.policy.model_copy(update=policy_updates),
        "plan": config.plan.model_copy(update=plan_updates),
        "agents": config.agents.model_copy(update=latency_updates),
    })


def build_policy(config: RunConfig, topology: Topology) -> RoutingPolicy:
    if config.policy.mode is PolicyMode.STATIC:
        if not config.policy.static_tables:
            raise UsageError("--policy static needs --static-tables")
        return RoutingPolicy.from_tables(load_static_tables(config.policy.static_tables, topology))
    try:
        field_set = FieldSet(config.policy.field_set)
    except ValueError:
        raise UsageError(f"unknown field set {config.policy.field_set!r}")
    return RoutingPolicy.from_ecmp(EcmpConfig(
        field_set=field_set,
        include_ingress=config.policy.include_ingress,
        seed=config.ecmp_seed(),
    ))


def _load_run_workload(config: RunConfig, args, topology: Topology) -> WorkloadSpec:
    """The run seed fills in a workload seed the file leaves out; an explicit --seed always wins."""
    workload = load_workload(config.workload, topology)
    if getattr(args, "seed", None) is None and "seed" in workload.model_fields_set:
        return workload
    if config.seed != workload.seed:
        logger.info(f"Workload seed {workload.seed} -> {config.seed}")
    return WorkloadSpec.model_validate(dict(workload.model_dump(), seed=config.seed))


def _plan(config: RunConfig) -> RunPlan:
    return RunPlan(
        procs=config.plan.procs,
        threads=config.plan.threads,
        connection_mode=config.plan.mode,
        hop_limit=config.plan.hop_limit,
    )


def _agent_config(config: RunConfig) -> AgentConfig:
    return AgentConfig(
        connect_latency_ms=config.agents.connect_latency_ms,
        query_latency_ms=config.agents.query_latency_ms,
    )


# -------------------------------------------------
# COMMANDS
# -------------------------------------------------

def cmd_gen(args) -> int:
    out = _out_dir(args.out or "out")

    if args.target == "topology":
        if args.reference:
            topology = generate_reference_testbed()
        else:
            topology = generate_leaf_spine(
                racks=args.racks, hosts_per_rack=args.hosts_per_rack, leaves_per_rack=args.leaves_per_rack,
                spines=args.spines, host_links_per_leaf=args.host_links_per_leaf,
                uplinks_per_spine=args.uplinks_per_spine, speed_gbps=args.speed_gbps,
            )
        path = dump_topology(topology, out / "topology.json")
        print(f"gen topology: {len(topology.devices)} devices, {len(topology.links)} links -> {path}")
        return EXIT_OK

    topology = _topology_or_reference(args.topology)

    if args.target == "workload":
        if not args.bipartite:
            raise UsageError("gen workload supports the --bipartite pattern only")
        if args.dport_lo is not None or args.dport_hi is not None or args.filter_proto:
            flt = FilterSpec(
                dst_port_low=args.dport_lo or 1,
                dst_port_high=args.dport_hi or 65535,
                protocol=FilterProtocol(args.filter_proto or "any"),
            )
        else:
            flt = None
        workload = make_bipartite_workload(
            topology, args.flows_per_pair, args.seed,
            bidirectional=not args.unidirectional, flow_class=FlowClass(args.flow_class), filter=flt,
        )
        path = dump_workload(workload, out / "workload.json")
        print(f"gen workload: {len(workload.pairs)} pairs, {workload.total_flows()} flows -> {path}")
        return EXIT_OK

    # static-tables
    if not args.balanced:
        raise UsageError("gen static-tables supports --balanced only")
    if not args.workload:
        raise UsageError("gen static-tables needs --workload")
    workload = load_workload(args.workload, topology)
    tables = build_balanced_static_tables(topology, generate_flows(workload, topology))
    path = dump_static_tables(tables, out / "static_tables.json")
    print(f"gen static-tables: {sum(len(r) for r in tables.tables.values())} rules "
          f"on {len(tables.tables)} switches -> {path}")
    return EXIT_OK


def cmd_agents(args) -> int:
    config = _run_config(args)
    config.require("topology", "workload")
    topology = load_topology(config.topology)
    workload = _load_run_workload(config, args, topology)
    policy = build_policy(config, topology)
    flows = generate_flows(workload, topology)
    out = _out_dir(config.out)

    async def serve():
        fleet = await AgentFleet.start(topology, flows, policy, _agent_config(config), base_port=args.base_port)
        async with fleet:
            path = dump_registry(fleet.registry, out / "registry.json")
            print(f"agents: {len(fleet.agents)} agents up, registry -> {path}", flush=True)
            if args.control_port:
                server = uvicorn.Server(uvicorn.Config(
                    create_app(topology, fleet.registry),
                    host=settings.CONTROL_HOST, port=args.control_port, log_config=None,
                ))
                await server.serve()
            elif args.duration is not None:
                await asyncio.sleep(args.duration)
            else:
                await asyncio.Event().wait()

    try:
        asyncio.run(serve())
    except KeyboardInterrupt:
        logger.info("Agents stopped")
    except OSError as e:
        raise FlowTracerError(f"agent bind failed: {e}") from e
    return EXIT_OK


def cmd_trace(args) -> int:
    config = _run_config(args)
    config.require("topology", "workload")
    topology = load_topology(config.topology)
    workload = _load_run_workload(config, args, topology)
    plan = _plan(config)

    if config.in_process:
        policy = build_policy(config, topology)
        result = asyncio.run(run_in_process(workload, topology, policy, plan, _agent_config(config)))
    else:
        registry_path = config.registry_path()
        if not registry_path:
            raise ParseError("no registry: pass --registry, set FLOWTRACER_REGISTRY or use --in-process")
        registry = load_registry(registry_path)
        result = asyncio.run(run(workload, topology, registry, plan))

    path = dump_run_result(result, _out_dir(config.out) / "run_result.json")
    print(f"trace: {len(result.paths)} paths, {len(result.errors)} errors, {result.query_count} queries, "
          f"{result.timing.total_ms:.1f}ms -> {path}")
    return EXIT_PARTIAL if result.errors else EXIT_OK


def cmd_analyze(args) -> int:
    topology = _topology_or_reference(args.topology)
    result = load_run_result(args.run_result)
    analysis = analyze(result.paths, topology, label=args.label)
    out = _out_dir(args.out or "out")
    dump_json(analysis, out / "analysis.json")
    write_links_csv(analysis.imbalance, out / "links.csv")
    write_throughput_csv(analysis.throughput, out / "throughput.csv")
    print(f"analyze: {analysis.imbalance.total_flows} flows, aggregate FIM "
          f"{_fmt(analysis.imbalance.aggregate_fim)}, leaf-spine FIM {_fmt(analysis.imbalance.leaf_spine_fim)}")
    return EXIT_OK


def cmd_compare(args) -> int:
    topology = _topology_or_reference(args.topology)
    label_a, label_b = args.labels
    run_a = analyze(load_run_result(args.run_a).paths, topology, label=label_a)
    run_b = analyze(load_run_result(args.run_b).paths, topology, label=label_b)
    comparison = compare(run_a, run_b)
    out = _out_dir(args.out or "out")
    dump_json(comparison, out / "comparison.json")
    write_comparison_csv(comparison, out / "comparison.csv")
    print(f"compare: aggregate FIM {label_a}={_fmt(comparison.aggregate_fim[0])} "
          f"{label_b}={_fmt(comparison.aggregate_fim[1])}, winner {comparison.winners['aggregate_fim']}")
    return EXIT_OK


def cmd_bench(args) -> int:
    config = _run_config(args)
    topology = _topology_or_reference(config.topology)
    if config.policy.mode is not PolicyMode.ECMP:
        raise UsageError("bench runs under --policy ecmp")
    policy = build_policy(config, topology)
    agent_config = AgentConfig(
        connect_latency_ms=settings.BENCH_CONNECT_LATENCY_MS if args.connect_latency_ms is None else args.connect_latency_ms,
        query_latency_ms=settings.BENCH_QUERY_LATENCY_MS if args.query_latency_ms is None else args.query_latency_ms,
    )
    rows = asyncio.run(run_bench(
        topology, policy, flows=args.flows, threads=args.bench_threads, modes=args.modes,
        repetitions=args.repetitions, config=agent_config, seed=config.seed,
    ))
    path = write_bench_csv(rows, _out_dir(config.out) / "bench.csv")
    print(f"bench: {len(rows)} rows -> {path}")
    return EXIT_OK


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.2f}%"


# -------------------------------------------------
# PARSER
# -------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="run config JSON; flags override its fields")
    p.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default FLOWTRACER_LOG_LEVEL)")
    p.add_argument("--out", help="output directory")


def _add_policy_flags(p: argparse.ArgumentParser):
    p.add_argument("--topology")
    p.add_argument("--policy", choices=[m.value for m in PolicyMode])
    p.add_argument("--static-tables", dest="static_tables")
    p.add_argument("--field-set", dest="field_set", choices=[f.value for f in FieldSet])
    p.add_argument("--include-ingress", dest="include_ingress", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--connect-latency-ms", dest="connect_latency_ms", type=float)
    p.add_argument("--query-latency-ms", dest="query_latency_ms", type=float)


def _add_run_flags(p: argparse.ArgumentParser):
    _add_policy_flags(p)
    p.add_argument("--workload")
    p.add_argument("--procs", type=int, help="worker groups P (default: min(pairs, %d))" % settings.MAX_AUTO_PROCS)
    p.add_argument("--threads", type=int, help="sub-workers T per group")
    p.add_argument("--mode", type=_mode, help="baseline | persistent | parallel-persistent")
    p.add_argument("--hop-limit", dest="hop_limit", type=int)
    p.add_argument("--registry", help="registry JSON (default FLOWTRACER_REGISTRY)")
    p.add_argument("--in-process", dest="in_process", action="store_true",
                   help="start a private agent fleet instead of using a registry")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowtracer", description="Hop-by-hop flow path tracer for leaf-spine fabrics.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate topology, workload or static tables")
    gen_sub = gen.add_subparsers(dest="target", required=True)

    topo = gen_sub.add_parser("topology")
    _add_common(topo)
    topo.add_argument("--reference", action="store_true", help="16 hosts, 4 leaves, 4 spines")
    topo.add_argument("--racks", type=int, default=2)
    topo.add_argument("--hosts-per-rack", dest="hosts_per_rack", type=int, default=8)
    topo.add_argument("--leaves-per-rack", dest="leaves_per_rack", type=int, default=2)
    topo.add_argument("--spines", type=int, default=4)
    topo.add_argument("--host-links-per-leaf", dest="host_links_per_leaf", type=int, default=2)
    topo.add_argument("--uplinks-per-spine", dest="uplinks_per_spine", type=int, default=4)
    topo.add_argument("--speed-gbps", dest="speed_gbps", type=int, default=100)
    topo.set_defaults(handler=cmd_gen)

    wl = gen_sub.add_parser("workload")
    _add_common(wl)
    wl.add_argument("--topology", help="topology JSON (default: reference testbed)")
    wl.add_argument("--bipartite", action="store_true")
    wl.add_argument("--flows-per-pair", dest="flows_per_pair", type=int, default=16)
    wl.add_argument("--unidirectional", action="store_true")
    wl.add_argument("--flow-class", dest="flow_class", choices=[c.value for c in FlowClass],
                    default=FlowClass.KERNEL_BYPASS.value)
    wl.add_argument("--filter-proto", dest="filter_proto", choices=[p.value for p in FilterProtocol])
    wl.add_argument("--dport-lo", dest="dport_lo", type=int)
    wl.add_argument("--dport-hi", dest="dport_hi", type=int)
    wl.add_argument("--seed", type=int, default=0)
    wl.set_defaults(handler=cmd_gen)

    st = gen_sub.add_parser("static-tables")
    _add_common(st)
    st.add_argument("--topology", help="topology JSON (default: reference testbed)")
    st.add_argument("--workload")
    st.add_argument("--balanced", action="store_true")
    st.set_defaults(handler=cmd_gen)

    agents = sub.add_parser("agents", help="run one agent per device and write registry.json")
    _add_common(agents)
    _add_run_flags(agents)
    agents.add_argument("--base-port", dest="base_port", type=int, default=0,
                        help="first TCP port (devices get consecutive ports); 0 = ephemeral")
    agents.add_argument("--control-port", dest="control_port", type=int, default=0,
                        help="also serve the HTTP control plane on this port")
    agents.add_argument("--duration", type=float, help="stop after this many seconds")
    agents.set_defaults(handler=cmd_agents)

    trace = sub.add_parser("trace", help="trace every workload flow and write run_result.json")
    _add_common(trace)
    _add_run_flags(trace)
    trace.set_defaults(handler=cmd_trace)

    an = sub.add_parser("analyze", help="imbalance and throughput report of one run")
    _add_common(an)
    an.add_argument("run_result")
    an.add_argument("--topology", help="topology JSON (default: reference testbed)")
    an.add_argument("--label", default="run")
    an.set_defaults(handler=cmd_analyze)

    cmp_ = sub.add_parser("compare", help="compare two runs of the same workload")
    _add_common(cmp_)
    cmp_.add_argument("run_a")
    cmp_.add_argument("run_b")
    cmp_.add_argument("--topology", help="topology JSON (default: reference testbed)")
    cmp_.add_argument("--labels", nargs=2, default=["a", "b"], metavar=("A", "B"))
    cmp_.set_defaults(handler=cmd_compare)

    bench = sub.add_parser("bench", help="completion time sweep over flows, threads and modes")
    _add_common(bench)
    _add_policy_flags(bench)
    bench.add_argument("--flows", type=_int_list, default=list(DEFAULT_FLOWS))
    bench.add_argument("--threads", dest="bench_threads", type=_int_list, default=list(DEFAULT_THREADS))
    bench.add_argument("--modes", type=_mode_list, default=list(ConnectionMode))
    bench.add_argument("--repetitions", type=int, default=None)
    bench.set_defaults(handler=cmd_bench)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    init_logging(args.log_level)
    try:
        return args.handler(args)
    except FlowTracerError as e:
        logger.error(f"{e.__class__.__name__}: {e}")
        return e.exit_code
    except PydanticValidationError as e:
        # option values that fail model validation (ports, counts, seeds)
        logger.error(f"invalid options: {e}")
        return EXIT_USAGE
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

"""
--------------------------------------------------------------------
Purpose:
    Command-line entry point (`python -m app.cli`).

What It Does:
    - gen topology / workload / static-tables, agents, trace, analyze,
      compare, bench.
    - Merges --config RUN.json with flags (flags win) and the run seed into
      workloads that carry none.
    - Maps FlowTracerError subclasses to exit codes; anything unexpected is 1.

Used By:
    - Operators and the README workflows
    - tests/test_cli.py
--------------------------------------------------------------------
"""
