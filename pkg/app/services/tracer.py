# app/services/tracer.py

import asyncio
import json
import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError

from app.core.config import ConnectionMode, settings
from app.core.errors import (
    AgentError,
    Disconnected,
    FlowTracerError,
    HopLimitExceeded,
    Misdelivered,
    ParseError,
    TraceError,
    UnknownHost,
)
from app.services.agents import AgentConfig, AgentFleet, AgentRegistry
from app.services.fabric import DeviceKind, Topology, neighbor
from app.services.flowgen import (
    FilterSpec,
    FiveTuple,
    FlowClass,
    FlowRecord,
    PairSpec,
    WorkloadSpec,
    apply_filter,
    generate_flows,
    host_for_address,
)
from app.services.routing import RoutingPolicy, forward

logger = logging.getLogger(__name__)

SOURCE = "SOURCE"
SINK = "SINK"

T = TypeVar("T")

# -------------------------------------------------
# DOMAIN TYPES
# -------------------------------------------------

class Hop(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    device: str
    ingress: str  # interface name or SOURCE
    egress: str   # interface name or SINK


class TracedPath(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    flow: FlowRecord
    hops: Tuple[Hop, ...]
    complete: bool

    def switch_count(self) -> int:
        inner = self.hops[1:-1] if self.complete else self.hops[1:]
        return len(inner)

    def devices(self) -> List[str]:
        return [h.device for h in self.hops]


class RunPlan(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    procs: Optional[int] = Field(default=None, ge=1)  # P; None = derive from pair count
    threads: int = Field(default=1, ge=1)             # T
    connection_mode: ConnectionMode = ConnectionMode.PARALLEL_PERSISTENT
    hop_limit: int = Field(default_factory=lambda: settings.HOP_LIMIT, ge=1)

    def group_count(self, pair_count: int) -> int:
        if self.procs is not None:
            return self.procs
        return max(1, min(pair_count, settings.MAX_AUTO_PROCS))


class Timing(BaseModel):
    total_ms: float = 0.0
    flow_retrieval_ms: float = 0.0
    trace_ms: float = 0.0


class FlowError(BaseModel):
    """A flow (or a whole pair, when flow is None) that could not be traced."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    flow: Optional[FlowRecord] = None
    src: str
    dst: str
    device: Optional[str] = None
    code: str
    message: str

    def sort_key(self):
        return (self.flow.tuple.sort_key() if self.flow else (), self.src, self.dst)


class RunResult(BaseModel):
    model_config = ConfigDict(extra="forbid")

    paths: List[TracedPath] = Field(default_factory=list)
    timing: Timing = Field(default_factory=Timing)
    query_count: int = 0
    errors: List[FlowError] = Field(default_factory=list)
    plan: Optional[RunPlan] = None

    @property
    def partial(self) -> bool:
        return bool(self.errors)


# -------------------------------------------------
# PARTITIONING
# -------------------------------------------------

def _blocks(items: Sequence[T], parts: int) -> List[List[T]]:
    if parts < 1:
        raise ValueError("partition count must be >= 1")
    size, extra = divmod(len(items), parts)
    out, start = [], 0
    for i in range(parts):
        end = start + size + (1 if i < extra else 0)
        out.append(list(items[start:end]))
        start = end
    return out


def partition_pairs(pairs: Sequence[T], procs: int) -> List[List[T]]:
    """Contiguous blocks in input order; the first len % P blocks get one extra."""
    return _blocks(pairs, procs)


def partition_flows(flows: Sequence[T], threads: int) -> List[List[T]]:
    return _blocks(flows, threads)


# -------------------------------------------------
# CONNECTIONS
# -------------------------------------------------

class QueryCounter:
    def __init__(self):
        self.value = 0


class AgentConnection:
    """One TCP session to one agent. Requests are serial; one reconnect on failure."""

    def __init__(self, device: str, host: str, port: int, counter: QueryCounter,
                 timeout: Optional[float] = None):
        self.device = device
        self.host = host
        self.port = port
        self.counter = counter
        self.timeout = timeout if timeout is not None else settings.AGENT_TIMEOUT_S
        self._reader: Optional[asyncio.StreamReader] = None
        self._writer: Optional[asyncio.StreamWriter] = None

    @property
    def is_open(self) -> bool:
        return self._writer is not None and not self._writer.is_closing()

    async def open(self):
        self._reader, self._writer = await asyncio.wait_for(
            asyncio.open_connection(self.host, self.port), self.timeout
        )

    async def close(self):
        writer, self._reader, self._writer = self._writer, None, None
        if writer is None:
            return
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionError, OSError):
            pass

    async def _exchange(self, line: str, multi: bool) -> List[str]:
        if not self.is_open:
            await self.open()
        self._writer.write((line + "\n").encode("utf-8"))
        await self._writer.drain()
        replies = []
        while True:
            raw = await asyncio.wait_for(self._reader.readline(), self.timeout)
            if not raw:
                raise ConnectionResetError("agent closed the connection")
            reply = raw.decode("utf-8").strip()
            replies.append(reply)
            if not multi or reply == "END" or reply.startswith("ERR"):
                return replies

    async def request(self, line: str, multi: bool = False) -> List[str]:
        self.counter.value += 1
        for attempt in (1, 2):
            try:
                return await self._exchange(line, multi)
            except (OSError, asyncio.TimeoutError, UnicodeDecodeError) as e:
                await self.close()
                if attempt == 2:
                    raise Disconnected(self.device, f"({e.__class__.__name__})") from e
                logger.debug(f"Reconnecting to {self.device} after {e!r}")


class AdHocConnections:
    """Baseline: a new connection for every request."""

    def __init__(self, registry: AgentRegistry, counter: QueryCounter):
        self.registry = registry
        self.counter = counter

    async def query(self, device: str, line: str, multi: bool = False) -> List[str]:
        host, port = self.registry.endpoint(device)
        connection = AgentConnection(device, host, port, self.counter)
        try:
            return await connection.request(line, multi)
        finally:
            await connection.close()

    async def close(self):
        pass


class PersistentConnections:
    """One connection per device, opened lazily and reused until close()."""

    def __init__(self, registry: AgentRegistry, counter: QueryCounter):
        self.registry = registry
        self.counter = counter
        self._connections: Dict[str, AgentConnection] = {}

    async def query(self, device: str, line: str, multi: bool = False) -> List[str]:
        connection = self._connections.get(device)
        if connection is None:
            host, port = self.registry.endpoint(device)
            connection = AgentConnection(device, host, port, self.counter)
            self._connections[device] = connection
        return await connection.request(line, multi)

    async def close(self):
        for connection in self._connections.values():
            await connection.close()
        self._connections = {}


Connections = Union[AdHocConnections, PersistentConnections]


def _connections_for(mode: ConnectionMode, registry: AgentRegistry, counter: QueryCounter) -> Connections:
    if mode is ConnectionMode.BASELINE:
        return AdHocConnections(registry, counter)
    return PersistentConnections(registry, counter)


# -------------------------------------------------
# HOP-BY-HOP DISCOVERY
# -------------------------------------------------

def _step(topology: Topology, flow: FlowRecord, hops: List[Hop], egress: str, hop_limit: int) -> Tuple[str, str, bool]:
    """Follows `egress` of the last hop; returns (device, ingress, reached destination)."""
    current = hops[-1].device
    try:
        nxt, ingress = neighbor(topology, current, egress)
    except FlowTracerError as e:
        raise TraceError(str(e), current) from e
    if nxt == flow.dest_host:
        return nxt, ingress, True
    if topology.device(nxt).kind is DeviceKind.HOST:
        raise Misdelivered(f"flow {flow.tuple.wire()} delivered to {nxt}", nxt)
    if len(hops) >= hop_limit:
        raise HopLimitExceeded(f"flow {flow.tuple.wire()} exceeded {hop_limit} hops", nxt)
    return nxt, ingress, False


def _route_reply(device: str, replies: List[str]) -> str:
    parts = replies[0].split() if replies else []
    if len(parts) == 2 and parts[0] == "EGRESS":
        return parts[1]
    if len(parts) == 2 and parts[0] == "ERR":
        raise AgentError(device, parts[1])
    raise AgentError(device, "BADREPLY")


async def trace_flow(flow: FlowRecord, topology: Topology, connections: Connections,
                     hop_limit: Optional[int] = None) -> TracedPath:
    hop_limit = hop_limit or settings.HOP_LIMIT
    hops = [Hop(device=flow.source_host, ingress=SOURCE, egress=flow.source_interface)]
    egress = flow.source_interface
    while True:
        device, ingress, arrived = _step(topology, flow, hops, egress, hop_limit)
        if arrived:
            hops.append(Hop(device=device, ingress=ingress, egress=SINK))
            return TracedPath(flow=flow, hops=tuple(hops), complete=True)
        replies = await connections.query(
            device, f"ROUTE {ingress} {flow.tuple.wire()} {flow.dest_host}"
        )
        egress = _route_reply(device, replies)
        hops.append(Hop(device=device, ingress=ingress, egress=egress))


def oracle_paths(workload: WorkloadSpec, topology: Topology, policy: RoutingPolicy,
                 hop_limit: Optional[int] = None) -> List[TracedPath]:
    """Same walk as trace_flow, answered by routing.forward instead of agents."""
    hop_limit = hop_limit or settings.HOP_LIMIT
    flows = _renumber(apply_filter(generate_flows(workload, topology), workload.filter))
    paths = []
    for flow in flows:
        hops = [Hop(device=flow.source_host, ingress=SOURCE, egress=flow.source_interface)]
        egress = flow.source_interface
        while True:
            device, ingress, arrived = _step(topology, flow, hops, egress, hop_limit)
            if arrived:
                hops.append(Hop(device=device, ingress=ingress, egress=SINK))
                break
            egress = forward(topology, policy, device, ingress, flow.tuple, flow.dest_host)
            hops.append(Hop(device=device, ingress=ingress, egress=egress))
        paths.append(TracedPath(flow=flow, hops=tuple(hops), complete=True))
    return sorted(paths, key=lambda p: p.flow.tuple.sort_key())


def _renumber(flows: List[FlowRecord]) -> List[FlowRecord]:
    # ordinals count the flows a host reports for one pair
    seen: Dict[Tuple[str, str], int] = {}
    out = []
    for flow in flows:
        key = (flow.source_host, flow.dest_host)
        ordinal = seen.get(key, 0)
        seen[key] = ordinal + 1
        out.append(flow if flow.flow_ordinal == ordinal else flow.model_copy(update={"flow_ordinal": ordinal}))
    return out


# -------------------------------------------------
# FLOW RETRIEVAL
# -------------------------------------------------

async def retrieve_flows(pair: PairSpec, topology: Topology, connections: Connections,
                         flow_class: FlowClass, filter: FilterSpec) -> List[FlowRecord]:
    """Asks the source host for its active flows and keeps the ones whose destination resolves to pair.dst."""
    verb = "FLOWS" if flow_class is FlowClass.KERNEL_VISIBLE else "RDMAFLOWS"
    replies = await connections.query(pair.src, f"{verb} {filter.wire()}", multi=True)
    if replies and replies[0].startswith("ERR"):
        raise AgentError(pair.src, replies[0].split()[-1])

    flows = []
    for line in replies:
        if line == "END":
            break
        parts = line.split()
        if len(parts) != 7 or parts[0] != "FLOW":
            raise AgentError(pair.src, "BADREPLY")
        _, src_ip, flow_dst, sport, dport, proto, iface = parts
        try:
            t = FiveTuple(src_ip=src_ip, dst_ip=flow_dst, src_port=int(sport),
                          dst_port=int(dport), protocol=proto)
        except (ValueError, PydanticValidationError) as e:
            raise AgentError(pair.src, "BADREPLY") from e
        if host_for_address(topology, t.dst_ip) != pair.dst:
            continue
        flows.append(FlowRecord(
            tuple=t, flow_class=flow_class, source_host=pair.src, dest_host=pair.dst,
            source_interface=iface, flow_ordinal=len(flows),
        ))
    return flows


# -------------------------------------------------
# RUN
# -------------------------------------------------

class _GroupOutcome:
    def __init__(self):
        self.paths: List[TracedPath] = []
        self.errors: List[FlowError] = []
        self.retrieval_s = 0.0
        self.trace_s = 0.0


def _flow_error(flow: FlowRecord, e: FlowTracerError) -> FlowError:
    return FlowError(
        flow=flow, src=flow.source_host, dst=flow.dest_host,
        device=getattr(e, "device", None), code=getattr(e, "code", "TRACE"), message=str(e),
    )


async def _trace_subset(flows: List[FlowRecord], topology: Topology, connections: Connections,
                        hop_limit: int, outcome: _GroupOutcome):
    for flow in flows:
        try:
            outcome.paths.append(await trace_flow(flow, topology, connections, hop_limit))
        except TraceError as e:
            logger.debug(f"Trace failed for {flow.tuple.wire()}: {e}")
            outcome.errors.append(_flow_error(flow, e))


async def _run_group(pairs: List[PairSpec], workload: WorkloadSpec, topology: Topology,
                     registry: AgentRegistry, plan: RunPlan, counter: QueryCounter) -> _GroupOutcome:
    outcome = _GroupOutcome()
    mode = plan.connection_mode
    group_connections = _connections_for(mode, registry, counter)
    # parallel_persistent: every sub-worker owns its per-device connections for the group's lifetime
    sub_connections = (
        [PersistentConnections(registry, counter) for _ in range(plan.threads)]
        if mode is ConnectionMode.PARALLEL_PERSISTENT else []
    )
    try:
        for pair in pairs:
            started = time.perf_counter()
            try:
                flows = await retrieve_flows(pair, topology, group_connections, workload.flow_class,
                                             workload.filter)
            except TraceError as e:
                logger.warning(f"Flow retrieval failed for {pair.src}->{pair.dst}: {e}")
                outcome.errors.append(FlowError(src=pair.src, dst=pair.dst, device=e.device,
                                                code=e.code, message=str(e)))
                continue
            finally:
                outcome.retrieval_s += time.perf_counter() - started

            started = time.perf_counter()
            subsets = partition_flows(flows, plan.threads)
            if mode is ConnectionMode.PARALLEL_PERSISTENT:
                await asyncio.gather(*(
                    _trace_subset(subset, topology, conns, plan.hop_limit, outcome)
                    for subset, conns in zip(subsets, sub_connections)
                ))
            else:
                for subset in subsets:
                    await _trace_subset(subset, topology, group_connections, plan.hop_limit, outcome)
            outcome.trace_s += time.perf_counter() - started
    finally:
        await group_connections.close()
        for conns in sub_connections:
            await conns.close()
    return outcome


async def run(workload: WorkloadSpec, topology: Topology, registry: AgentRegistry, plan: RunPlan) -> RunResult:
    """Traces every filtered flow of the workload through the agents."""
    registry.require_complete(topology)
    for pair in workload.pairs:
        for host in (pair.src, pair.dst):
            device = topology.get_device(host)
            if device is None or device.kind is not DeviceKind.HOST:
                raise UnknownHost(host)

    groups = partition_pairs(list(workload.pairs), plan.group_count(len(workload.pairs)))
    counter = QueryCounter()
    logger.info(f"Tracing {len(workload.pairs)} pairs: P={len(groups)} T={plan.threads} "
                f"mode={plan.connection_mode.value}")

    started = time.perf_counter()
    outcomes = await asyncio.gather(*(
        _run_group(group, workload, topology, registry, plan, counter)
        for group in groups if group
    ))
    total_s = time.perf_counter() - started

    paths = sorted((p for o in outcomes for p in o.paths), key=lambda p: p.flow.tuple.sort_key())
    errors = sorted((e for o in outcomes for e in o.errors), key=FlowError.sort_key)
    timing = Timing(
        total_ms=total_s * 1000.0,
        flow_retrieval_ms=max((o.retrieval_s for o in outcomes), default=0.0) * 1000.0,
        trace_ms=max((o.trace_s for o in outcomes), default=0.0) * 1000.0,
    )
    logger.info(f"Traced {len(paths)} flows, {len(errors)} errors, {counter.value} queries "
                f"in {timing.total_ms:.1f}ms")
    return RunResult(paths=paths, timing=timing, query_count=counter.value, errors=errors, plan=plan)


async def run_in_process(workload: WorkloadSpec, topology: Topology, policy: RoutingPolicy,
                         plan: RunPlan, config: Optional[AgentConfig] = None) -> RunResult:
    """Starts a local agent fleet for the workload, traces it and tears the fleet down."""
    flows = generate_flows(workload, topology)
    fleet = await AgentFleet.start(topology, flows, policy, config or AgentConfig())
    async with fleet:
        return await run(workload, topology, fleet.registry, plan)


# -------------------------------------------------
# FILES
# -------------------------------------------------

def run_result_to_dict(result: RunResult) -> dict:
    return {
        "flows": [p.model_dump(mode="json") for p in result.paths],
        "timing": {
            "total_ms": round(result.timing.total_ms, 3),
            "per_phase": {
                "flow_retrieval_ms": round(result.timing.flow_retrieval_ms, 3),
                "trace_ms": round(result.timing.trace_ms, 3),
            },
        },
        "query_count": result.query_count,
        "errors": [e.model_dump(mode="json") for e in result.errors],
        "plan": result.plan.model_dump(mode="json") if result.plan else None,
    }


def run_result_from_dict(raw) -> RunResult:
    try:
        timing = raw.get("timing", {})
        per_phase = timing.get("per_phase", {})
        return RunResult(
            paths=[TracedPath.model_validate(p) for p in raw.get("flows", [])],
            timing=Timing(
                total_ms=timing.get("total_ms", 0.0),
                flow_retrieval_ms=per_phase.get("flow_retrieval_ms", 0.0),
                trace_ms=per_phase.get("trace_ms", 0.0),
            ),
            query_count=raw.get("query_count", 0),
            errors=[FlowError.model_validate(e) for e in raw.get("errors", [])],
            plan=RunPlan.model_validate(raw["plan"]) if raw.get("plan") else None,
        )
    except (AttributeError, TypeError, PydanticValidationError) as e:
        raise ParseError(f"run result does not match schema: {e}") from e


def load_run_result(path) -> RunResult:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"cannot read run result {path}: {e}") from e
    return run_result_from_dict(raw)


def dump_run_result(result: RunResult, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(run_result_to_dict(result), indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote run result to {path}")
    return path

"""
--------------------------------------------------------------------
Purpose:
    The tracer itself: walks every flow of a workload hop by hop through
    the device agents.

What It Does:
    - Splits pairs into P contiguous groups and each pair's flows into T
      sub-workers (partition_pairs / partition_flows).
    - Retrieves flows from the source host (FLOWS or RDMAFLOWS), then asks
      one switch per hop for the egress with ROUTE.
    - Ad hoc, persistent and parallel-persistent connection modes with a
      single reconnect before a device counts as disconnected.
    - Per-flow errors instead of aborting the run; run_result.json I/O.
    - oracle_paths(): the same walk answered by routing.forward.

Used By:
    - app/cli.py (`trace`, `analyze`, `compare`)
    - app/services/bench.py
    - app/routes/fleet.py, app/routes/analysis.py
--------------------------------------------------------------------
"""
