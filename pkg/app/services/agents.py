# app/services/agents.py

import asyncio
import json
import logging
import time
from collections import defaultdict
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Set, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError

from app.core.config import settings
from app.core.errors import ParseError, RegistryIncomplete, RoutingError
from app.services.fabric import DeviceKind, Topology
from app.services.flowgen import FilterSpec, FiveTuple, FlowClass, FlowRecord
from app.services.routing import RoutingPolicy, forward

logger = logging.getLogger(__name__)

AGENT_BANNER = "flowtracer-agent"

# -------------------------------------------------
# CONFIGURATION
# -------------------------------------------------

class LatencyPhase(str, Enum):
    CONNECT = "connect"
    QUERY = "query"


class AgentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    connect_latency_ms: float = Field(default=0.0, ge=0)
    query_latency_ms: float = Field(default=0.0, ge=0)
    bind_host: str = Field(default_factory=lambda: settings.AGENT_HOST)


async def inject_latency(config: AgentConfig, phase: LatencyPhase) -> float:
    """Blocks the calling handler for the configured delay; returns seconds slept."""
    delay_ms = config.connect_latency_ms if phase is LatencyPhase.CONNECT else config.query_latency_ms
    started = time.perf_counter()
    if delay_ms > 0:
        await asyncio.sleep(delay_ms / 1000.0)
    return time.perf_counter() - started


# -------------------------------------------------
# AGENTS
# -------------------------------------------------

class BadQuery(Exception):
    pass


class DeviceAgent:
    """
    One simulated device. `respond` is a pure function of the request line;
    `handle_connection` adds framing and latency. Requests on one connection
    are served strictly in order.
    """
    kind: DeviceKind

    def __init__(self, device_id: str, config: AgentConfig):
        self.device_id = device_id
        self.config = config
        self.writers: Set[asyncio.StreamWriter] = set()

    def respond(self, line: str) -> List[str]:
        parts = line.split()
        if not parts:
            return ["ERR BADQUERY"]
        verb, args = parts[0].upper(), parts[1:]
        try:
            if verb == "PING" and not args:
                return ["PONG"]
            if verb == "HELLO" and len(args) == 1:
                return [f"OK {AGENT_BANNER} {self.device_id} {self.kind.value}"]
            return self.dispatch(verb, args)
        except BadQuery as e:
            logger.debug(f"{self.device_id}: bad query {line!r}: {e}")
            return ["ERR BADQUERY"]

    def dispatch(self, verb: str, args: List[str]) -> List[str]:
        raise BadQuery(f"unsupported verb {verb}")

    async def handle_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        peer = writer.get_extra_info("peername")
        self.writers.add(writer)
        try:
            await inject_latency(self.config, LatencyPhase.CONNECT)
            while True:
                raw = await reader.readline()
                if not raw:
                    break
                await inject_latency(self.config, LatencyPhase.QUERY)
                try:
                    line = raw.decode("utf-8").strip()
                except UnicodeDecodeError:
                    response = ["ERR BADQUERY"]
                else:
                    response = self.respond(line)
                writer.write(("\n".join(response) + "\n").encode("utf-8"))
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError) as e:
            logger.debug(f"{self.device_id}: connection from {peer} dropped: {e}")
        finally:
            self.writers.discard(writer)
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass


class HostAgent(DeviceAgent):
    kind = DeviceKind.HOST

    def __init__(self, host_id: str, flows: Iterable[FlowRecord], config: AgentConfig):
        super().__init__(host_id, config)
        self.flows = list(flows)
        stray = [f for f in self.flows if f.source_host != host_id]
        if stray:
            raise ValueError(f"{len(stray)} flows do not originate at {host_id}")

    def dispatch(self, verb: str, args: List[str]) -> List[str]:
        if verb not in ("FLOWS", "RDMAFLOWS") or len(args) != 1:
            raise BadQuery(f"unsupported request {verb}")
        try:
            flt = FilterSpec.from_wire(args[0])
        except ValueError as e:
            raise BadQuery(str(e)) from e
        # kernel utilities see kernel flows only; the NIC driver sees bypass flows only
        wanted = FlowClass.KERNEL_VISIBLE if verb == "FLOWS" else FlowClass.KERNEL_BYPASS
        lines = [
            f"FLOW {f.tuple.wire()} {f.source_interface}"
            for f in self.flows
            if f.flow_class is wanted and flt.matches(f)
        ]
        return lines + ["END"]


class SwitchAgent(DeviceAgent):
    def __init__(self, device_id: str, topology: Topology, policy: RoutingPolicy, config: AgentConfig):
        super().__init__(device_id, config)
        device = topology.device(device_id)
        if not device.kind.is_switch:
            raise ValueError(f"{device_id} is not a switch")
        self.kind = device.kind
        self.device = device
        self.topology = topology
        self.policy = policy

    def dispatch(self, verb: str, args: List[str]) -> List[str]:
        if verb != "ROUTE" or len(args) != 7:
            raise BadQuery(f"unsupported request {verb}")
        ingress, src_ip, dst_ip, sport, dport, proto, dst_host = args
        if self.device.interface(ingress) is None:
            raise BadQuery(f"unknown ingress {ingress}")
        try:
            t = FiveTuple(src_ip=src_ip, dst_ip=dst_ip, src_port=int(sport), dst_port=int(dport), protocol=proto)
        except (ValueError, PydanticValidationError) as e:
            raise BadQuery(str(e)) from e
        try:
            egress = forward(self.topology, self.policy, self.device_id, ingress, t, dst_host)
        except RoutingError as e:
            logger.debug(f"{self.device_id}: {e}")
            return [f"ERR {e.code}"]
        return [f"EGRESS {egress}"]


class RunningAgent:
    def __init__(self, agent: DeviceAgent, server: asyncio.AbstractServer):
        self.agent = agent
        self.server = server
        sockname = server.sockets[0].getsockname()
        self.host, self.port = sockname[0], sockname[1]

    @property
    def device_id(self) -> str:
        return self.agent.device_id

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    async def close(self):
        self.server.close()
        for writer in list(self.agent.writers):
            writer.close()
        await self.server.wait_closed()


async def _serve(agent: DeviceAgent, port: int) -> RunningAgent:
    server = await asyncio.start_server(agent.handle_connection, agent.config.bind_host, port)
    running = RunningAgent(agent, server)
    logger.debug(f"Agent {agent.device_id} ({agent.kind.value}) listening on {running.endpoint}")
    return running


async def serve_host(host_id: str, flows: Iterable[FlowRecord], config: AgentConfig, port: int = 0) -> RunningAgent:
    return await _serve(HostAgent(host_id, flows, config), port)


async def serve_switch(device_id: str, topology: Topology, policy: RoutingPolicy,
                       config: AgentConfig, port: int = 0) -> RunningAgent:
    return await _serve(SwitchAgent(device_id, topology, policy, config), port)


# -------------------------------------------------
# REGISTRY
# -------------------------------------------------

class AgentRegistry(BaseModel):
    model_config = ConfigDict(frozen=True)

    endpoints: Dict[str, str] = Field(default_factory=dict)

    def endpoint(self, device_id: str) -> Tuple[str, int]:
        host, _, port = self.endpoints[device_id].rpartition(":")
        return host, int(port)

    def missing(self, topology: Topology) -> Set[str]:
        return {d.id for d in topology.devices} - set(self.endpoints)

    def require_complete(self, topology: Topology):
        missing = self.missing(topology)
        if missing:
            raise RegistryIncomplete(missing)


def load_registry(path) -> AgentRegistry:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        registry = AgentRegistry(endpoints=raw)
        for device in registry.endpoints:
            registry.endpoint(device)
    except (OSError, json.JSONDecodeError, PydanticValidationError, ValueError) as e:
        raise ParseError(f"cannot read registry {path}: {e}") from e
    logger.info(f"Loaded registry {path}: {len(registry.endpoints)} endpoints")
    return registry


def dump_registry(registry: AgentRegistry, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(registry.endpoints, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote registry to {path}")
    return path


# -------------------------------------------------
# FLEET (one agent per topology device)
# -------------------------------------------------

class AgentFleet:
    def __init__(self, agents: List[RunningAgent]):
        self.agents = {a.device_id: a for a in agents}

    @property
    def registry(self) -> AgentRegistry:
        return AgentRegistry(endpoints={d: a.endpoint for d, a in sorted(self.agents.items())})

    @classmethod
    async def start(cls, topology: Topology, flows: Iterable[FlowRecord], policy: RoutingPolicy,
                    config: AgentConfig, base_port: int = 0) -> "AgentFleet":
        """Starts every agent; on any bind failure the agents already up are torn down."""
        by_host: Dict[str, List[FlowRecord]] = defaultdict(list)
        for flow in flows:
            by_host[flow.source_host].append(flow)

        started: List[RunningAgent] = []
        try:
            for index, device in enumerate(topology.devices):
                port = base_port + index if base_port else 0
                if device.kind is DeviceKind.HOST:
                    started.append(await serve_host(device.id, by_host.get(device.id, []), config, port))
                else:
                    started.append(await serve_switch(device.id, topology, policy, config, port))
        except OSError as e:
            logger.error(f"Agent bind failed after {len(started)} agents: {e}")
            for agent in started:
                await agent.close()
            raise
        logger.info(f"Started {len(started)} agents (connect={config.connect_latency_ms}ms, "
                    f"query={config.query_latency_ms}ms)")
        return cls(started)

    async def stop(self, device_id: str):
        agent = self.agents.pop(device_id, None)
        if agent is not None:
            await agent.close()

    async def close(self):
        for agent in self.agents.values():
            await agent.close()
        self.agents = {}

    async def __aenter__(self) -> "AgentFleet":
        return self

    async def __aexit__(self, *exc):
        await self.close()

"""
--------------------------------------------------------------------
Purpose:
    Simulated device endpoints standing in for SSH/CLI/NIC-driver access.

What It Does:
    - Line protocol over TCP: HELLO, PING, FLOWS, RDMAFLOWS (hosts), ROUTE (switches).
    - Connect and per-request latency injection, serial per connection and
      concurrent across connections.
    - Registry file (device id -> host:port) and an in-process fleet launcher.

Used By:
    - app/services/tracer.py (queries)
    - app/cli.py (`agents`, `trace --in-process`, `bench`)
    - app/routes/fleet.py (control plane)
--------------------------------------------------------------------
"""
