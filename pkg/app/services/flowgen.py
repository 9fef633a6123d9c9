# app/services/flowgen.py

import ipaddress
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError as PydanticValidationError,
    field_validator,
    model_validator,
)

from app.core.errors import FlowTracerError, NotBipartiteCapable, ParseError, UnknownHost, ValidationError
from app.services.fabric import DeviceKind, Topology
from app.utils.hashing import fnv1a_64, mix64
from app.utils.validators import is_valid_port_range

logger = logging.getLogger(__name__)

EPHEMERAL_LOW = 49152
EPHEMERAL_HIGH = 65535
ROCEV2_PORT = 4791
IPERF_PORT = 5201

# -------------------------------------------------
# DOMAIN TYPES
# -------------------------------------------------

class Protocol(str, Enum):
    TCP = "tcp"
    UDP = "udp"

    @property
    def number(self) -> int:
        # IANA protocol numbers, used in the ECMP hash key
        return 6 if self is Protocol.TCP else 17


class FlowClass(str, Enum):
    KERNEL_VISIBLE = "kernel_visible"
    KERNEL_BYPASS = "kernel_bypass"


class FiveTuple(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    src_ip: ipaddress.IPv4Address
    dst_ip: ipaddress.IPv4Address
    src_port: int = Field(ge=1, le=65535)
    dst_port: int = Field(ge=1, le=65535)
    protocol: Protocol

    @model_validator(mode="after")
    def _distinct_endpoints(self):
        if self.src_ip == self.dst_ip:
            raise ValueError("src_ip and dst_ip must differ")
        return self

    def sort_key(self) -> Tuple[int, int, int, int, str]:
        return (int(self.src_ip), int(self.dst_ip), self.src_port, self.dst_port, self.protocol.value)

    def wire(self) -> str:
        """`<src_ip> <dst_ip> <sport> <dport> <proto>` as used on the agent protocol."""
        return f"{self.src_ip} {self.dst_ip} {self.src_port} {self.dst_port} {self.protocol.value}"


class FlowRecord(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    tuple: FiveTuple
    flow_class: FlowClass
    source_host: str
    dest_host: str
    source_interface: str
    flow_ordinal: int = Field(ge=0)


class FilterProtocol(str, Enum):
    TCP = "tcp"
    UDP = "udp"
    ANY = "any"

    def admits(self, protocol: Protocol) -> bool:
        return self is FilterProtocol.ANY or self.value == protocol.value


class FilterSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dst_port_low: int = 1
    dst_port_high: int = 65535
    protocol: FilterProtocol = FilterProtocol.ANY

    @model_validator(mode="after")
    def _ordered(self):
        if not is_valid_port_range(self.dst_port_low, self.dst_port_high):
            raise ValueError("filter needs 1 <= dst_port_low <= dst_port_high <= 65535")
        return self

    def matches(self, flow: FlowRecord) -> bool:
        t = flow.tuple
        return self.dst_port_low <= t.dst_port <= self.dst_port_high and self.protocol.admits(t.protocol)

    def wire(self) -> str:
        """`proto,dport_lo,dport_hi` argument of FLOWS/RDMAFLOWS."""
        return f"{self.protocol.value},{self.dst_port_low},{self.dst_port_high}"

    @classmethod
    def from_wire(cls, text: str) -> "FilterSpec":
        proto, low, high = text.split(",")
        return cls(protocol=FilterProtocol(proto), dst_port_low=int(low), dst_port_high=int(high))


class PairSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    src: str
    dst: str
    flows: int = Field(ge=1)


class WorkloadSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    pairs: Tuple[PairSpec, ...]
    flow_class: FlowClass = FlowClass.KERNEL_BYPASS
    filter: FilterSpec = Field(default_factory=FilterSpec)
    seed: int = 0

    @field_validator("seed")
    @classmethod
    def _seed_64(cls, value: int) -> int:
        if not -(1 << 63) <= value < (1 << 64):
            raise ValueError("seed must fit in 64 bits")
        return value

    @model_validator(mode="after")
    def _unique_pairs(self):
        seen = set()
        for pair in self.pairs:
            key = (pair.src, pair.dst)
            if key in seen:
                raise ValueError(f"duplicate pair {pair.src}->{pair.dst}")
            seen.add(key)
        return self

    def total_flows(self) -> int:
        return sum(p.flows for p in self.pairs)


# -------------------------------------------------
# ADDRESSING PLAN (10.R.H.1)
# -------------------------------------------------

def address_book(topology: Topology) -> Dict[str, ipaddress.IPv4Address]:
    book = {}
    for r, rack in enumerate(topology.racks()):
        for h, host in enumerate(topology.hosts_in_rack(rack)):
            book[host.id] = ipaddress.IPv4Address(f"10.{r}.{h}.1")
    return book


def host_address(topology: Topology, host: str) -> ipaddress.IPv4Address:
    address = address_book(topology).get(host)
    if address is None:
        raise UnknownHost(host)
    return address


def host_for_address(topology: Topology, address) -> Optional[str]:
    address = ipaddress.IPv4Address(str(address))
    for host, ip in address_book(topology).items():
        if ip == address:
            return host
    return None


# -------------------------------------------------
# OPERATIONS
# -------------------------------------------------

def _default_endpoint(spec: WorkloadSpec, pair_index: int) -> Tuple[Protocol, int]:
    """Protocol and destination port for one pair, honouring the filter."""
    flt = spec.filter
    low, high = flt.dst_port_low, flt.dst_port_high
    if spec.flow_class is FlowClass.KERNEL_BYPASS:
        protocol = Protocol.TCP if flt.protocol is FilterProtocol.TCP else Protocol.UDP
        if protocol is Protocol.UDP and low <= ROCEV2_PORT <= high:
            return protocol, ROCEV2_PORT
        base = low
    else:
        protocol = Protocol.UDP if flt.protocol is FilterProtocol.UDP else Protocol.TCP
        base = IPERF_PORT if low <= IPERF_PORT <= high else low
    span = high - low + 1
    return protocol, low + ((base - low) + pair_index) % span


def _check_hosts(spec: WorkloadSpec, topology: Topology):
    for pair in spec.pairs:
        if pair.src == pair.dst:
            raise ValidationError("pair source and destination must differ", f"{pair.src}->{pair.dst}")
        for host in (pair.src, pair.dst):
            device = topology.get_device(host)
            if device is None or device.kind is not DeviceKind.HOST:
                raise UnknownHost(host)


def generate_flows(spec: WorkloadSpec, topology: Topology) -> List[FlowRecord]:
    """
    Deterministic flow synthesis. Source ports come from mix64(seed-derived
    state + k) folded into the ephemeral range, linearly probed on collision.
    Flows of pair i bind to the source host's linked interfaces (sorted) in
    round-robin starting at i mod n.
    """
    _check_hosts(spec, topology)
    addresses = address_book(topology)
    span = EPHEMERAL_HIGH - EPHEMERAL_LOW + 1
    state = fnv1a_64(spec.seed.to_bytes(8, "big", signed=spec.seed < 0))

    used = set()
    records: List[FlowRecord] = []
    k = 0
    for pair_index, pair in enumerate(spec.pairs):
        interfaces = sorted(topology.linked_interfaces(pair.src), key=lambda n: n.encode())
        if not interfaces:
            raise ValidationError("source host has no linked interface", pair.src)
        protocol, dst_port = _default_endpoint(spec, pair_index)
        src_ip, dst_ip = addresses[pair.src], addresses[pair.dst]

        for ordinal in range(pair.flows):
            offset = mix64((state + k) & 0xFFFFFFFFFFFFFFFF) % span
            k += 1
            for probe in range(span):
                src_port = EPHEMERAL_LOW + (offset + probe) % span
                key = (src_ip, dst_ip, src_port, dst_port, protocol)
                if key not in used:
                    break
            else:
                raise FlowTracerError(f"ephemeral port space exhausted for {pair.src}->{pair.dst}")
            used.add(key)
            records.append(FlowRecord(
                tuple=FiveTuple(src_ip=src_ip, dst_ip=dst_ip, src_port=src_port,
                                dst_port=dst_port, protocol=protocol),
                flow_class=spec.flow_class,
                source_host=pair.src,
                dest_host=pair.dst,
                source_interface=interfaces[(pair_index + ordinal) % len(interfaces)],
                flow_ordinal=ordinal,
            ))

    logger.debug(f"Generated {len(records)} flows for {len(spec.pairs)} pairs (seed={spec.seed})")
    return records


def make_bipartite_workload(
    topology: Topology,
    flows_per_pair: int,
    seed: int,
    bidirectional: bool = True,
    flow_class: FlowClass = FlowClass.KERNEL_BYPASS,
    filter: Optional[FilterSpec] = None,
) -> WorkloadSpec:
    """Host i of rack 0 paired with host i of rack 1 (hosts sorted by id)."""
    racks = topology.racks()
    if len(racks) != 2:
        raise NotBipartiteCapable(f"bipartite pattern needs exactly 2 racks, topology has {len(racks)}")
    left, right = (topology.hosts_in_rack(r) for r in racks)
    if len(left) != len(right) or not left:
        raise NotBipartiteCapable(f"racks hold {len(left)} and {len(right)} hosts")

    pairs = [PairSpec(src=a.id, dst=b.id, flows=flows_per_pair) for a, b in zip(left, right)]
    if bidirectional:
        pairs += [PairSpec(src=b.id, dst=a.id, flows=flows_per_pair) for a, b in zip(left, right)]
    return WorkloadSpec(pairs=tuple(pairs), flow_class=flow_class, filter=filter or FilterSpec(), seed=seed)


def apply_filter(flows: List[FlowRecord], filter: FilterSpec) -> List[FlowRecord]:
    return [f for f in flows if filter.matches(f)]


# -------------------------------------------------
# FILES
# -------------------------------------------------

def workload_from_dict(raw) -> WorkloadSpec:
    try:
        return WorkloadSpec.model_validate(raw)
    except PydanticValidationError as e:
        raise ParseError(f"workload does not match schema: {e}") from e


def load_workload(path, topology: Optional[Topology] = None) -> WorkloadSpec:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"cannot read workload {path}: {e}") from e
    spec = workload_from_dict(raw)
    if topology is not None:
        _check_hosts(spec, topology)
    logger.info(f"Loaded workload {path}: {len(spec.pairs)} pairs, {spec.total_flows()} flows")
    return spec


def dump_workload(spec: WorkloadSpec, path) -> Path:
    path = Path(path)
    path.write_text(spec.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote workload to {path}")
    return path

"""
--------------------------------------------------------------------
Purpose:
    Workload descriptions and the flows they produce.

What It Does:
    - WorkloadSpec/FilterSpec schema (JSON workload files).
    - Deterministic 5-tuple synthesis and first-hop interface binding.
    - Bipartite rack-to-rack pattern generator.
    - Filter predicate shared with the host agents.

Used By:
    - app/services/agents.py (host agents serve the generated flows)
    - app/services/tracer.py (run, oracle_paths)
    - app/cli.py (`gen workload`)
--------------------------------------------------------------------
"""
