# app/services/routing.py

import ipaddress
import json
import logging
from collections import Counter
from enum import Enum
from pathlib import Path
from typing import Dict, Hashable, Iterable, List, Optional, Tuple

import networkx as nx
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, model_validator

from app.core.errors import (
    EmptyCandidates,
    InfeasibleBalance,
    NoMatchingRule,
    NoRoute,
    ParseError,
    ValidationError,
)
from app.services.fabric import DeviceKind, Topology, neighbor
from app.services.flowgen import FiveTuple, FlowRecord
from app.utils.hashing import device_key, fnv1a_64, mix64
from app.utils.validators import port_in_range

logger = logging.getLogger(__name__)

PortRange = Tuple[int, int]

# -------------------------------------------------
# DOMAIN TYPES
# -------------------------------------------------

class FieldSet(str, Enum):
    FULL_FIVE_TUPLE = "full_five_tuple"
    REDUCED_OUTER = "reduced_outer"  # outer IPs only, as seen under VXLAN encapsulation


class EcmpConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    field_set: FieldSet = FieldSet.FULL_FIVE_TUPLE
    include_ingress: bool = False
    seed: int = 0  # device seed salt shared by every switch


class RuleMatch(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    src_ip: Optional[ipaddress.IPv4Address] = None
    dst_ip: Optional[ipaddress.IPv4Address] = None
    src_port: Optional[PortRange] = None
    dst_port: Optional[PortRange] = None

    def matches(self, t: FiveTuple) -> bool:
        if self.src_ip is not None and self.src_ip != t.src_ip:
            return False
        if self.dst_ip is not None and self.dst_ip != t.dst_ip:
            return False
        return port_in_range(t.src_port, self.src_port) and port_in_range(t.dst_port, self.dst_port)


class StaticRule(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    match: RuleMatch = Field(default_factory=RuleMatch)
    egress: str


class StaticTables(BaseModel):
    """Per-device ordered rule lists; first match wins."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    tables: Dict[str, Tuple[StaticRule, ...]] = Field(default_factory=dict)

    def rules_for(self, device: str) -> Optional[Tuple[StaticRule, ...]]:
        return self.tables.get(device)


class RoutingMode(str, Enum):
    ECMP = "ecmp"
    STATIC = "static"


class RoutingPolicy(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: RoutingMode
    ecmp: Optional[EcmpConfig] = None
    tables: Optional[StaticTables] = None

    @model_validator(mode="after")
    def _one_of(self):
        if self.mode is RoutingMode.ECMP and (self.ecmp is None or self.tables is not None):
            raise ValueError("ecmp policy needs an EcmpConfig and no tables")
        if self.mode is RoutingMode.STATIC and (self.tables is None or self.ecmp is not None):
            raise ValueError("static policy needs tables and no EcmpConfig")
        return self

    @classmethod
    def from_ecmp(cls, config: EcmpConfig) -> "RoutingPolicy":
        return cls(mode=RoutingMode.ECMP, ecmp=config)

    @classmethod
    def from_tables(cls, tables: StaticTables) -> "RoutingPolicy":
        return cls(mode=RoutingMode.STATIC, tables=tables)


# -------------------------------------------------
# ECMP
# -------------------------------------------------

def _name_key(name: str) -> bytes:
    return name.encode("utf-8")


def candidate_egress(topology: Topology, device: str, dst_host: str, ingress: Optional[str]) -> List[str]:
    """Interfaces of `device` on shortest paths to `dst_host`, sorted bytewise."""
    dev = topology.get_device(device)
    if dev is None or not dev.kind.is_switch:
        raise NoRoute(f"{device} is not a switch")
    distances = topology.distances_to(dst_host)
    here = distances.get(device)
    if here is None:
        raise NoRoute(f"{dst_host} unreachable from {device}")

    candidates = []
    for iface in topology.linked_interfaces(device):
        if iface == ingress:
            continue
        peer_device, _ = topology.peer(device, iface)
        if distances.get(peer_device) == here - 1:
            candidates.append(iface)
    if not candidates:
        raise NoRoute(f"{dst_host} unreachable from {device}")
    return sorted(candidates, key=_name_key)


def hash_key(t: FiveTuple, field_set: FieldSet, ingress: Optional[str] = None) -> bytes:
    """Canonical byte string fed to FNV-1a; field order is fixed."""
    key = t.src_ip.packed + t.dst_ip.packed
    if field_set is FieldSet.FULL_FIVE_TUPLE:
        key += t.src_port.to_bytes(2, "big") + t.dst_port.to_bytes(2, "big") + bytes([t.protocol.number])
    if ingress is not None:
        key += ingress.encode("utf-8")
    return key


def flow_hash(t: FiveTuple, ingress: Optional[str], config: EcmpConfig, device: str) -> int:
    raw = fnv1a_64(hash_key(t, config.field_set, ingress if config.include_ingress else None))
    return mix64(raw ^ device_key(device, config.seed))


def hash_select(candidates: List[str], t: FiveTuple, ingress: Optional[str], config: EcmpConfig, device: str) -> str:
    if not candidates:
        raise EmptyCandidates(f"no candidates at {device}")
    return candidates[flow_hash(t, ingress, config, device) % len(candidates)]


# -------------------------------------------------
# STATIC
# -------------------------------------------------

def static_select(tables: StaticTables, device: str, t: FiveTuple) -> str:
    for rule in tables.rules_for(device) or ():
        if rule.match.matches(t):
            return rule.egress
    raise NoMatchingRule(f"no static rule at {device} for {t.wire()}")


def forward(topology: Topology, policy: RoutingPolicy, device: str, ingress: Optional[str],
            t: FiveTuple, dst_host: str) -> str:
    """Egress interface chosen by `device` for a flow arriving on `ingress`."""
    if policy.mode is RoutingMode.ECMP:
        candidates = candidate_egress(topology, device, dst_host, ingress)
        return hash_select(candidates, t, ingress, policy.ecmp, device)
    egress = static_select(policy.tables, device, t)
    if topology.peer(device, egress) is None:
        raise NoRoute(f"static egress {device}:{egress} is not linked")
    return egress


# -------------------------------------------------
# BALANCED STATIC TABLES
# -------------------------------------------------

def _least_loaded(options: Iterable, load: Counter):
    # min() keeps the first option on ties, so ties resolve in option order
    return min(options, key=lambda option: load[option])


def _exact_match(t: FiveTuple) -> RuleMatch:
    return RuleMatch(
        src_ip=t.src_ip, dst_ip=t.dst_ip,
        src_port=(t.src_port, t.src_port), dst_port=(t.dst_port, t.dst_port),
    )


def _degree_bounded_subgraph(multiplicity: Dict[Tuple[Hashable, Hashable], int], share: int) -> Dict[Tuple, int]:
    """
    Sub-multigraph in which every vertex of degree d keeps between floor(d/share)
    and ceil(d/share) edges, found as a bounded circulation with networkx.
    """
    degree: Counter = Counter()
    for (a, b), count in multiplicity.items():
        degree[("left", a)] += count
        degree[("right", b)] += count

    graph = nx.DiGraph()
    graph.add_nodes_from(("source", "sink"))

    def bounded_edge(u, v, low: int, high: int):
        # lower bound moved into node demands
        graph.add_edge(u, v, capacity=high - low)
        graph.nodes[u]["demand"] = graph.nodes[u].get("demand", 0) + low
        graph.nodes[v]["demand"] = graph.nodes[v].get("demand", 0) - low

    for node, d in degree.items():
        low, high = d // share, -(-d // share)
        if node[0] == "left":
            bounded_edge("source", node, low, high)
        else:
            bounded_edge(node, "sink", low, high)
    for (a, b), count in multiplicity.items():
        if count:
            graph.add_edge(("left", a), ("right", b), capacity=count)
    graph.add_edge("sink", "source")  # uncapacitated return edge

    try:
        flow = nx.min_cost_flow(graph)
    except nx.NetworkXUnfeasible as e:
        raise InfeasibleBalance(f"no equitable split over {share} choices") from e
    return {(a, b): flow[("left", a)][("right", b)] for (a, b), count in multiplicity.items() if count}


def _equitable_assignment(keys: List[Tuple[Hashable, Hashable]], choices: List[str]) -> List[str]:
    """
    Assigns one choice to every (a, b) key so that each a and each b sees every
    choice floor(d/k) or ceil(d/k) times. Choices are peeled off one by one.
    """
    remaining: Dict[Tuple, int] = Counter(keys)
    pool: Dict[Tuple, List[str]] = {key: [] for key in remaining}
    for i, choice in enumerate(choices):
        taken = _degree_bounded_subgraph(remaining, len(choices) - i)
        for key, count in taken.items():
            remaining[key] -= count
            pool[key].extend([choice] * count)
    picks = {key: iter(values) for key, values in pool.items()}
    return [next(picks[key]) for key in keys]


def build_balanced_static_tables(topology: Topology, flows: List[FlowRecord]) -> StaticTables:
    """
    Per-flow rules spreading flows over every layer.

    Flows whose source leaf reaches the destination host directly take its least
    loaded link. The others get a spine and then a destination leaf:
    - spines are split evenly per source leaf and per destination rack at once,
    - inside each destination rack, every spine's flows are split evenly over the
      rack's leaves, and every host's flows too,
    - the parallel link inside a bundle is the least loaded one.
    Uplinks of a source leaf and downlinks into a rack then differ by at most one flow.
    """
    link_load: Counter = Counter()     # (device, egress) -> flows
    leaves = [d.id for d in topology.of_kind(DeviceKind.LEAF)]
    tables: Dict[str, List[StaticRule]] = {}

    def ports_toward(device: str, peer: str) -> List[Tuple[str, str]]:
        ports = [(device, i) for i in topology.linked_interfaces(device) if topology.peer(device, i)[0] == peer]
        return sorted(ports, key=lambda p: _name_key(p[1]))

    def add_rule(device: str, t: FiveTuple, egress: str):
        link_load[(device, egress)] += 1
        tables.setdefault(device, []).append(StaticRule(match=_exact_match(t), egress=egress))

    spines = [
        d.id for d in topology.of_kind(DeviceKind.SPINE)
        if all(ports_toward(d.id, leaf) for leaf in leaves)
    ]

    remote: List[Tuple[FlowRecord, str, Tuple[str, ...]]] = []
    for flow in flows:
        src_leaf, _ = neighbor(topology, flow.source_host, flow.source_interface)
        local_ports = ports_toward(src_leaf, flow.dest_host)
        if local_ports:
            _, port = _least_loaded(local_ports, link_load)
            add_rule(src_leaf, flow.tuple, port)
            continue
        dest_leaves = tuple(leaf for leaf in leaves if ports_toward(leaf, flow.dest_host))
        if not dest_leaves:
            raise InfeasibleBalance(f"{flow.dest_host} is not attached to any leaf")
        if not spines:
            raise InfeasibleBalance(f"no spine joins {src_leaf} and {', '.join(dest_leaves)}")
        remote.append((flow, src_leaf, dest_leaves))

    spine_of = _equitable_assignment([(src_leaf, group) for _, src_leaf, group in remote], spines)

    by_group: Dict[Tuple[str, ...], List[int]] = {}
    for i, (_, _, group) in enumerate(remote):
        by_group.setdefault(group, []).append(i)
    leaf_of: Dict[int, str] = {}
    for group, members in by_group.items():
        keys = [(spine_of[i], remote[i][0].dest_host) for i in members]
        leaf_of.update(zip(members, _equitable_assignment(keys, list(group))))

    for i, (flow, src_leaf, _) in enumerate(remote):
        spine, dst_leaf = spine_of[i], leaf_of[i]
        _, uplink = _least_loaded(ports_toward(src_leaf, spine), link_load)
        _, downlink = _least_loaded(ports_toward(spine, dst_leaf), link_load)
        _, final_port = _least_loaded(ports_toward(dst_leaf, flow.dest_host), link_load)
        add_rule(src_leaf, flow.tuple, uplink)
        add_rule(spine, flow.tuple, downlink)
        add_rule(dst_leaf, flow.tuple, final_port)

    logger.info(f"Built balanced static tables: {len(flows)} flows over {len(tables)} switches")
    return StaticTables(tables={d: tuple(rules) for d, rules in sorted(tables.items())})


# -------------------------------------------------
# FILES
# -------------------------------------------------

def static_tables_from_dict(raw, topology: Optional[Topology] = None) -> StaticTables:
    if not isinstance(raw, dict):
        raise ParseError("static tables document must be a JSON object")
    try:
        tables = StaticTables.model_validate({"tables": raw})
    except PydanticValidationError as e:
        raise ParseError(f"static tables do not match schema: {e}") from e
    if topology is not None:
        validate_static_tables(tables, topology)
    return tables


def validate_static_tables(tables: StaticTables, topology: Topology):
    for device, rules in tables.tables.items():
        dev = topology.get_device(device)
        if dev is None or not dev.kind.is_switch:
            raise ValidationError("static table for a device that is not a switch", device)
        for rule in rules:
            if dev.interface(rule.egress) is None or topology.peer(device, rule.egress) is None:
                raise ValidationError("egress is not a linked interface", f"{device}:{rule.egress}")

def load_static_tables(path, topology: Optional[Topology] = None) -> StaticTables:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"cannot read static tables {path}: {e}") from e
    tables = static_tables_from_dict(raw, topology)
    logger.info(f"Loaded static tables {path}: {sum(len(r) for r in tables.tables.values())} rules")
    return tables


def static_tables_to_dict(tables: StaticTables) -> dict:
    return {
        device: [rule.model_dump(mode="json", exclude_none=True) for rule in rules]
        for device, rules in tables.tables.items()
    }


def dump_static_tables(tables: StaticTables, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(static_tables_to_dict(tables), indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote static tables to {path}")
    return path

"""
--------------------------------------------------------------------
Purpose:
    Ground-truth forwarding function of the fabric switches.

What It Does:
    - Shortest-path candidate sets (candidate_egress).
    - FNV-1a based ECMP selection over a configurable field set, salted per
      device, with an optional reduced (outer IPs only) key.
    - First-match static tables and the balanced-table builder.
    - forward(): the single entry point used by switch agents and by the
      in-process oracle.
--------------------------------------------------------------------
"""
