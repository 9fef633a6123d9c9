# app/services/fabric.py

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import networkx as nx
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError as PydanticValidationError

from app.core.errors import ParseError, UnknownInterface, UnlinkedInterface, ValidationError
from app.utils.validators import is_valid_identifier

logger = logging.getLogger(__name__)

Endpoint = Tuple[str, str]  # (device id, interface name)

# -------------------------------------------------
# DOMAIN TYPES
# -------------------------------------------------

class DeviceKind(str, Enum):
    HOST = "host"
    LEAF = "leaf"
    SPINE = "spine"

    @property
    def is_switch(self) -> bool:
        return self is not DeviceKind.HOST


class Interface(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    speed_gbps: int = Field(gt=0)


class Device(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    id: str
    kind: DeviceKind
    rack: Optional[str] = None
    interfaces: Tuple[Interface, ...]

    def interface(self, name: str) -> Optional[Interface]:
        for iface in self.interfaces:
            if iface.name == name:
                return iface
        return None


class Link(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    a: Endpoint
    b: Endpoint

    def label(self) -> str:
        return f"{self.a[0]}:{self.a[1]}<->{self.b[0]}:{self.b[1]}"

    def unordered(self) -> frozenset:
        return frozenset((self.a, self.b))


class Topology(BaseModel):
    """
    The fabric graph. Immutable once built; the private indices below are
    derived from `devices`/`links` and only ever read afterwards.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    devices: Tuple[Device, ...]
    links: Tuple[Link, ...]

    _by_id: Dict[str, Device] = PrivateAttr(default_factory=dict)
    _peer: Dict[Endpoint, Endpoint] = PrivateAttr(default_factory=dict)
    _graph: Optional[nx.Graph] = PrivateAttr(default=None)
    _distances: Dict[str, Dict[str, int]] = PrivateAttr(default_factory=dict)

    def model_post_init(self, __context) -> None:
        self._by_id = {d.id: d for d in self.devices}
        for link in self.links:
            self._peer[link.a] = link.b
            self._peer[link.b] = link.a

    # --- lookups ---

    def get_device(self, device_id: str) -> Optional[Device]:
        return self._by_id.get(device_id)

    def device(self, device_id: str) -> Device:
        device = self._by_id.get(device_id)
        if device is None:
            raise KeyError(device_id)
        return device

    def has_device(self, device_id: str) -> bool:
        return device_id in self._by_id

    def of_kind(self, kind: DeviceKind) -> List[Device]:
        return sorted((d for d in self.devices if d.kind is kind), key=lambda d: d.id)

    def hosts(self) -> List[Device]:
        return self.of_kind(DeviceKind.HOST)

    def racks(self) -> List[str]:
        return sorted({d.rack for d in self.devices if d.rack is not None})

    def hosts_in_rack(self, rack: str) -> List[Device]:
        return [h for h in self.hosts() if h.rack == rack]

    def peer(self, device_id: str, interface: str) -> Optional[Endpoint]:
        return self._peer.get((device_id, interface))

    def linked_interfaces(self, device_id: str) -> List[str]:
        """Linked interface names of a device, in file order."""
        return [i.name for i in self.device(device_id).interfaces if (device_id, i.name) in self._peer]

    def directed_links(self) -> List[Tuple[Endpoint, Endpoint]]:
        out = []
        for link in self.links:
            out.append((link.a, link.b))
            out.append((link.b, link.a))
        return out

    # --- graph views ---

    def device_graph(self) -> nx.Graph:
        if self._graph is None:
            graph = nx.Graph()
            graph.add_nodes_from((d.id, {"kind": d.kind}) for d in self.devices)
            graph.add_edges_from((link.a[0], link.b[0]) for link in self.links)
            self._graph = graph
        return self._graph

    def distances_to(self, dst_host: str) -> Dict[str, int]:
        """
        Hop distance from every switch to `dst_host`. Other hosts are never
        transit nodes, so they are left out of the graph.
        """
        cached = self._distances.get(dst_host)
        if cached is not None:
            return cached
        if dst_host not in self._by_id:
            distances: Dict[str, int] = {}
        else:
            nodes = [d.id for d in self.devices if d.kind.is_switch] + [dst_host]
            subgraph = self.device_graph().subgraph(nodes)
            distances = dict(nx.single_source_shortest_path_length(subgraph, dst_host))
        self._distances[dst_host] = distances
        return distances


# -------------------------------------------------
# OPERATIONS
# -------------------------------------------------

def neighbor(topology: Topology, device: str, interface: str) -> Endpoint:
    """Opposite endpoint of the link wired to (device, interface)."""
    dev = topology.get_device(device)
    if dev is None or dev.interface(interface) is None:
        raise UnknownInterface(device, interface)
    peer = topology.peer(device, interface)
    if peer is None:
        raise UnlinkedInterface(device, interface)
    return peer


def topology_from_dict(raw) -> Topology:
    if not isinstance(raw, dict):
        raise ParseError("topology document must be a JSON object")
    try:
        topology = Topology.model_validate(raw)
    except PydanticValidationError as e:
        raise ParseError(f"topology does not match schema: {e}") from e
    validate_topology(topology)
    return topology


def load_topology(path) -> Topology:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"cannot read topology {path}: {e}") from e
    topology = topology_from_dict(raw)
    logger.info(f"Loaded topology {path}: {len(topology.devices)} devices, {len(topology.links)} links")
    return topology


def topology_to_dict(topology: Topology) -> dict:
    return {
        "devices": [d.model_dump(mode="json", exclude_none=True) for d in topology.devices],
        "links": [link.model_dump(mode="json") for link in topology.links],
    }


def dump_topology(topology: Topology, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(topology_to_dict(topology), indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote topology to {path}")
    return path


def validate_topology(topology: Topology):
    """Checks every Device/Link/Topology invariant; raises ValidationError naming the element."""
    if not topology.devices:
        raise ValidationError("topology has no devices", "devices")

    seen_ids = set()
    for device in topology.devices:
        if not is_valid_identifier(device.id):
            raise ValidationError("invalid device id", device.id or "<empty>")
        if device.id in seen_ids:
            raise ValidationError("duplicate device id", device.id)
        seen_ids.add(device.id)

        if not device.interfaces:
            raise ValidationError("device has no interfaces", device.id)
        names = set()
        for iface in device.interfaces:
            if not is_valid_identifier(iface.name):
                raise ValidationError("invalid interface name", f"{device.id}:{iface.name}")
            if iface.name in names:
                raise ValidationError("duplicate interface", f"{device.id}:{iface.name}")
            names.add(iface.name)

        if device.kind is DeviceKind.SPINE and device.rack is not None:
            raise ValidationError("spines carry no rack label", device.id)
        if device.kind is not DeviceKind.SPINE and not device.rack:
            raise ValidationError(f"{device.kind.value} requires a rack label", device.id)

    used = set()
    for link in topology.links:
        label = link.label()
        kinds = []
        speeds = []
        for endpoint in (link.a, link.b):
            dev = topology.get_device(endpoint[0])
            iface = dev.interface(endpoint[1]) if dev else None
            if iface is None:
                raise ValidationError(f"dangling endpoint {endpoint[0]}:{endpoint[1]}", label)
            if endpoint in used:
                raise ValidationError(f"endpoint {endpoint[0]}:{endpoint[1]} wired twice", label)
            used.add(endpoint)
            kinds.append(dev)
            speeds.append(iface.speed_gbps)

        pair = {kinds[0].kind, kinds[1].kind}
        if pair == {DeviceKind.HOST, DeviceKind.LEAF}:
            if kinds[0].rack != kinds[1].rack:
                raise ValidationError("host wired to a leaf of another rack", label)
        elif pair != {DeviceKind.LEAF, DeviceKind.SPINE}:
            raise ValidationError("links must join host-leaf or leaf-spine", label)
        if speeds[0] != speeds[1]:
            raise ValidationError("mismatched endpoint speeds", label)

    switches = [d.id for d in topology.devices if d.kind.is_switch]
    if any(d.kind is DeviceKind.SPINE for d in topology.devices):
        fabric = topology.device_graph().subgraph(switches)
        if not nx.is_connected(fabric):
            raise ValidationError("leaf-spine fabric is not connected", "links")


# -------------------------------------------------
# GENERATORS
# -------------------------------------------------

def _letters(n: int) -> List[str]:
    return [chr(ord("a") + i) for i in range(n)]


def generate_leaf_spine(
    racks: int = 2,
    hosts_per_rack: int = 8,
    leaves_per_rack: int = 2,
    spines: int = 4,
    host_links_per_leaf: int = 2,
    uplinks_per_spine: int = 4,
    speed_gbps: int = 100,
) -> Topology:
    """
    Builds a 2-tier Clos fabric. Every host is wired `host_links_per_leaf` times
    to each leaf of its rack; every leaf is wired `uplinks_per_spine` times to
    every spine.
    """
    if min(racks, hosts_per_rack, leaves_per_rack, host_links_per_leaf) < 1 or spines < 0:
        raise ValidationError("generator sizes must be positive", "generator")

    host_width = max(2, len(str(racks * hosts_per_rack - 1)))
    nics = host_links_per_leaf * leaves_per_rack
    host_ports = [f"nic{n // 2}-p{n % 2}" for n in range(nics)] if nics % 2 == 0 else [f"nic{n}" for n in range(nics)]
    host_suffix = _letters(host_links_per_leaf)
    uplink_suffix = _letters(uplinks_per_spine)

    devices: List[Device] = []
    links: List[Link] = []
    leaf_ids = []

    for r in range(racks):
        rack = f"rack-{r}"
        rack_leaves = [f"leaf-{r * leaves_per_rack + l}" for l in range(leaves_per_rack)]
        leaf_ids.extend((rack, leaf) for leaf in rack_leaves)
        rack_hosts = [f"host-{r * hosts_per_rack + h:0{host_width}d}" for h in range(hosts_per_rack)]

        for host in rack_hosts:
            devices.append(Device(
                id=host, kind=DeviceKind.HOST, rack=rack,
                interfaces=tuple(Interface(name=p, speed_gbps=speed_gbps) for p in host_ports),
            ))
            # port n goes to leaf (n mod leaves), so sorted ports alternate leaves
            for n, port in enumerate(host_ports):
                leaf = rack_leaves[n % leaves_per_rack]
                suffix = host_suffix[n // leaves_per_rack]
                links.append(Link(a=(host, port), b=(leaf, f"down-{host}-{suffix}")))

        for leaf in rack_leaves:
            ifaces = [f"down-{host}-{s}" for host in rack_hosts for s in host_suffix]
            ifaces += [f"uplink-s{s}-{u}" for s in range(spines) for u in uplink_suffix]
            devices.append(Device(
                id=leaf, kind=DeviceKind.LEAF, rack=rack,
                interfaces=tuple(Interface(name=i, speed_gbps=speed_gbps) for i in ifaces),
            ))

    for s in range(spines):
        spine = f"spine-{s}"
        ifaces = []
        for _, leaf in leaf_ids:
            leaf_no = leaf.split("-", 1)[1]
            for u in uplink_suffix:
                port = f"down-leaf-{leaf_no}-{u}"
                ifaces.append(port)
                links.append(Link(a=(leaf, f"uplink-s{s}-{u}"), b=(spine, port)))
        devices.append(Device(
            id=spine, kind=DeviceKind.SPINE,
            interfaces=tuple(Interface(name=i, speed_gbps=speed_gbps) for i in ifaces),
        ))

    topology = Topology(devices=tuple(devices), links=tuple(links))
    validate_topology(topology)
    logger.debug(f"Generated leaf-spine fabric: {racks} racks, {spines} spines, {len(links)} links")
    return topology


def generate_reference_testbed() -> Topology:
    """2 racks x (8 hosts, 2 leaves), 4 spines, 4x100G per host, 4 uplinks per leaf-spine pair."""
    return generate_leaf_spine(
        racks=2, hosts_per_rack=8, leaves_per_rack=2, spines=4,
        host_links_per_leaf=2, uplinks_per_spine=4, speed_gbps=100,
    )

"""
--------------------------------------------------------------------
Purpose:
    Physical network model of the fabric: devices, interfaces, links.

What It Does:
    - Loads and validates topology JSON files (unknown keys rejected).
    - Resolves link peers (neighbor) for hop-by-hop tracing.
    - Computes hop distances toward a destination host (networkx) for the
      shortest-path candidate sets of the routing module.
    - Generates parametric leaf-spine fabrics and the 16-server/8-switch
      reference testbed.

Used By:
    - Every other service module; the CLI `gen topology` command.
--------------------------------------------------------------------
"""
