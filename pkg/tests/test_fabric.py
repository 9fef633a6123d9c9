# tests/test_fabric.py

import pytest

from app.core.errors import ParseError, UnknownInterface, UnlinkedInterface, ValidationError
from app.services.fabric import (
    Device,
    DeviceKind,
    Interface,
    Link,
    Topology,
    dump_topology,
    load_topology,
    neighbor,
    topology_from_dict,
    topology_to_dict,
    validate_topology,
)


def _iface(name, speed=100):
    return Interface(name=name, speed_gbps=speed)


def _pair_topology(host_rack="rack-0", leaf_rack="rack-0", host_speed=100, extra_host_ifaces=()):
    host = Device(id="h1", kind=DeviceKind.HOST, rack=host_rack,
                  interfaces=(_iface("eth0", host_speed),) + tuple(_iface(n) for n in extra_host_ifaces))
    leaf = Device(id="l1", kind=DeviceKind.LEAF, rack=leaf_rack, interfaces=(_iface("p1"),))
    return Topology(devices=(host, leaf), links=(Link(a=("h1", "eth0"), b=("l1", "p1")),))


def test_reference_testbed_shape(topology):
    assert len(topology.hosts()) == 16
    assert len(topology.of_kind(DeviceKind.LEAF)) == 4
    assert len(topology.of_kind(DeviceKind.SPINE)) == 4
    # 16 hosts x 4 NIC ports + 4 leaves x 4 spines x 4 uplinks
    assert len(topology.links) == 128
    assert topology.racks() == ["rack-0", "rack-1"]


def test_every_host_is_dual_homed(topology):
    for host in topology.hosts():
        leaves = {neighbor(topology, host.id, i)[0] for i in topology.linked_interfaces(host.id)}
        assert len(leaves) == 2
        assert all(topology.device(l).rack == host.rack for l in leaves)


def test_neighbor_is_symmetric(topology):
    for (a, b) in topology.directed_links():
        assert neighbor(topology, *a) == b
        assert neighbor(topology, *b) == a


def test_neighbor_errors():
    topology = _pair_topology(extra_host_ifaces=("eth1",))
    with pytest.raises(UnknownInterface):
        neighbor(topology, "h1", "eth9")
    with pytest.raises(UnlinkedInterface):
        neighbor(topology, "h1", "eth1")
    assert neighbor(topology, "h1", "eth0") == ("l1", "p1")


def test_validation_rejects_cross_rack_host_link():
    with pytest.raises(ValidationError):
        validate_topology(_pair_topology(leaf_rack="rack-1"))


def test_validation_rejects_speed_mismatch():
    with pytest.raises(ValidationError):
        validate_topology(_pair_topology(host_speed=25))


def test_validation_rejects_duplicate_ids():
    host = Device(id="x", kind=DeviceKind.HOST, rack="r", interfaces=(_iface("eth0"),))
    leaf = Device(id="x", kind=DeviceKind.LEAF, rack="r", interfaces=(_iface("p1"),))
    with pytest.raises(ValidationError) as info:
        validate_topology(Topology(devices=(host, leaf), links=()))
    assert info.value.element == "x"


def test_validation_rejects_endpoint_wired_twice():
    host = Device(id="h1", kind=DeviceKind.HOST, rack="r", interfaces=(_iface("eth0"),))
    leaf = Device(id="l1", kind=DeviceKind.LEAF, rack="r", interfaces=(_iface("p1"), _iface("p2")))
    links = (Link(a=("h1", "eth0"), b=("l1", "p1")), Link(a=("h1", "eth0"), b=("l1", "p2")))
    with pytest.raises(ValidationError):
        validate_topology(Topology(devices=(host, leaf), links=links))


def test_unknown_keys_are_a_parse_error():
    raw = topology_to_dict(_pair_topology())
    raw["devices"][0]["colour"] = "blue"
    with pytest.raises(ParseError):
        topology_from_dict(raw)


def test_dump_and_load(tmp_path, topology):
    path = dump_topology(topology, tmp_path / "topology.json")
    loaded = load_topology(path)
    assert topology_to_dict(loaded) == topology_to_dict(topology)


def test_load_missing_file_is_parse_error(tmp_path):
    with pytest.raises(ParseError):
        load_topology(tmp_path / "nope.json")


def test_distances_ignore_transit_hosts(topology):
    distances = topology.distances_to("host-08")
    assert distances["host-08"] == 0
    assert distances["leaf-2"] == 1 and distances["leaf-3"] == 1
    assert all(distances[f"spine-{s}"] == 2 for s in range(4))
    assert distances["leaf-0"] == 3
    assert "host-00" not in distances
