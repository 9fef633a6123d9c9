# tests/test_routing.py

import random
import struct
from collections import Counter, defaultdict

import pytest
from pydantic import ValidationError as PydanticValidationError

from app.core.errors import NoMatchingRule, NoRoute, ValidationError
from app.services.analysis import Layer, link_histogram
from app.services.flowgen import FiveTuple, PairSpec, WorkloadSpec, generate_flows, make_bipartite_workload
from app.services.routing import (
    EcmpConfig,
    FieldSet,
    RoutingMode,
    RoutingPolicy,
    RuleMatch,
    StaticRule,
    StaticTables,
    build_balanced_static_tables,
    candidate_egress,
    forward,
    hash_key,
    hash_select,
    static_select,
    static_tables_from_dict,
    static_tables_to_dict,
    validate_static_tables,
)
from app.services.tracer import oracle_paths

TUPLE = FiveTuple(src_ip="10.0.0.1", dst_ip="10.1.0.1", src_port=50000, dst_port=4791, protocol="udp")


def test_leaf_candidates_toward_remote_rack(topology):
    candidates = candidate_egress(topology, "leaf-0", "host-08", "down-host-00-a")
    assert len(candidates) == 16
    assert all(c.startswith("uplink-s") for c in candidates)
    assert candidates == sorted(candidates, key=str.encode)


def test_spine_and_destination_leaf_candidates(topology):
    spine = candidate_egress(topology, "spine-0", "host-08", "down-leaf-0-a")
    assert spine == [f"down-leaf-{l}-{u}" for l in (2, 3) for u in "abcd"]
    assert candidate_egress(topology, "leaf-2", "host-08", "uplink-s0-a") == ["down-host-08-a", "down-host-08-b"]


def test_intra_rack_candidates_stay_local(topology):
    assert candidate_egress(topology, "leaf-0", "host-01", "down-host-00-a") == ["down-host-01-a", "down-host-01-b"]


def test_no_route_from_host_or_to_unknown_host(topology):
    with pytest.raises(NoRoute):
        candidate_egress(topology, "host-00", "host-08", None)
    with pytest.raises(NoRoute):
        candidate_egress(topology, "leaf-0", "host-99", None)


def test_hash_key_layout():
    assert len(hash_key(TUPLE, FieldSet.FULL_FIVE_TUPLE)) == 13
    assert len(hash_key(TUPLE, FieldSet.REDUCED_OUTER)) == 8
    assert hash_key(TUPLE, FieldSet.REDUCED_OUTER, "p1").endswith(b"p1")


def test_hash_select_is_deterministic(topology):
    config = EcmpConfig(seed=3)
    candidates = candidate_egress(topology, "leaf-0", "host-08", None)
    picks = {hash_select(candidates, TUPLE, None, config, "leaf-0") for _ in range(5)}
    assert len(picks) == 1


def test_full_tuple_hashing_spreads_flows(topology, bipartite, ecmp_policy):
    uplinks = {
        (p.hops[1].device, p.hops[1].egress)
        for p in oracle_paths(bipartite, topology, ecmp_policy)
    }
    assert len(uplinks) > 40  # of 64 leaf uplinks


def test_reduced_outer_collapses_each_pair_onto_one_uplink_per_leaf(topology, bipartite):
    policy = RoutingPolicy.from_ecmp(EcmpConfig(field_set=FieldSet.REDUCED_OUTER, seed=9))
    used = defaultdict(set)
    for path in oracle_paths(bipartite, topology, policy):
        leaf_hop = path.hops[1]
        used[(path.flow.source_host, path.flow.dest_host, leaf_hop.device)].add(leaf_hop.egress)
    assert used
    assert all(len(uplinks) == 1 for uplinks in used.values())


def test_static_first_match_wins():
    tables = StaticTables(tables={"leaf-0": (
        StaticRule(match=RuleMatch(dst_port=(4791, 4791)), egress="uplink-s1-a"),
        StaticRule(match=RuleMatch(), egress="uplink-s0-a"),
    )})
    assert static_select(tables, "leaf-0", TUPLE) == "uplink-s1-a"
    other = TUPLE.model_copy(update={"dst_port": 5201})
    assert static_select(tables, "leaf-0", other) == "uplink-s0-a"


def test_static_no_match():
    tables = StaticTables(tables={"leaf-0": (StaticRule(match=RuleMatch(src_port=(1, 2)), egress="x"),)})
    with pytest.raises(NoMatchingRule):
        static_select(tables, "leaf-0", TUPLE)
    with pytest.raises(NoMatchingRule):
        static_select(tables, "spine-0", TUPLE)


def test_static_egress_must_be_linked(topology):
    policy = RoutingPolicy.from_tables(StaticTables(tables={"leaf-0": (StaticRule(egress="bogus"),)}))
    with pytest.raises(NoRoute):
        forward(topology, policy, "leaf-0", None, TUPLE, "host-08")


def test_policy_needs_exactly_one_mode():
    with pytest.raises(PydanticValidationError):
        RoutingPolicy(mode=RoutingMode.ECMP)
    with pytest.raises(PydanticValidationError):
        RoutingPolicy(mode=RoutingMode.STATIC, ecmp=EcmpConfig(), tables=StaticTables())


def test_static_tables_from_json(topology):
    raw = {"leaf-0": [{"match": {"dst_ip": "10.1.0.1", "dst_port": [4791, 4791]}, "egress": "uplink-s2-b"}]}
    tables = static_tables_from_dict(raw, topology)
    assert static_select(tables, "leaf-0", TUPLE) == "uplink-s2-b"
    with pytest.raises(ValidationError):
        static_tables_from_dict({"host-00": [{"egress": "nic0-p0"}]}, topology)


def test_balanced_tables_validate_and_serialize(topology, bipartite):
    flows = generate_flows(bipartite, topology)
    tables = build_balanced_static_tables(topology, flows)
    validate_static_tables(tables, topology)
    assert static_tables_from_dict(static_tables_to_dict(tables), topology) == tables


def test_balanced_tables_cover_every_flow(topology):
    workload = make_bipartite_workload(topology, 4, seed=21)
    policy = RoutingPolicy.from_tables(build_balanced_static_tables(topology, generate_flows(workload, topology)))
    paths = oracle_paths(workload, topology, policy)
    assert len(paths) == workload.total_flows()
    assert all(p.complete and p.switch_count() == 3 for p in paths)


# --- ECMP hash distribution and reference indices ---

def _fnv1a(data):
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) % 2**64
    return h


def _splitmix(x):
    z = (x + 0x9E3779B97F4A7C15) % 2**64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % 2**64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % 2**64
    return z ^ (z >> 31)


def _reference_index(t, n, device, seed, ingress=b""):
    key = struct.pack(">4s4sHHB", t.src_ip.packed, t.dst_ip.packed, t.src_port, t.dst_port, 17) + ingress
    salt = _splitmix((seed % 2**64) ^ _fnv1a(device.encode()))
    return _splitmix(_fnv1a(key) ^ salt) % n


def test_hash_select_matches_reference_indices(topology):
    candidates = candidate_egress(topology, "leaf-0", "host-08", None)
    for seed in (0, 5, -1):
        for src_port in (49152, 50000, 61234, 65535):
            t = TUPLE.model_copy(update={"src_port": src_port})
            expected = _reference_index(t, 16, "leaf-0", seed)
            assert hash_select(candidates, t, None, EcmpConfig(seed=seed), "leaf-0") == candidates[expected]

    config = EcmpConfig(seed=5, include_ingress=True)
    expected = _reference_index(TUPLE, 16, "leaf-0", 5, b"down-host-00-a")
    assert hash_select(candidates, TUPLE, "down-host-00-a", config, "leaf-0") == candidates[expected]


def test_hash_select_spreads_uniformly_over_sixteen_candidates(topology):
    candidates = candidate_egress(topology, "leaf-0", "host-08", None)
    config = EcmpConfig(seed=13)
    rng = random.Random(3)
    counts = Counter()
    samples = 12000
    for _ in range(samples):
        t = FiveTuple(
            src_ip=f"10.0.{rng.randrange(8)}.1", dst_ip=f"10.1.{rng.randrange(8)}.1",
            src_port=rng.randint(49152, 65535), dst_port=rng.choice((4791, 5201)),
            protocol="udp",
        )
        counts[hash_select(candidates, t, None, config, "leaf-0")] += 1
    assert set(counts) == set(candidates)
    assert all(0.04 <= c / samples <= 0.09 for c in counts.values())


# --- balanced static tables: per-layer spread ---

RACK_0 = [f"host-{h:02d}" for h in range(8)]
RACK_1 = [f"host-{h:02d}" for h in range(8, 16)]


def _balanced_histogram(topology, workload):
    tables = build_balanced_static_tables(topology, generate_flows(workload, topology))
    paths = oracle_paths(workload, topology, RoutingPolicy.from_tables(tables))
    assert len(paths) == workload.total_flows()
    return link_histogram(paths, topology)


def _spread_by(links, key):
    groups = defaultdict(list)
    for link in links:
        groups[key(link)].append(link.flow_count)
    return {group: max(loads) - min(loads) for group, loads in groups.items()}


def test_flows_into_one_rack_fill_its_downlinks_evenly(topology):
    workload = WorkloadSpec(pairs=(
        PairSpec(src="host-15", dst="host-06", flows=2),
        PairSpec(src="host-08", dst="host-02", flows=6),
        PairSpec(src="host-12", dst="host-07", flows=8),
        PairSpec(src="host-13", dst="host-03", flows=5),
        PairSpec(src="host-09", dst="host-01", flows=6),
    ))
    histogram = _balanced_histogram(topology, workload)
    downlinks = histogram[Layer.SPINE_TO_LEAF]
    into_rack_0 = [l.flow_count for l in downlinks if topology.device(l.to_device).rack == "rack-0"]
    assert len(into_rack_0) == 32
    assert sum(into_rack_0) == 27
    assert max(l.flow_count for l in downlinks) - min(l.flow_count for l in downlinks) <= 1


@pytest.mark.parametrize("seed", range(30))
def test_random_inter_rack_workloads_stay_within_one_flow(topology, seed):
    rng = random.Random(seed)
    crossing = [(a, b) for a in RACK_0 for b in RACK_1] + [(b, a) for a in RACK_0 for b in RACK_1]
    pairs = rng.sample(crossing, rng.randint(1, 12))
    workload = WorkloadSpec(
        pairs=tuple(PairSpec(src=s, dst=d, flows=rng.randint(1, 20)) for s, d in pairs),
        seed=seed,
    )
    histogram = _balanced_histogram(topology, workload)

    per_source_leaf = _spread_by(histogram[Layer.LEAF_TO_SPINE], lambda l: l.from_device)
    per_dest_rack = _spread_by(histogram[Layer.SPINE_TO_LEAF], lambda l: topology.device(l.to_device).rack)
    per_dest_host = _spread_by(histogram[Layer.LEAF_TO_HOST], lambda l: l.to_device)
    assert max(per_source_leaf.values()) <= 1
    assert max(per_dest_rack.values()) <= 1
    assert max(per_dest_host.values()) <= 1


def test_one_flow_over_a_full_layer_lands_on_a_single_link(topology):
    # 65 flows crossing each 64-link leaf-spine layer
    workload = WorkloadSpec(pairs=(
        PairSpec(src="host-08", dst="host-00", flows=33),
        PairSpec(src="host-00", dst="host-08", flows=32),
    ))
    histogram = _balanced_histogram(topology, workload)
    for layer in (Layer.LEAF_TO_SPINE, Layer.SPINE_TO_LEAF):
        loads = sorted(l.flow_count for l in histogram[layer])
        assert loads == [1] * 63 + [2]
