# tests/test_analysis.py

import csv

import numpy as np
import pytest

from app.core.errors import IncompletePath, ShapeMismatch, ZeroIdeal
from app.services.analysis import (
    Layer,
    analyze,
    balls_into_bins_fim,
    compare,
    dump_json,
    fim,
    link_histogram,
    load_analysis,
    maxmin_throughput,
    report,
    write_comparison_csv,
    write_links_csv,
    write_throughput_csv,
)
from app.services.flowgen import PairSpec, WorkloadSpec, make_bipartite_workload
from app.services.routing import EcmpConfig, RoutingPolicy
from app.services.tracer import oracle_paths


def _tiny_paths(tiny_topology, pairs):
    workload = WorkloadSpec(pairs=tuple(PairSpec(src=s, dst=d, flows=1) for s, d in pairs), seed=1)
    return oracle_paths(workload, tiny_topology, RoutingPolicy.from_ecmp(EcmpConfig()))


def _rates_by_pair(throughput):
    return {(p.src, p.dst): p.rate_gbps for p in throughput.pairs}


# --- FIM ---

def test_fim_of_a_perfect_spread_is_zero():
    assert fim([4, 4, 4, 4], 4.0) == 0.0


def test_fim_is_mean_absolute_percentage_deviation():
    assert fim([2, 6, 4, 4], 4.0) == pytest.approx(25.0)


def test_fim_needs_a_positive_ideal():
    with pytest.raises(ZeroIdeal):
        fim([0, 0], 0.0)


def test_single_flow_leaf_spine_imbalance(topology, ecmp_policy):
    workload = WorkloadSpec(pairs=(PairSpec(src="host-00", dst="host-08", flows=1),))
    imbalance = report(oracle_paths(workload, topology, ecmp_policy), topology)
    # one link at 1 flow, 63 idle, ideal 1/64
    assert imbalance.layers[Layer.LEAF_TO_SPINE].fim == pytest.approx(196.875)


def test_balanced_static_tables_are_perfectly_even(topology, bipartite, static_policy):
    imbalance = report(oracle_paths(bipartite, topology, static_policy), topology)
    for layer in (Layer.LEAF_TO_SPINE, Layer.SPINE_TO_LEAF):
        assert {l.flow_count for l in imbalance.layers[layer].links} == {4}
    assert imbalance.aggregate_fim == pytest.approx(0.0)
    assert imbalance.leaf_spine_fim == pytest.approx(0.0)


def test_histogram_conserves_flows(topology, bipartite, ecmp_policy):
    paths = oracle_paths(bipartite, topology, ecmp_policy)
    histogram = link_histogram(paths, topology)
    assert len(histogram[Layer.HOST_TO_LEAF]) == 64
    assert len(histogram[Layer.LEAF_TO_SPINE]) == 64
    for layer in Layer:
        assert sum(l.flow_count for l in histogram[layer]) == 256


def test_intra_rack_traffic_skips_the_spine_layers(topology, ecmp_policy):
    workload = WorkloadSpec(pairs=(PairSpec(src="host-00", dst="host-01", flows=8),))
    imbalance = report(oracle_paths(workload, topology, ecmp_policy), topology)
    assert imbalance.layers[Layer.LEAF_TO_SPINE].fim is None
    assert imbalance.layers[Layer.HOST_TO_LEAF].flows == 8
    assert imbalance.leaf_spine_fim is None
    assert imbalance.aggregate_fim is not None


def test_no_paths_means_no_imbalance(topology):
    imbalance = report([], topology)
    assert all(lr.fim is None for lr in imbalance.layers.values())
    assert imbalance.aggregate_fim is None
    assert imbalance.total_flows == 0


def test_incomplete_paths_are_rejected(topology, ecmp_policy):
    workload = WorkloadSpec(pairs=(PairSpec(src="host-00", dst="host-08", flows=1),))
    path = oracle_paths(workload, topology, ecmp_policy)[0]
    broken = path.model_copy(update={"complete": False, "hops": path.hops[:2]})
    with pytest.raises(IncompletePath):
        report([broken], topology)


def test_balls_into_bins_reference():
    values = balls_into_bins_fim(256, 64, trials=500, seed=1)
    assert values.shape == (500,)
    assert 30.0 < values.mean() < 48.0


def test_ecmp_imbalance_tracks_uniform_hashing(topology):
    expected = balls_into_bins_fim(256, 64, trials=2000, seed=7).mean()
    samples = []
    for seed in range(100):
        workload = make_bipartite_workload(topology, 16, seed=seed)
        policy = RoutingPolicy.from_ecmp(EcmpConfig(seed=seed))
        samples.append(report(oracle_paths(workload, topology, policy), topology).leaf_spine_fim)
    observed = float(np.mean(samples))
    assert observed == pytest.approx(expected, rel=0.2)
    assert min(samples) > 0.0


# --- max-min ---

def test_two_flows_share_a_bottleneck(tiny_topology):
    throughput = maxmin_throughput(_tiny_paths(tiny_topology, [("host-00", "host-02"), ("host-01", "host-02")]), tiny_topology)
    assert [f.rate_gbps for f in throughput.flows] == pytest.approx([50.0, 50.0])


def test_lone_flow_gets_the_line_rate(tiny_topology):
    throughput = maxmin_throughput(_tiny_paths(tiny_topology, [("host-00", "host-01")]), tiny_topology)
    assert throughput.flows[0].rate_gbps == pytest.approx(100.0)
    assert all(l.load_gbps <= l.capacity_gbps for l in throughput.links)


def test_unshared_flow_is_not_held_back(tiny_topology):
    pairs = [("host-00", "host-02"), ("host-01", "host-02"), ("host-02", "host-00")]
    rates = _rates_by_pair(maxmin_throughput(_tiny_paths(tiny_topology, pairs), tiny_topology))
    assert rates == pytest.approx({("host-00", "host-02"): 50.0, ("host-01", "host-02"): 50.0,
                                   ("host-02", "host-00"): 100.0})


def test_maxmin_allocation_is_feasible_and_bottlenecked(topology):
    for seed in range(5):
        workload = make_bipartite_workload(topology, 4, seed=seed)
        paths = oracle_paths(workload, topology, RoutingPolicy.from_ecmp(EcmpConfig(seed=seed)))
        throughput = maxmin_throughput(paths, topology)
        loads = {l.link: l for l in throughput.links}
        assert all(l.load_gbps <= l.capacity_gbps * (1 + 1e-9) for l in loads.values())

        rate = {f.flow: f.rate_gbps for f in throughput.flows}
        on_link = {}
        for path in paths:
            for here, there in zip(path.hops, path.hops[1:]):
                label = f"{here.device}:{here.egress}->{there.device}:{there.ingress}"
                on_link.setdefault(label, []).append(path.flow.tuple.wire())
        # every flow crosses a saturated link on which nobody gets more than it does
        for path in paths:
            mine = rate[path.flow.tuple.wire()]
            bottlenecks = [
                label for label, flows in on_link.items()
                if path.flow.tuple.wire() in flows
                and loads[label].load_gbps >= loads[label].capacity_gbps * (1 - 1e-6)
                and max(rate[f] for f in flows) <= mine * (1 + 1e-6)
            ]
            assert bottlenecks


# --- comparison ---

def test_run_compared_with_itself_is_a_tie(topology, bipartite, ecmp_policy):
    analysis = analyze(oracle_paths(bipartite, topology, ecmp_policy), topology, "ecmp")
    comparison = compare(analysis, analysis)
    assert comparison.aggregate_fim_delta == 0.0
    assert comparison.leaf_spine_fim_delta == 0.0
    assert set(comparison.winners.values()) == {"tie"}


def test_balanced_static_beats_ecmp(topology, bipartite, ecmp_policy, static_policy):
    ecmp = analyze(oracle_paths(bipartite, topology, ecmp_policy), topology, "ecmp")
    static = analyze(oracle_paths(bipartite, topology, static_policy), topology, "static")
    comparison = compare(ecmp, static)
    assert comparison.leaf_spine_fim_delta < 0
    assert comparison.winners["leaf_spine_fim"] == "b"
    assert comparison.winners["aggregate_fim"] == "b"
    assert comparison.pair_throughput[1].min >= comparison.pair_throughput[0].min


def test_different_workloads_cannot_be_compared(topology, ecmp_policy):
    small = analyze(oracle_paths(make_bipartite_workload(topology, 1, seed=0), topology, ecmp_policy), topology)
    large = analyze(oracle_paths(make_bipartite_workload(topology, 2, seed=0), topology, ecmp_policy), topology)
    with pytest.raises(ShapeMismatch):
        compare(small, large)


# --- files ---

def _header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def test_output_files(tmp_path, topology, bipartite, ecmp_policy, static_policy):
    ecmp = analyze(oracle_paths(bipartite, topology, ecmp_policy), topology, "ecmp")
    static = analyze(oracle_paths(bipartite, topology, static_policy), topology, "static")

    assert load_analysis(dump_json(ecmp, tmp_path / "analysis.json")) == ecmp
    assert _header(write_links_csv(ecmp.imbalance, tmp_path / "links.csv")) == [
        "from", "to", "layer", "flow_count", "ideal", "deviation_pct"]
    assert _header(write_throughput_csv(ecmp.throughput, tmp_path / "throughput.csv")) == [
        "src", "dst", "flows", "rate_gbps"]
    assert _header(write_comparison_csv(compare(ecmp, static), tmp_path / "comparison.csv")) == [
        "metric", "ecmp", "static", "winner"]

    with open(tmp_path / "links.csv", newline="") as fh:
        assert sum(1 for _ in fh) == 1 + 4 * 64
