# app/services/analysis.py

import csv
import json
import logging
from collections import Counter
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.core.errors import IncompletePath, ParseError, ShapeMismatch, ZeroIdeal
from app.services.fabric import DeviceKind, Endpoint, Topology
from app.services.tracer import TracedPath

logger = logging.getLogger(__name__)

# Residual capacity below this is a saturated link
SATURATION_EPS = 1e-9

# -------------------------------------------------
# DOMAIN TYPES
# -------------------------------------------------

class Layer(str, Enum):
    HOST_TO_LEAF = "host_to_leaf"
    LEAF_TO_SPINE = "leaf_to_spine"
    SPINE_TO_LEAF = "spine_to_leaf"
    LEAF_TO_HOST = "leaf_to_host"


LAYER_OF = {
    (DeviceKind.HOST, DeviceKind.LEAF): Layer.HOST_TO_LEAF,
    (DeviceKind.LEAF, DeviceKind.SPINE): Layer.LEAF_TO_SPINE,
    (DeviceKind.SPINE, DeviceKind.LEAF): Layer.SPINE_TO_LEAF,
    (DeviceKind.LEAF, DeviceKind.HOST): Layer.LEAF_TO_HOST,
}
LEAF_SPINE_SCOPE = (Layer.LEAF_TO_SPINE, Layer.SPINE_TO_LEAF)


class DirectedLinkLoad(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    from_device: str
    from_interface: str
    to_device: str
    to_interface: str
    layer: Layer
    flow_count: int = Field(ge=0)
    capacity_gbps: float

    def label(self) -> str:
        return f"{self.from_device}:{self.from_interface}->{self.to_device}:{self.to_interface}"


class LayerReport(BaseModel):
    layer: Layer
    links: List[DirectedLinkLoad]
    flows: int
    ideal_flows: float
    fim: Optional[float] = None  # absent when the layer carries no traffic


class ImbalanceReport(BaseModel):
    layers: Dict[Layer, LayerReport]
    aggregate_fim: Optional[float] = None
    leaf_spine_fim: Optional[float] = None
    total_flows: int = 0


class FlowRate(BaseModel):
    src: str
    dst: str
    flow: str  # wire form of the 5-tuple
    rate_gbps: float


class PairRate(BaseModel):
    src: str
    dst: str
    flows: int
    rate_gbps: float


class LinkUtilization(BaseModel):
    link: str
    layer: Layer
    load_gbps: float
    capacity_gbps: float

    @property
    def utilization(self) -> float:
        return self.load_gbps / self.capacity_gbps


class ThroughputReport(BaseModel):
    flows: List[FlowRate] = Field(default_factory=list)
    pairs: List[PairRate] = Field(default_factory=list)
    links: List[LinkUtilization] = Field(default_factory=list)


class RunAnalysis(BaseModel):
    """Both reports for one run, the unit compared by `compare`."""
    label: str
    imbalance: ImbalanceReport
    throughput: ThroughputReport


# -------------------------------------------------
# HISTOGRAMS AND FIM
# -------------------------------------------------

def _layer(topology: Topology, src: Endpoint, dst: Endpoint) -> Optional[Layer]:
    return LAYER_OF.get((topology.device(src[0]).kind, topology.device(dst[0]).kind))


def _capacity(topology: Topology, src: Endpoint, dst: Endpoint) -> float:
    a = topology.device(src[0]).interface(src[1])
    b = topology.device(dst[0]).interface(dst[1])
    return float(min(a.speed_gbps, b.speed_gbps))


def _path_links(path: TracedPath) -> List[Tuple[Endpoint, Endpoint]]:
    if not path.complete:
        raise IncompletePath(f"path of {path.flow.tuple.wire()} is incomplete")
    hops = path.hops
    return [
        ((hops[k].device, hops[k].egress), (hops[k + 1].device, hops[k + 1].ingress))
        for k in range(len(hops) - 1)
    ]


def link_histogram(paths: Sequence[TracedPath], topology: Topology) -> Dict[Layer, List[DirectedLinkLoad]]:
    """Per-layer flow counts on every directed link, zero-count links included."""
    counts: Counter = Counter()
    for path in paths:
        for link in _path_links(path):
            counts[link] += 1

    histogram: Dict[Layer, List[DirectedLinkLoad]] = {layer: [] for layer in Layer}
    for src, dst in sorted(topology.directed_links()):
        layer = _layer(topology, src, dst)
        if layer is None:
            continue
        histogram[layer].append(DirectedLinkLoad(
            from_device=src[0], from_interface=src[1], to_device=dst[0], to_interface=dst[1],
            layer=layer, flow_count=counts[(src, dst)], capacity_gbps=_capacity(topology, src, dst),
        ))
    return histogram


def fim(actual: Sequence[float], ideal: float) -> float:
    """Mean absolute percentage deviation of per-link flow counts from `ideal`."""
    if ideal <= 0:
        raise ZeroIdeal("ideal flow count is zero, imbalance is undefined")
    values = np.asarray(actual, dtype=float)
    if values.size == 0:
        raise ZeroIdeal("no links in scope")
    return float(np.mean(np.abs(values - ideal) / ideal) * 100.0)


def _scoped_fim(layer_reports: List[LayerReport]) -> Optional[float]:
    deviations = []
    for lr in layer_reports:
        if lr.fim is None:
            continue
        counts = np.array([l.flow_count for l in lr.links], dtype=float)
        deviations.append(np.abs(counts - lr.ideal_flows) / lr.ideal_flows)
    if not deviations:
        return None
    return float(np.mean(np.concatenate(deviations)) * 100.0)


def report(paths: Sequence[TracedPath], topology: Topology) -> ImbalanceReport:
    histogram = link_histogram(paths, topology)
    layers: Dict[Layer, LayerReport] = {}
    for layer, links in histogram.items():
        flows = sum(l.flow_count for l in links)
        ideal = flows / len(links) if links else 0.0
        layer_fim = fim([l.flow_count for l in links], ideal) if flows else None
        layers[layer] = LayerReport(layer=layer, links=links, flows=flows, ideal_flows=ideal, fim=layer_fim)

    result = ImbalanceReport(
        layers=layers,
        aggregate_fim=_scoped_fim(list(layers.values())),
        leaf_spine_fim=_scoped_fim([layers[l] for l in LEAF_SPINE_SCOPE]),
        total_flows=len(paths),
    )
    logger.debug(f"Imbalance over {len(paths)} flows: aggregate={result.aggregate_fim} "
                 f"leaf_spine={result.leaf_spine_fim}")
    return result


def balls_into_bins_fim(balls: int, bins: int, trials: int, seed: int = 0) -> np.ndarray:
    """FIM of `balls` flows hashed independently and uniformly onto `bins` links, one value per trial."""
    rng = np.random.default_rng(seed)
    ideal = balls / bins
    assignments = rng.integers(0, bins, size=(trials, balls))
    counts = np.stack([np.bincount(row, minlength=bins) for row in assignments])
    return np.mean(np.abs(counts - ideal) / ideal, axis=1) * 100.0


# -------------------------------------------------
# MAX-MIN THROUGHPUT
# -------------------------------------------------

def maxmin_throughput(paths: Sequence[TracedPath], topology: Topology) -> ThroughputReport:
    """
    Progressive filling: raise every unfrozen flow's rate together until a
    link saturates, freeze the flows on it, repeat.
    """
    flow_links = [_path_links(p) for p in paths]
    link_ids: Dict[Tuple[Endpoint, Endpoint], int] = {}
    for links in flow_links:
        for link in links:
            link_ids.setdefault(link, len(link_ids))

    n_links, n_flows = len(link_ids), len(paths)
    incidence = np.zeros((n_links, n_flows), dtype=float)
    for f, links in enumerate(flow_links):
        for link in links:
            incidence[link_ids[link], f] = 1.0
    ordered_links = sorted(link_ids, key=link_ids.get)
    capacity = np.array([_capacity(topology, *link) for link in ordered_links], dtype=float)

    rates = np.zeros(n_flows)
    frozen = np.zeros(n_flows, dtype=bool)
    frozen[incidence.sum(axis=0) == 0] = True
    while not frozen.all():
        active = incidence[:, ~frozen].sum(axis=1)
        residual = capacity - incidence @ rates
        loaded = active > 0
        delta = np.min(residual[loaded] / active[loaded])
        rates[~frozen] += delta
        residual = capacity - incidence @ rates
        saturated = loaded & (residual <= SATURATION_EPS * capacity)
        frozen |= incidence[saturated].sum(axis=0) > 0

    flow_rates = [
        FlowRate(src=p.flow.source_host, dst=p.flow.dest_host, flow=p.flow.tuple.wire(), rate_gbps=float(r))
        for p, r in zip(paths, rates)
    ]
    per_pair: Dict[Tuple[str, str], List[float]] = {}
    for fr in flow_rates:
        per_pair.setdefault((fr.src, fr.dst), []).append(fr.rate_gbps)
    pairs = [
        PairRate(src=src, dst=dst, flows=len(values), rate_gbps=float(np.sum(values)))
        for (src, dst), values in sorted(per_pair.items())
    ]
    load = incidence @ rates
    links = [
        LinkUtilization(
            link=f"{a[0]}:{a[1]}->{b[0]}:{b[1]}",
            layer=_layer(topology, a, b),
            load_gbps=float(load[i]),
            capacity_gbps=float(capacity[i]),
        )
        for i, (a, b) in enumerate(ordered_links)
    ]
    return ThroughputReport(flows=flow_rates, pairs=pairs, links=links)


# -------------------------------------------------
# COMPARISON
# -------------------------------------------------

class Quantiles(BaseModel):
    min: float
    median: float
    max: float


class Comparison(BaseModel):
    a: str
    b: str
    layer_fim: Dict[Layer, Tuple[Optional[float], Optional[float]]]
    aggregate_fim: Tuple[Optional[float], Optional[float]]
    aggregate_fim_delta: Optional[float]
    leaf_spine_fim: Tuple[Optional[float], Optional[float]]
    leaf_spine_fim_delta: Optional[float]
    pair_throughput: Tuple[Quantiles, Quantiles]
    winners: Dict[str, str]


def _pair_shape(analysis: RunAnalysis) -> Dict[Tuple[str, str], int]:
    return {(p.src, p.dst): p.flows for p in analysis.throughput.pairs}


def _quantiles(analysis: RunAnalysis) -> Quantiles:
    rates = np.array([p.rate_gbps for p in analysis.throughput.pairs], dtype=float)
    if rates.size == 0:
        return Quantiles(min=0.0, median=0.0, max=0.0)
    low, mid, high = np.quantile(rates, [0.0, 0.5, 1.0])
    return Quantiles(min=float(low), median=float(mid), max=float(high))


def _delta(a: Optional[float], b: Optional[float]) -> Optional[float]:
    return None if a is None or b is None else b - a


def _winner(a: Optional[float], b: Optional[float], lower_is_better: bool) -> str:
    if a is None or b is None or np.isclose(a, b):
        return "tie"
    if lower_is_better:
        return "a" if a < b else "b"
    return "a" if a > b else "b"


def compare(run_a: RunAnalysis, run_b: RunAnalysis) -> Comparison:
    if run_a.imbalance.total_flows != run_b.imbalance.total_flows or _pair_shape(run_a) != _pair_shape(run_b):
        raise ShapeMismatch(f"runs '{run_a.label}' and '{run_b.label}' trace different workloads")

    qa, qb = _quantiles(run_a), _quantiles(run_b)
    ia, ib = run_a.imbalance, run_b.imbalance
    winners = {
        "aggregate_fim": _winner(ia.aggregate_fim, ib.aggregate_fim, lower_is_better=True),
        "leaf_spine_fim": _winner(ia.leaf_spine_fim, ib.leaf_spine_fim, lower_is_better=True),
        "pair_throughput_min": _winner(qa.min, qb.min, lower_is_better=False),
        "pair_throughput_median": _winner(qa.median, qb.median, lower_is_better=False),
    }
    for layer in Layer:
        winners[f"{layer.value}_fim"] = _winner(ia.layers[layer].fim, ib.layers[layer].fim, lower_is_better=True)

    return Comparison(
        a=run_a.label,
        b=run_b.label,
        layer_fim={layer: (ia.layers[layer].fim, ib.layers[layer].fim) for layer in Layer},
        aggregate_fim=(ia.aggregate_fim, ib.aggregate_fim),
        aggregate_fim_delta=_delta(ia.aggregate_fim, ib.aggregate_fim),
        leaf_spine_fim=(ia.leaf_spine_fim, ib.leaf_spine_fim),
        leaf_spine_fim_delta=_delta(ia.leaf_spine_fim, ib.leaf_spine_fim),
        pair_throughput=(qa, qb),
        winners=winners,
    )


def analyze(paths: Sequence[TracedPath], topology: Topology, label: str = "run") -> RunAnalysis:
    return RunAnalysis(label=label, imbalance=report(paths, topology), throughput=maxmin_throughput(paths, topology))


# -------------------------------------------------
# FILES
# -------------------------------------------------

def dump_json(model: BaseModel, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def load_analysis(path) -> RunAnalysis:
    try:
        return RunAnalysis.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ParseError(f"cannot read analysis {path}: {e}") from e


def write_links_csv(imbalance: ImbalanceReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["from", "to", "layer", "flow_count", "ideal", "deviation_pct"])
        for layer in Layer:
            lr = imbalance.layers[layer]
            for link in lr.links:
                deviation = (
                    abs(link.flow_count - lr.ideal_flows) / lr.ideal_flows * 100.0 if lr.ideal_flows else ""
                )
                writer.writerow([
                    f"{link.from_device}:{link.from_interface}",
                    f"{link.to_device}:{link.to_interface}",
                    layer.value, link.flow_count, f"{lr.ideal_flows:.4f}",
                    f"{deviation:.2f}" if deviation != "" else "",
                ])
    return path


def write_throughput_csv(throughput: ThroughputReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "flows", "rate_gbps"])
        for pair in throughput.pairs:
            writer.writerow([pair.src, pair.dst, pair.flows, f"{pair.rate_gbps:.3f}"])
    return path


def write_comparison_csv(comparison: Comparison, path) -> Path:
    def fmt(value: Optional[float]) -> str:
        return "" if value is None else f"{value:.3f}"

    path = Path(path)
    qa, qb = comparison.pair_throughput
    rows = [(f"{layer.value}_fim", *values) for layer, values in comparison.layer_fim.items()]
    rows += [
        ("aggregate_fim", *comparison.aggregate_fim),
        ("leaf_spine_fim", *comparison.leaf_spine_fim),
        ("pair_throughput_min", qa.min, qb.min),
        ("pair_throughput_median", qa.median, qb.median),
        ("pair_throughput_max", qa.max, qb.max),
    ]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", comparison.a, comparison.b, "winner"])
        for metric, a, b in rows:
            writer.writerow([metric, fmt(a), fmt(b), comparison.winners.get(metric, "")])
    return path

"""
--------------------------------------------------------------------
Purpose:
    Post-processing of traced paths.

What It Does:
    - Directed-link histograms per layer (zero-count links included).
    - Flow imbalance (mean absolute percentage deviation from the per-layer
      ideal) per layer, over all layers and over the leaf-spine layers.
    - Fluid max-min fair throughput by progressive filling.
    - Side-by-side comparison of two runs and the CSV/JSON emitters.
    - Balls-into-bins Monte Carlo reference for uniformly hashed flows.
--------------------------------------------------------------------
"""
