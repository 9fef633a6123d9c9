# app/services/bench.py

import csv
import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from app.core.config import ConnectionMode, settings
from app.core.errors import NotBipartiteCapable
from app.services.agents import AgentConfig, AgentFleet
from app.services.fabric import Topology
from app.services.flowgen import PairSpec, WorkloadSpec, generate_flows
from app.services.routing import RoutingPolicy
from app.services.tracer import RunPlan, run

logger = logging.getLogger(__name__)

DEFAULT_FLOWS = (2, 4, 8, 16, 32, 64, 128)
DEFAULT_THREADS = (2, 4, 8)
DEFAULT_MODES = tuple(ConnectionMode)


class BenchRow(BaseModel):
    flows: int
    threads: int
    mode: ConnectionMode
    mean_ms: float
    min_ms: float
    max_ms: float
    repetitions: int


def single_pair_workload(topology: Topology, flows: int, seed: int = 0) -> WorkloadSpec:
    """One inter-rack pair (first host of the first two racks) carrying `flows` flows."""
    racks = topology.racks()
    if len(racks) < 2:
        raise NotBipartiteCapable("bench needs at least two racks")
    src = topology.hosts_in_rack(racks[0])[0]
    dst = topology.hosts_in_rack(racks[1])[0]
    return WorkloadSpec(pairs=(PairSpec(src=src.id, dst=dst.id, flows=flows),), seed=seed)


def _thread_counts(mode: ConnectionMode, threads: Sequence[int]) -> List[int]:
    # baseline and persistent trace with a single sub-worker
    return list(threads) if mode is ConnectionMode.PARALLEL_PERSISTENT else [1]


async def run_bench(
    topology: Topology,
    policy: RoutingPolicy,
    flows: Sequence[int] = DEFAULT_FLOWS,
    threads: Sequence[int] = DEFAULT_THREADS,
    modes: Sequence[ConnectionMode] = DEFAULT_MODES,
    repetitions: Optional[int] = None,
    config: Optional[AgentConfig] = None,
    seed: int = 0,
) -> List[BenchRow]:
    repetitions = repetitions or settings.BENCH_REPETITIONS
    config = config or AgentConfig(
        connect_latency_ms=settings.BENCH_CONNECT_LATENCY_MS,
        query_latency_ms=settings.BENCH_QUERY_LATENCY_MS,
    )
    rows: List[BenchRow] = []
    for n in flows:
        workload = single_pair_workload(topology, n, seed)
        fleet = await AgentFleet.start(topology, generate_flows(workload, topology), policy, config)
        async with fleet:
            for mode in modes:
                for t in _thread_counts(mode, threads):
                    plan = RunPlan(procs=1, threads=t, connection_mode=mode)
                    samples = []
                    for _ in range(repetitions):
                        result = await run(workload, topology, fleet.registry, plan)
                        samples.append(result.timing.total_ms)
                    values = np.array(samples)
                    row = BenchRow(flows=n, threads=t, mode=mode, mean_ms=float(values.mean()),
                                   min_ms=float(values.min()), max_ms=float(values.max()),
                                   repetitions=repetitions)
                    logger.info(f"bench flows={n} T={t} mode={mode.value}: {row.mean_ms:.1f}ms")
                    rows.append(row)
    return rows


def write_bench_csv(rows: Sequence[BenchRow], path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flows", "threads", "mode", "mean_ms", "min_ms", "max_ms", "repetitions"])
        for row in rows:
            writer.writerow([row.flows, row.threads, row.mode.value, f"{row.mean_ms:.3f}",
                             f"{row.min_ms:.3f}", f"{row.max_ms:.3f}", row.repetitions])
    return path

"""
--------------------------------------------------------------------
Purpose:
    Tracer scaling benchmark on a single inter-rack pair.

What It Does:
    - Times in-process runs per (flows, threads, connection mode) cell with
      injected connect and query latency.
    - Only parallel-persistent sweeps the thread count.
    - Writes bench.csv (mean/min/max over repetitions).

Used By:
    - app/cli.py (`bench`)
--------------------------------------------------------------------
"""
