# tests/conftest.py

import asyncio
import threading

import pytest

from app.services.agents import AgentConfig, AgentFleet
from app.services.fabric import generate_leaf_spine, generate_reference_testbed
from app.services.flowgen import generate_flows, make_bipartite_workload
from app.services.routing import EcmpConfig, RoutingPolicy, build_balanced_static_tables


@pytest.fixture(scope="session")
def topology():
    return generate_reference_testbed()


@pytest.fixture(scope="session")
def tiny_topology():
    """One rack, one leaf, three single-homed hosts, no spines."""
    return generate_leaf_spine(racks=1, hosts_per_rack=3, leaves_per_rack=1, spines=0,
                               host_links_per_leaf=1, uplinks_per_spine=1)


@pytest.fixture(scope="session")
def bipartite(topology):
    return make_bipartite_workload(topology, flows_per_pair=16, seed=11)


@pytest.fixture(scope="session")
def ecmp_policy():
    return RoutingPolicy.from_ecmp(EcmpConfig(seed=5))


@pytest.fixture(scope="session")
def static_policy(topology, bipartite):
    return RoutingPolicy.from_tables(build_balanced_static_tables(topology, generate_flows(bipartite, topology)))


class FleetThread:
    """An agent fleet on its own event loop, so sync code (CLI, TestClient) can reach it."""

    def __init__(self, topology, workload, policy, config=None):
        self.topology = topology
        self.flows = generate_flows(workload, topology)
        self.policy = policy
        self.config = config or AgentConfig()
        self.loop = asyncio.new_event_loop()
        self.thread = threading.Thread(target=self.loop.run_forever, daemon=True)
        self.fleet = None

    def call(self, coro):
        return asyncio.run_coroutine_threadsafe(coro, self.loop).result(timeout=30)

    def start(self):
        self.thread.start()
        self.fleet = self.call(AgentFleet.start(self.topology, self.flows, self.policy, self.config))
        return self

    @property
    def registry(self):
        return self.fleet.registry

    def stop_agent(self, device_id):
        self.call(self.fleet.stop(device_id))

    def close(self):
        self.call(self.fleet.close())
        self.loop.call_soon_threadsafe(self.loop.stop)
        self.thread.join(timeout=10)
        self.loop.close()


@pytest.fixture
def fleet_thread(topology, bipartite, ecmp_policy):
    fleet = FleetThread(topology, bipartite, ecmp_policy).start()
    yield fleet
    fleet.close()
