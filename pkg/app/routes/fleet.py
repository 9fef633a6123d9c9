# app/routes/fleet.py

import asyncio
import logging

from fastapi import APIRouter, Depends

from app.core.errors import TraceError
from app.services.agents import AgentRegistry
from app.services.fabric import Topology
from app.services.tracer import AgentConnection, QueryCounter
from app.deps.fleet import get_registry, get_topology

router = APIRouter()
logger = logging.getLogger(__name__)

PING_TIMEOUT_S = 2.0


@router.get("/registry")
def fleet_registry(registry: AgentRegistry = Depends(get_registry)):
    return {"endpoints": registry.endpoints}


async def _ping(device: str, registry: AgentRegistry, counter: QueryCounter) -> bool:
    host, port = registry.endpoint(device)
    connection = AgentConnection(device, host, port, counter, timeout=PING_TIMEOUT_S)
    try:
        return (await connection.request("PING")) == ["PONG"]
    except TraceError as e:
        logger.warning(f"Ping failed for {device}: {e}")
        return False
    finally:
        await connection.close()


@router.get("/ping")
async def fleet_ping(
    topology: Topology = Depends(get_topology),
    registry: AgentRegistry = Depends(get_registry),
):
    """PINGs every device agent concurrently."""
    counter = QueryCounter()
    devices = sorted(d.id for d in topology.devices)
    known = [d for d in devices if d in registry.endpoints]
    results = await asyncio.gather(*(_ping(d, registry, counter) for d in known))
    status = {d: False for d in devices}
    status.update(dict(zip(known, results)))
    return {
        "devices": status,
        "reachable": sum(status.values()),
        "total": len(devices),
    }

"""
------------------------------------------------------------
Purpose:
Read-only view of the running agent fleet.

What It Does:
- GET /registry returns device id -> host:port.
- GET /ping sends PING to every topology device and reports reachability.

Used By:
- `agents --control-port`
- tests/test_control_plane.py
------------------------------------------------------------
"""
