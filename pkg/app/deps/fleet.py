# app/deps/fleet.py

from fastapi import HTTPException, Request

from app.services.agents import AgentRegistry
from app.services.fabric import Topology


def get_topology(request: Request) -> Topology:
    """
    FastAPI dependency returning the topology the control plane was started with.
    - Raises HTTP 503 when the app was created without one.
    """
    topology = getattr(request.app.state, "topology", None)
    if topology is None:
        raise HTTPException(status_code=503, detail="No topology loaded.")
    return topology


def get_registry(request: Request) -> AgentRegistry:
    registry = getattr(request.app.state, "registry", None)
    if registry is None:
        raise HTTPException(status_code=503, detail="No agent registry loaded.")
    return registry

"""
------------------------------------------------
Purpose:
Reusable FastAPI dependencies exposing the fleet state (topology, registry)
stored on `app.state` by `create_app`.

Used by:
- app/routes/fleet.py, app/routes/analysis.py via `Depends(...)`
------------------------------------------------
"""
