# app/routes/health.py

from fastapi import APIRouter, Request

router = APIRouter()

@router.get("/health")
def health_check(request: Request):
    """
    Liveness probe for the control plane.

    Returns:
        JSON with status "ok" and the number of devices the control plane knows about.
    """
    topology = getattr(request.app.state, "topology", None)
    return {"status": "ok", "devices": len(topology.devices) if topology is not None else 0}

"""
------------------------------------------------------------
Purpose:
Lightweight endpoint to verify the control plane is up.

What It Does:
- Returns {"status": "ok", "devices": N} with a 200 status code.
- Never touches the agents; use /api/fleet/ping for that.

Used By:
- Railway readiness probe
- tests/test_control_plane.py
------------------------------------------------------------
"""
