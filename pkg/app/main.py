# app/main.py

"""
main.py: FlowTracer control plane

Purpose:
    Small FastAPI service running next to an agent fleet. Exposes the
    registry, a fleet-wide PING and an analysis endpoint over posted runs.

What It Does:
    - Builds the app around a topology and an agent registry (create_app).
    - Maps FlowTracerError subclasses to 4xx JSON responses.
    - Registers the health, fleet and analysis routers.

Used By:
    - `python -m app.cli agents --control-port 8000` (served by uvicorn)
    - tests/test_control_plane.py (FastAPI TestClient)

--------------------------------------------------------------------
"""

import logging
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from app.core.errors import EXIT_LOAD, EXIT_SHAPE, FlowTracerError
from app.routes.analysis import router as analysis_router
from app.routes.fleet import router as fleet_router
from app.routes.health import router as health_router
from app.services.agents import AgentRegistry
from app.services.fabric import Topology

logger = logging.getLogger(__name__)


def create_app(topology: Optional[Topology] = None, registry: Optional[AgentRegistry] = None) -> FastAPI:
    app = FastAPI(
        title="FlowTracer control plane",
        description="Registry, fleet health and path analysis for a running agent fleet.",
        version="1.0.0",
    )
    app.state.topology = topology
    app.state.registry = registry

    # === Error Handling ===
    @app.exception_handler(FlowTracerError)
    async def flowtracer_error_handler(request: Request, exc: FlowTracerError):
        """Input problems are 422, everything else the tracer raises is 400."""
        status_code = 422 if exc.exit_code in (EXIT_LOAD, EXIT_SHAPE) else 400
        logger.warning(f"{request.url.path}: {exc.__class__.__name__}: {exc}")
        return JSONResponse(
            status_code=status_code,
            content={"detail": str(exc), "error": exc.__class__.__name__},
        )

    # === Include Routers ===
    app.include_router(health_router,   prefix="/api",          tags=["health"])
    app.include_router(fleet_router,    prefix="/api/fleet",    tags=["fleet"])
    app.include_router(analysis_router, prefix="/api/analysis", tags=["analysis"])

    return app
