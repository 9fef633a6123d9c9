# app/routes/analysis.py

import logging

from fastapi import APIRouter, Body, Depends

from app.services.analysis import analyze
from app.services.fabric import Topology
from app.services.tracer import run_result_from_dict
from app.deps.fleet import get_topology

router = APIRouter()
logger = logging.getLogger(__name__)


@router.post("/report")
def analysis_report(
    run_result: dict = Body(...),
    label: str = "run",
    topology: Topology = Depends(get_topology),
):
    """
    Imbalance and throughput report for a posted run result (run_result.json body).
    Parse failures and incomplete paths surface as 422 through the app's error handler.
    """
    result = run_result_from_dict(run_result)
    logger.info(f"Analyzing {len(result.paths)} posted paths")
    return analyze(result.paths, topology, label=label).model_dump(mode="json")

"""
------------------------------------------------------------
Purpose:
Imbalance and throughput report for a posted run result.

What It Does:
- POST /report parses run_result.json content and runs analyze().

Used By:
- tests/test_control_plane.py
------------------------------------------------------------
"""
