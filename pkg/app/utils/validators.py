# app/utils/validators.py

import logging
import re

logger = logging.getLogger(__name__)

IDENTIFIER_REGEX = r"[A-Za-z0-9][A-Za-z0-9_.:\-]*"

def is_valid_identifier(value: str) -> bool:
    """
    Device ids and interface names travel as single tokens on the agent wire
    protocol, so they must be non-empty and whitespace-free.
    """
    valid = bool(re.fullmatch(IDENTIFIER_REGEX, value or ""))
    if not valid:
        logger.debug(f"Identifier validation failed: '{value}'")
    return valid

def is_valid_port(port: int) -> bool:
    return isinstance(port, int) and 1 <= port <= 65535

def is_valid_port_range(low: int, high: int) -> bool:
    valid = is_valid_port(low) and is_valid_port(high) and low <= high
    if not valid:
        logger.debug(f"Port range validation failed: ({low}, {high})")
    return valid

def port_in_range(port: int, port_range) -> bool:
    """Inclusive (low, high) check; None matches everything."""
    if port_range is None:
        return True
    low, high = port_range
    return low <= port <= high

"""
----------------------------------------------------------
Purpose:
    Small validation helpers shared by the topology, workload and static
    table loaders and by the agent request parser.

Used By:
    - app/services/fabric.py (device and interface ids)
    - app/services/flowgen.py (ports, filters)
    - app/services/routing.py (static rule matching)
    - app/services/agents.py (request parsing)
----------------------------------------------------------
"""
