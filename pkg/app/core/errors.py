# app/core/errors.py

from typing import Optional

# ---------------------------------------------
# Exit codes shared by the CLI
# ---------------------------------------------
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_PARTIAL = 3
EXIT_LOAD = 4
EXIT_SHAPE = 5


class FlowTracerError(Exception):
    """Base class for every error raised by the tracer packages."""
    exit_code = EXIT_FAILURE


class UsageError(FlowTracerError):
    """Option combinations argparse cannot reject on its own."""
    exit_code = EXIT_USAGE


# -------------- INPUT FILES ----------------------

class ParseError(FlowTracerError):
    exit_code = EXIT_LOAD


class ValidationError(FlowTracerError):
    exit_code = EXIT_LOAD

    def __init__(self, message: str, element: Optional[str] = None):
        self.element = element
        super().__init__(f"{element}: {message}" if element else message)


# -------------- FABRIC / WORKLOAD ----------------

class UnknownInterface(FlowTracerError):
    def __init__(self, device: str, interface: str):
        self.device = device
        self.interface = interface
        super().__init__(f"{device} has no interface {interface}")


class UnlinkedInterface(FlowTracerError):
    def __init__(self, device: str, interface: str):
        self.device = device
        self.interface = interface
        super().__init__(f"{device}:{interface} is not wired to any link")


class UnknownHost(FlowTracerError):
    exit_code = EXIT_LOAD

    def __init__(self, host: str):
        self.host = host
        super().__init__(f"unknown host {host}")


class NotBipartiteCapable(FlowTracerError):
    exit_code = EXIT_USAGE


# -------------- ROUTING --------------------------

class RoutingError(FlowTracerError):
    """Routing failures; `code` is the agent wire code."""
    code = "NOROUTE"


class NoRoute(RoutingError):
    code = "NOROUTE"


class EmptyCandidates(RoutingError):
    code = "NOROUTE"


class NoMatchingRule(RoutingError):
    code = "NOMATCH"


class InfeasibleBalance(FlowTracerError):
    pass


# -------------- TRACING --------------------------

class TraceError(FlowTracerError):
    """Per-flow failure. Collected into RunResult.errors, never fatal to a run."""
    code = "TRACE"

    def __init__(self, message: str, device: Optional[str] = None):
        self.device = device
        super().__init__(message)


class AgentError(TraceError):
    def __init__(self, device: str, code: str):
        self.code = code
        super().__init__(f"agent {device} answered ERR {code}", device)


class Disconnected(TraceError):
    code = "DISCONNECTED"

    def __init__(self, device: str, reason: str = ""):
        super().__init__(f"agent {device} unreachable {reason}".strip(), device)


class HopLimitExceeded(TraceError):
    code = "HOPLIMIT"


class Misdelivered(TraceError):
    code = "MISDELIVERED"


class RegistryIncomplete(FlowTracerError):
    exit_code = EXIT_LOAD

    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"registry lacks endpoints for {', '.join(self.missing)}")


# -------------- ANALYSIS -------------------------

class IncompletePath(FlowTracerError):
    exit_code = EXIT_LOAD


class ZeroIdeal(FlowTracerError):
    pass


class ShapeMismatch(FlowTracerError):
    exit_code = EXIT_SHAPE

"""
--------------------------------------------------------------------
Purpose:
    Error taxonomy of the tracer and the exit code each one maps to.

What It Does:
    - FlowTracerError base with a class-level exit_code.
    - Load-time failures (parse, validation, unknown host) exit with 4,
      per-flow trace failures carry a code and the failing device.

Used By:
    - Every service module
    - app/cli.py (exit codes), app/main.py (HTTP status mapping)
--------------------------------------------------------------------
"""
