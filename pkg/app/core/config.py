# app/core/config.py

import json
import logging
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ParseError

logger = logging.getLogger(__name__)

# ---------------------------------------------
# Settings class for all environment configuration values
# ---------------------------------------------
class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="FLOWTRACER_",
        env_file=".env",  # Load variables from .env by default
        extra="ignore",
    )

    # Registry file used when --registry is not given
    REGISTRY: Optional[str] = None

    # Agent endpoints
    AGENT_HOST: str = "127.0.0.1"
    AGENT_TIMEOUT_S: float = 10.0

    # Tracer defaults
    HOP_LIMIT: int = 16
    MAX_AUTO_PROCS: int = 8

    # Benchmark latency model (milliseconds)
    BENCH_CONNECT_LATENCY_MS: int = 100
    BENCH_QUERY_LATENCY_MS: int = 50
    BENCH_REPETITIONS: int = 3

    # Control plane (FastAPI) bind
    CONTROL_HOST: str = "127.0.0.1"
    CONTROL_PORT: int = 8000

    LOG_LEVEL: str = "INFO"
    LOG_DIR: Optional[str] = None

# ---------------------------------------------
# Singleton pattern for config (caches instance)
# ---------------------------------------------
@lru_cache()
def get_settings():
    return Settings()

settings = get_settings()  # This is what you import elsewhere


# ---------------------------------------------
# Run configuration (JSON file + CLI overrides)
# ---------------------------------------------
class PolicyMode(str, Enum):
    ECMP = "ecmp"
    STATIC = "static"


class ConnectionMode(str, Enum):
    BASELINE = "baseline"
    PERSISTENT = "persistent"
    PARALLEL_PERSISTENT = "parallel_persistent"

    @classmethod
    def parse(cls, value: str) -> "ConnectionMode":
        # CLI spelling uses dashes
        return cls(value.replace("-", "_"))


class PolicyBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: PolicyMode = PolicyMode.ECMP
    field_set: str = "full_five_tuple"
    include_ingress: bool = False
    seed: Optional[int] = None
    static_tables: Optional[str] = None


class PlanBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    procs: Optional[int] = Field(default=None, ge=1)
    threads: int = Field(default=1, ge=1)
    mode: ConnectionMode = ConnectionMode.PARALLEL_PERSISTENT
    hop_limit: int = Field(default_factory=lambda: settings.HOP_LIMIT, ge=1)


class LatencyBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    connect_latency_ms: float = Field(default=0.0, ge=0)
    query_latency_ms: float = Field(default=0.0, ge=0)


class RunConfig(BaseModel):
    """
    Everything a trace/agents/bench invocation needs. Loaded from --config and
    then overridden field by field from the command line.
    """
    model_config = ConfigDict(extra="forbid")

    topology: Optional[str] = None
    workload: Optional[str] = None
    policy: PolicyBlock = Field(default_factory=PolicyBlock)
    plan: PlanBlock = Field(default_factory=PlanBlock)
    agents: LatencyBlock = Field(default_factory=LatencyBlock)
    registry: Optional[str] = None
    in_process: bool = False
    out: str = "out"
    seed: int = 0

    def ecmp_seed(self) -> int:
        return self.policy.seed if self.policy.seed is not None else self.seed

    def registry_path(self) -> Optional[str]:
        return self.registry or settings.REGISTRY

    def require(self, *fields: str):
        """Checks that the referenced files exist."""
        for name in fields:
            value = getattr(self, name)
            if value is None:
                raise ParseError(f"run config is missing '{name}'")
            if not Path(value).is_file():
                raise ParseError(f"{name} file not found: {value}")


def load_run_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        config = RunConfig.model_validate(raw)
    except (OSError, json.JSONDecodeError, PydanticValidationError) as e:
        raise ParseError(f"invalid run config {path}: {e}") from e
    logger.debug(f"Loaded run config from {path}")
    return config

"""
------------------------------------------------
Purpose:
Centralizes environment configuration (Settings) and the per-run configuration
file (RunConfig) of the tracer.

What It Does:
- Loads FLOWTRACER_* variables from the environment or a .env file.
- Exposes a cached `settings` singleton.
- Defines the RunConfig schema used by the CLI: topology/workload paths, routing
  policy block, tracer plan, agent latency knobs, output directory, seed.

Used By:
- app/cli.py (config file + flag overrides)
- app/services/tracer.py, app/services/agents.py (timeouts, hop limit)
- app/core/logging.py (log level and directory)
------------------------------------------------
"""
