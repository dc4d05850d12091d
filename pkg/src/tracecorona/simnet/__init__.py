"""Deterministic discrete-event proximity simulator."""

from .config import ConfigError, ScenarioConfig
from .engine import run_scenario
from .report import ScenarioReport

__all__ = ["ConfigError", "ScenarioConfig", "ScenarioReport", "run_scenario"]
