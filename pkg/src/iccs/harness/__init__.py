"""Facility harness: configuration, launch, scenario scripts, metrics, gateway."""

from iccs.harness.config import (
    Budgets,
    FacilityConfig,
    FepConfig,
    ParseError,
    PlcConfig,
    ValidationError,
    generate_profile,
    load_config,
    mini_profile,
    parse_config,
    render_config,
    resolve_data_path,
)
from iccs.harness.facility import Facility, StartupTimeout, launch
from iccs.harness.metrics import MetricsCollector, NoData
from iccs.harness.script import ScenarioReport, ScriptParseError, ScriptRunner

__all__ = [
    "Budgets",
    "Facility",
    "FacilityConfig",
    "FepConfig",
    "MetricsCollector",
    "NoData",
    "ParseError",
    "PlcConfig",
    "ScenarioReport",
    "ScriptParseError",
    "ScriptRunner",
    "StartupTimeout",
    "ValidationError",
    "generate_profile",
    "launch",
    "load_config",
    "mini_profile",
    "parse_config",
    "render_config",
    "resolve_data_path",
]
