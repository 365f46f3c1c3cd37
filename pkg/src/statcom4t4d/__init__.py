"""Simulator of a cascaded 4T4D STATCOM arm with a sensorless dual-loop controller."""

from .circuit import GridParams, ModuleParams, ModuleState, PlantState
from .config import ScenarioConfig
from .errors import ConfigError, DivergenceError, StatcomError
from .record import TimeSeriesRecord
from .scenario import GoldenScenario, load_golden, run, validate

__version__ = "0.1.0"

__all__ = [
    "GridParams", "ModuleParams", "ModuleState", "PlantState", "ScenarioConfig",
    "ConfigError", "DivergenceError", "StatcomError", "TimeSeriesRecord",
    "GoldenScenario", "load_golden", "run", "validate",
]
