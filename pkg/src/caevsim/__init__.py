"""Secure CACC platoon simulator with a battery-in-the-loop powertrain,
residual-based attack detection and a PPO defender."""

from ._accel import backend_name
from .config import ScenarioConfig, default_scenario, load_scenario
from .engine import SimTrace, World, run, step, sweep
from .errors import ConfigError, SimulationError

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ScenarioConfig", "SimTrace", "SimulationError", "World",
    "backend_name", "default_scenario", "load_scenario", "run", "step", "sweep",
]
