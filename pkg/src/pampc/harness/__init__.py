"""Scenarios, closed-loop simulation, experiments and result files."""

from .scenario import (
    CONTROLLERS,
    Scenario,
    ScenarioError,
    SimConfig,
    default_scenario,
    dumps,
    load_scenario,
    loads,
    mast_row,
    save_scenario,
)
from .simulate import LOG_COLUMNS, RatePlant, RolloutLog, clearance, closed_loop_steps, run_closed_loop

__all__ = [
    "CONTROLLERS",
    "LOG_COLUMNS",
    "RatePlant",
    "RolloutLog",
    "Scenario",
    "ScenarioError",
    "SimConfig",
    "clearance",
    "closed_loop_steps",
    "default_scenario",
    "dumps",
    "load_scenario",
    "loads",
    "mast_row",
    "run_closed_loop",
    "save_scenario",
]
