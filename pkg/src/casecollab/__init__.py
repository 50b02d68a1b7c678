"""Discrete-event simulator of version-control-style collaboration in cancer case management."""

from .collaboration import CaseStage, CaseWorkflow, TransitionTable
from .config import ScenarioConfig, Strategy, load_config, loads_config
from .kernel import Engine, EventKind
from .record import CaseBook, Right, Role, Section, Status, Verdict
from .resources import ResourcePool, detect_bottleneck
from .scenario import (
    DelayKind,
    compare_strategies,
    run_scenario,
    sensitivity_sweep,
    simulate_strategy,
)

__all__ = [
    "CaseBook", "CaseStage", "CaseWorkflow", "DelayKind", "Engine", "EventKind",
    "ResourcePool", "Right", "Role", "ScenarioConfig", "Section", "Status", "Strategy",
    "TransitionTable", "Verdict", "compare_strategies", "detect_bottleneck",
    "load_config", "loads_config", "run_scenario", "sensitivity_sweep",
    "simulate_strategy",
]

__version__ = "0.1.0"
