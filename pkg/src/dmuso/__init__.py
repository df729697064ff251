"""Per-TTI multi-slice radio and bandwidth scheduling simulator."""

from .errors import DmusoError
from .harness import SimMetrics, build_scenario, run, write_outputs
from .model import ScenarioConfig, load_scenario, table1_scenario, validate_scenario
from .scheduler import SliceState, admit_category, capacity_report, run_tti

__version__ = "0.1.0"

__all__ = [
    "DmusoError", "ScenarioConfig", "SimMetrics", "SliceState", "admit_category",
    "build_scenario", "capacity_report", "load_scenario", "run", "run_tti",
    "table1_scenario", "validate_scenario", "write_outputs",
]
