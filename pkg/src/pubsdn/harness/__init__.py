from .docs import (
    ScenarioDoc, TopologyDoc, load_scenario, load_topology, validate_scenario,
    validate_topology,
)
from .report import emit_report
from .runner import RunResult, Simulation, build_report, run
from .scenarios import CANNED, canned, canned_names
