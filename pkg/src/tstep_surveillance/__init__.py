"""T-step-ahead target detection for a team of mobile sensors.

Offline lattice statistics, online expected-detection values, depth-limited
space-time search with priority coordination, and a discrete-time simulator
for comparing sensor strategies.
"""

from .config import ConfigError, ScenarioConfig, load_default, parse_scenario
from .geometry import CellIndex, Facing, LatticeSpec, SourceSpec, ZoneSpec
from .lattice_stats import StatsTable, precompute_all
from .planner import MotionPlan, best_path, coordinate_round
from .simulator import ExperimentSummary, run_experiment

__version__ = "0.1.0"
