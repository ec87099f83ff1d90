"""Joint function splitting, fronthaul routing, and renewable scheduling
for a centralized RAN: instance generation, exact optimization, baselines,
and experiment reporting."""

from .scenario import (
    ConfigError, NetworkTopology, Scenario, SideValues, TrafficGenConfig,
    TopologyError, UserPopulation, build_scenario, build_topology,
    generate_delay_thresholds, generate_traffic, load_scenario,
    load_solar_profile, save_scenario, scenario_hash, synthetic_solar_day,
    traffic_shape,
)
from .energy import (
    Decisions, EnergyLedger, InfeasibleDecisionsError,
    greedy_battery_dispatch, opex, unit_consumption, validate_ledger,
)
from .milp import (
    BuildError, ExtractionError, MilpModel, ValidationReport, big_m_values,
    build_model, extract_decisions, validate_solution,
)
from .solver import (
    SolveResult, SolverConfig, SolverError, branch_and_bound, export_model,
    read_lp, solve, solve_lp,
)
from .baselines import solve_static_routing, solve_traffic_aware, static_routing_paths
from .oracle import TinyScenarioBound, enumerate_optimum
from .report import ExperimentCell, ExperimentMatrix, run_experiment

__version__ = "0.1.0"
