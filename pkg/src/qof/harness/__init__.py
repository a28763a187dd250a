"""Simulation harness: scenarios, adversaries, oracles and metrics."""

from qof.harness.attacks import AttackReport, attack_frontrun, random_scenario, run_campaign_seed, sandwich_scenario
from qof.harness.metrics import MetricsReport, compute_metrics
from qof.harness.oracle import Violation, bcch_consistency, check_all, oracle_abc, oracle_fairness
from qof.harness.scenario import FaultSpec, Scenario, ScenarioError, load_scenario, save_scenario
from qof.harness.sim import InvariantViolation, SimResult, Simulation, run, simulate, trace_digest, trace_lines

__all__ = [
    "AttackReport",
    "FaultSpec",
    "InvariantViolation",
    "MetricsReport",
    "Scenario",
    "ScenarioError",
    "SimResult",
    "Simulation",
    "Violation",
    "attack_frontrun",
    "bcch_consistency",
    "check_all",
    "compute_metrics",
    "load_scenario",
    "oracle_abc",
    "oracle_fairness",
    "random_scenario",
    "run",
    "run_campaign_seed",
    "sandwich_scenario",
    "save_scenario",
    "simulate",
    "trace_digest",
    "trace_lines",
]
