"""Quantum-assisted NOMA resource allocation and toy quantum federated learning."""
from .scenario import AllocationState, ChannelState, NetworkScenario, ScenarioConfig, generate_scenario, sum_rate
from .qubo import PenaltyConfig, QuboProblem, build_channel_qubo, build_power_qubo, qubo_to_ising
from .qaoa import QaoaConfig, ResourceError, solve_qubo
from .orchestrator import BcdOptions, LatencyModel, bcd_optimize, compare_runs, latency
from .qfl import FedConfig, PqcCircuit, run_qfl

__version__ = "0.1.0"
