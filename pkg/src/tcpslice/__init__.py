"""Delay-bounded rate allocation: network-calculus bounds, a price-based
rate solver, exponential ECN marking and a packet-level simulator."""

from .netcalc import VARIANTS, delay_bound
from .numopt import dual_descent_solve
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .topology import Edge, FlowSpec, Network

__version__ = "0.1.0"

__all__ = ["VARIANTS", "delay_bound", "dual_descent_solve", "Scenario", "ScenarioError", "load_scenario",
           "parse_scenario", "Edge", "FlowSpec", "Network", "__version__"]
