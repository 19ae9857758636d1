"""Packet-level simulation of the price/marking control loop."""

from .engine import ControllerState, HostState, Simulation, TraceLog, run
from .kernel import BACKEND, available_backends, get_kernel

__all__ = ["ControllerState", "HostState", "Simulation", "TraceLog", "run", "BACKEND",
           "available_backends", "get_kernel"]
