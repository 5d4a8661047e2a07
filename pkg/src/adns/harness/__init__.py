"""Simulation harness: in-process network, TEE stubs and scenarios."""

from .scenarios import SCENARIOS, World, run
from .simnet import SimNet, SocketNet, VirtualClock

__all__ = ["SCENARIOS", "World", "run", "SimNet", "SocketNet", "VirtualClock"]
