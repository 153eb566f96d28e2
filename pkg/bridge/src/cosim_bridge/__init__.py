"""Simulator-side adapter for the demandgym co-simulation protocol.

The trainer side of the wire protocol treats any process speaking the
grammar in ``docs/protocol.md`` as an environment. This package provides
the simulator side: wrap any step callable in :class:`AdapterConfig` and
``run_adapter`` serves it to a training client over TCP or stdio.
"""

from .adapter import AdapterConfig, run_adapter
from .echo_sim import EchoSim, echo_adapter_config
from .protocol import DecodeError, decode, encode

__all__ = ["AdapterConfig", "run_adapter", "EchoSim", "echo_adapter_config",
           "DecodeError", "decode", "encode"]
