from .events import EventQueue, SimulationError
from .fabric import (DROP_TAIL, PAUSE, TRIM, Fabric, Link, Packet, PauseLink, stream_rng, write_trace)
from .topology import LinkSpec, Topology, TopologyError, build_fattree, build_star, route

__all__ = [
    "EventQueue", "SimulationError", "DROP_TAIL", "PAUSE", "TRIM", "Fabric", "Link", "Packet", "PauseLink",
    "stream_rng", "write_trace", "LinkSpec", "Topology", "TopologyError", "build_fattree", "build_star", "route",
]
