"""Packet-level simulator and protocol library for a chunked multipath transport."""

__version__ = "0.1.0"
