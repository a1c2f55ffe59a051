"""Discrete-event simulator for decentralized, connectivity-preserving clustering
of wireless sensor networks, with LEACH and BEEM baselines."""

__version__ = "0.1.0"
