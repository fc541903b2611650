"""Topology control of small power grids with masked PPO."""

__version__ = "0.1.0"
