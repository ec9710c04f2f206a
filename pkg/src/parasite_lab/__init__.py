"""Simulation lab for persistent cache-resident script infections."""

__version__ = "0.1.0"
TOOL = "parasite-lab"
