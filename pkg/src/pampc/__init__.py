"""Perception-aware MPC for power line following with obstacle avoidance."""

__version__ = "0.1.0"
