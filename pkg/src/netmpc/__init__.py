"""Adaptive learning-based tube MPC for networks of coupled linear subsystems."""

__version__ = "0.1.0"
