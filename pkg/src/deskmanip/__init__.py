"""Desk-scale planar loco-manipulation sandbox: physics, demonstration
tooling, tracking RL, and masked goal-conditioned distillation."""

__version__ = "0.1.0"
