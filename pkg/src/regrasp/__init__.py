"""Deterministic grasping testbed with an autonomous reflect-and-correct loop."""

__version__ = "0.1.0"
