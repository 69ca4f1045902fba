"""Learned triangular meshing of polygonal domains with a graph policy
trained by PPO."""

__version__ = "0.1.0"
