"""Differentiable architecture search inside RL training loops."""

__version__ = "0.1.0"
