"""Approximate random-circuit sampling with broken-edge tensor networks and top-k post-processing."""

__version__ = "0.1.0"
