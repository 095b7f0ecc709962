"""Run module for the nfd CLI and experiment drivers."""

from .run import NfdCLI, main
from .tracer import RunTracer

__all__ = [
    "NfdCLI",
    "RunTracer",
    "main"
]
