"""
Direct execution entry point for the nfd package.

Usage:
    python -m nfd predict --scenario config/scenarios/fig5a.yaml
    python -m nfd run --scenario config/scenarios/fig8.yaml --workers 4
"""

import sys

from .run.run import NfdCLI

if __name__ == "__main__":
    sys.exit(NfdCLI().run())
