"""CLI entrypoint for the beamfuse inference engine."""

from __future__ import annotations

import sys

from beamfuse.cli import main

if __name__ == "__main__":
    sys.exit(main())
