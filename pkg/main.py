#!/usr/bin/env python3
"""
Compatibility shim for the legacy entrypoint.
Runs the toolkit CLI from cli.py.
"""

import sys

from cli import main


if __name__ == "__main__":
    sys.exit(main())
