"""
Entry point for ``python -m cvqkd``.

Usage:
    python -m cvqkd --version
    python -m cvqkd sweep --out-csv sweep.csv
"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
