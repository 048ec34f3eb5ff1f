"""
SharpContour command line entry point.

Usage:
    python scripts/sharpcontour.py refine --mask data/coarse.pgm --oracle circle:64,64,40 --out refined.json
    python scripts/sharpcontour.py --help

See sharpcontour/cli.py for every subcommand.
"""

import sys
from pathlib import Path

# Resolve imports relative to project root
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from sharpcontour.cli import main  # noqa: E402

if __name__ == '__main__':
    sys.exit(main())
