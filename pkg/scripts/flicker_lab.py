#!/usr/bin/env python3
"""
⚡ Flicker Lab launcher

Usage:
    python scripts/flicker_lab.py gen-data
    python scripts/flicker_lab.py train --variant A
    python scripts/flicker_lab.py attack --mode universal --linf-pct 20
    python scripts/flicker_lab.py baseline-sweep --linf-pct 5,10,15,20 --repeats 10
    python scripts/flicker_lab.py report --kind baseline --inputs outputs/sweeps/baseline_sweep_A.json
"""

import os
import sys

# Add parent directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from modules.cli import main

if __name__ == '__main__':
    sys.exit(main())
