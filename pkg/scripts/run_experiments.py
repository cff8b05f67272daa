"""Run every example config through the command-line harness.

    python3 scripts/run_experiments.py [OUTPUT_ROOT]

Outputs land in OUTPUT_ROOT/<config name>/ (default ./out).  Prints the exit
code and wall time of each run; the process exits non-zero if any run did.
"""

import sys
import time
from pathlib import Path

from kinetic_gibbs.cli import main

CONFIGS = Path(__file__).resolve().parent / "configs"

# config -> subcommand
PLAN = [
    ("p0_constants", "constants"),
    ("stationarity", "sample"),
    ("scaling", "scaling"),
    ("drift", "sample"),
    ("optimize_quadratic", "optimize"),
    ("optimize_mixture", "optimize"),
    ("blr", "blr"),
]


def run_all(root: Path) -> int:
    worst = 0
    for name, command in PLAN:
        out = root / name
        print(f"== {command} {name}.cfg -> {out}")
        t0 = time.perf_counter()
        code = main([command, str(CONFIGS / f"{name}.cfg"), "-o", str(out)])
        print(f"   exit {code}, {time.perf_counter() - t0:.1f} s")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(run_all(Path(sys.argv[1] if len(sys.argv) > 1 else "out")))
