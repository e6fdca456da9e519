#!/usr/bin/env python3
"""Compare loss-estimator variance across proposals and noise schedules.

Usage: python scripts/run_is_ablation.py [OUTDIR]
"""

import sys

from snrlab.cli import run_command


def main() -> int:
    out = sys.argv[1] if len(sys.argv) > 1 else "artifacts/is_ablation"
    code = run_command([
        "ablate-is", "--out", out, "--seed", "0",
        "--proposals", "uniform_t,designed_eta,learned_monotone",
        "--samples", "2000", "--n-repeats", "20", "--steps", "500"])
    if code != 0:
        return code
    return run_command(["ablate-schedule", "--out", out])


if __name__ == "__main__":
    sys.exit(main())
