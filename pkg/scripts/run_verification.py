#!/usr/bin/env python3
"""Run the full identity-check battery and aggregate the results.

Usage: python scripts/run_verification.py [OUTDIR]
"""

import sys

from snrlab.cli import run_command


def main() -> int:
    out = sys.argv[1] if len(sys.argv) > 1 else "artifacts/verify"
    code = run_command(["verify", "--out", out, "--seed", "0"])
    if code != 0:
        return code
    return run_command(["report", "--out", out])


if __name__ == "__main__":
    sys.exit(main())
