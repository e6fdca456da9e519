#!/usr/bin/env python3
"""Train a denoiser, evaluate likelihood on a quantized source, and sample.

Usage: python scripts/run_codelength.py [OUTDIR]
"""

import sys

from snrlab.cli import run_command


def main() -> int:
    out = sys.argv[1] if len(sys.argv) > 1 else "artifacts/codelength"
    for args in (
        ["train", "--out", f"{out}/train", "--steps", "5000", "--seed", "0"],
        ["eval-nll", "--out", f"{out}/nll", "--data", "quantized_uniform",
         "--dequant", "uniform", "--eta0", "-10", "--n-points", "256",
         "--samples", "2000", "--seed", "0"],
        ["sample", "--out", f"{out}/samples",
         "--checkpoint", f"{out}/train/checkpoint.json",
         "--n-points", "1000", "--seed", "0"],
    ):
        code = run_command(args)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
