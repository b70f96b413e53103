"""Replicated calibration study on the default synthetic design.

Writes results/calibration.csv (bias / coverage / width per model and time
point), results/calibration_replicates.csv and a manifest. The acceptance
suite reads the table; rerun this script after changing the sampler or the
design.

    python3 scripts/run_calibration.py                 # 100 reps, gp, gp_half, weibull
    python3 scripts/run_calibration.py --reps 5 --out /tmp/quick.csv
"""

import argparse
import sys
import time
from pathlib import Path

from gpdtr import cli

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--models", default="gp,gp_half,weibull")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--out", default=str(ROOT / "results" / "calibration.csv"))
    args = p.parse_args(argv)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    start = time.time()
    rc = cli.main([
        "calibrate", "--reps", str(args.reps), "--models", args.models, "--t", "5,10,15,20",
        "--M", "4000", "--M-star", "2000", "--thin", "10", "--B", "5000", "--n-truth", "1000000",
        "--seed", str(args.seed), "--threads", str(args.threads), "--out", args.out, "-v",
    ])
    print(f"finished in {time.time() - start:.0f} s -> {args.out}", file=sys.stderr)
    if rc == 0:
        print(Path(args.out).read_text(), end="")
    return rc


if __name__ == "__main__":
    sys.exit(main())
