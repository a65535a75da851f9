"""Dimensional ablation over d in {1, 20, 50, 100}, five runs each.

Writes the per-run CSV plus mean/std rows and prints a summary table.

    python3 scripts/ablation.py --out ablation.csv --json ablation.json
"""

import argparse

from convexrec import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dims", default="1,20,50,100")
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--iters", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="ablation.csv")
    ap.add_argument("--json", default=None)
    args = ap.parse_args()
    argv = ["ablate", "--target-dim", args.dims, "--runs", str(args.runs), "--iters", str(args.iters),
            "--seed", str(args.seed), "--out", args.out]
    if args.json:
        argv += ["--json", args.json]
    raise SystemExit(cli.main(argv))


if __name__ == "__main__":
    main()
