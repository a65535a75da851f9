"""Train one CNF on one random convex ReLU target and print the training curve.

    python3 scripts/toy_experiment.py --dim 1 --iters 200 --out curve.csv
"""

import argparse
import json

from convexrec import io, training


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dim", type=int, default=1)
    ap.add_argument("--run", type=int, default=0)
    ap.add_argument("--iters", type=int, default=200)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="CSV of iteration, train_mse")
    args = ap.parse_args()

    cfg = training.TrainConfig(iterations=args.iters, learning_rate=args.lr, seed=args.seed)
    _, rep = training.toy_run(args.dim, args.run, cfg)
    if args.out:
        rows = [{"iteration": i, "train_mse": v} for i, v in enumerate(rep.train_mse)]
        io.atomic_write_text(args.out, io.format_table(rows, ("iteration", "train_mse")))
    print(json.dumps({
        "dim": args.dim,
        "param_count": rep.param_count,
        "param_ratio": rep.param_ratio,
        "initial_train_mse": rep.train_mse[0],
        "final_train_mse": rep.train_mse[-1],
        "test_mse": rep.test_mse,
        "max_jensen_gap": rep.jensen_gap,
        "target_output_std": rep.output_scale,
    }))


if __name__ == "__main__":
    main()
