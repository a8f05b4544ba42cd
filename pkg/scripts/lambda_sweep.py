"""Lambda ablation on the toy problem: robust accuracy rises with lambda, clean accuracy holds.

    python3 scripts/lambda_sweep.py --preset toy-pag-nn --lambdas 0 0.25 0.5 1 2 4
"""
import argparse
import csv
from pathlib import Path

from paglab import cli, config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--preset", default="toy-pag-nn")
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0, 0.5, 1, 2])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args()
    cfg = config.resolve(preset=args.preset, overrides={
        "lambdas": ",".join(repr(l) for l in args.lambdas), "seed": str(args.seed)})
    cli.cmd_sweep_lambda(cfg, Path(args.out))
    for row in csv.DictReader((Path(args.out) / "sweep.csv").open()):
        print(f"lambda {float(row['lambda']):5.2f}  clean {float(row['clean_acc']):.4f}  "
              f"robust {float(row['robust_acc']):.4f}")


if __name__ == "__main__":
    main()
