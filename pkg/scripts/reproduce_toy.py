"""Train every toy preset, evaluate under PGD-L2 (eps 15, 10 steps of 2) and export boundaries.

    python3 scripts/reproduce_toy.py --out runs
"""
import argparse
import json
from pathlib import Path

from paglab import cli, config

ORDER = ["toy-vanilla", "toy-pag-oi", "toy-pag-cm", "toy-pag-nn", "toy-at", "toy-rigd"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    root = Path(args.out)
    rows = []
    for preset in ORDER:
        over = {"seed": str(args.seed)}
        if preset == "toy-rigd":
            over["teacher"] = str(root / "toy-at" / "model.ckpt")
        rep = cli.cmd_train(config.resolve(preset=preset, overrides=over), root / preset)
        rows.append((preset, rep["test_clean_acc"], rep["test_robust_acc"]))
        print(f"{preset:12s} clean {rep['test_clean_acc']:.4f}  robust {rep['test_robust_acc']:.4f}", flush=True)
    for preset in ("toy-vanilla", "toy-pag-nn"):
        cfg = config.resolve(overrides={"checkpoint": str(root / preset / "model.ckpt")})
        summary = cli.cmd_export_boundary(cfg, root / preset / "boundary")
        print(f"{preset:12s} boundary margin per class {summary['margin_per_class']}")
    (root / "summary.json").write_text(json.dumps(
        [{"preset": p, "clean_acc": c, "robust_acc": r} for p, c, r in rows], indent=2) + "\n")


if __name__ == "__main__":
    main()
