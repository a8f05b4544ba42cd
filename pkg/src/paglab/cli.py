"""Command-line driver: ``paglab {make-reps,train,eval,export-boundary,sweep-lambda}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, attacks, data, models, reps, trainer
from .config import PRESETS, ConfigError, RunConfig, file_sha256, resolve
from .gradcore import GradError, ShapeError

log = logging.getLogger("paglab")

RIGD_LABEL = "rigd (teacher-derived targets; an upper bound, not a PAG-free method)"

# RGB colors per class for raster export
PALETTE = np.array([[66, 133, 244], [234, 67, 53], [52, 168, 83], [251, 188, 5], [155, 81, 224],
                    [0, 172, 193], [255, 112, 67], [121, 85, 72], [158, 158, 158], [0, 0, 0]],
                   dtype=np.uint8)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# run context: inputs are hashed as they are loaded so every output dir records them

class Run:
    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.inputs: dict[str, str] = {}

    def dataset(self, source: str, split: str) -> data.Dataset:
        cfg = self.cfg
        if source == "toy":
            train, test = data.toy_generate(cfg.toy_seed, cfg.toy_per_mode, cfg.toy_test_per_mode)
            ds = train if split == "train" else test
            self.inputs[f"{split}:toy"] = ds.content_hash()
            return ds
        path = Path(source)
        if not path.exists():
            raise UsageError(f"dataset {source!r} not found (use 'toy' or a .csv / .bin path)")
        self.inputs[f"{split}:{source}"] = file_sha256(path)
        if path.suffix.lower() == ".csv":
            return data.load_csv(path, cfg.num_classes or None, split=split)
        return data.load_image_batches(path, cfg.image_limit or None, split=split)

    def model(self, path: str, what: str = "checkpoint") -> models.MlpModel:
        if not path:
            raise UsageError(f"a {what} path is required")
        self.inputs[f"{what}:{path}"] = file_sha256(path)
        return models.load(path)

    def store(self, ds: data.Dataset, reuse: bool = True) -> reps.RepStore:
        cfg = self.cfg
        if reuse and cfg.store:
            self.inputs[f"store:{cfg.store}"] = file_sha256(cfg.store)
            return reps.load_store(cfg.store, ds)
        scheme = cfg.scheme_name()
        if not scheme:
            raise UsageError("the pag regime needs scheme=... or store=...")
        teacher = None
        if scheme == "rigd":
            if not cfg.teacher:
                raise UsageError("scheme rigd requires --teacher")
            teacher = self.model(cfg.teacher, "teacher")
        return reps.build(ds, scheme, seed=cfg.rep_seed, pool=cfg.pool, teacher=teacher)

    def write_manifest(self, config_path: Path, manifest_path: Path) -> None:
        config_path.parent.mkdir(parents=True, exist_ok=True)
        config_path.write_text(self.cfg.to_text(), encoding="utf-8")
        manifest = {"command": self.command, "version": f"paglab {__version__}",
                    "inputs": dict(sorted(self.inputs.items()))}
        manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")

    def write_dir_manifest(self, out: Path) -> None:
        self.write_manifest(out / "config.txt", out / "manifest.json")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def evaluate(model: models.MlpModel, ds: data.Dataset, cfg: RunConfig) -> dict:
    threat, attack = cfg.threat(), cfg.attack()
    clean = models.accuracy(model, ds.X, ds.y)
    robust = attacks.robust_accuracy(model, ds, attack, threat, seed=cfg.attack_seed)
    return {
        "clean_acc": clean,
        "robust_acc": robust,
        "n": len(ds),
        "attack": {"method": "pgd", "norm": threat.norm, "eps": threat.eps, "steps": attack.steps,
                   "step_size": attack.alpha(threat),
                   "step_size_source": "config" if cfg.attack_step_size else "2*eps/steps",
                   "random_init": attack.random_init, "target": attack.target,
                   "clamp": list(threat.clamp) if threat.clamp else None, "seed": cfg.attack_seed},
    }


# ---------------------------------------------------------------------------
# commands

def cmd_make_reps(cfg: RunConfig, out: Path) -> dict:
    run = Run("make-reps", cfg)
    if not cfg.scheme_name():
        raise UsageError("make-reps needs --scheme")
    if cfg.scheme_name() == "rigd" and not cfg.teacher:
        raise UsageError("scheme rigd requires --teacher")
    ds = run.dataset(cfg.dataset, "train")
    store = run.store(ds, reuse=False)
    out.parent.mkdir(parents=True, exist_ok=True)
    reps.save_store(store, out)
    run.write_manifest(out.with_name(out.name + ".config.txt"), out.with_name(out.name + ".manifest.json"))
    norms = np.linalg.norm(store.targets, axis=2)
    n, c, m = store.shape
    summary = {"scheme": store.scheme, "N": n, "C": c, "M": m,
               "pool": cfg.pool if store.scheme == "nearest-neighbor" else None,
               "mean_target_norm_per_class": [float(v) for v in norms.mean(axis=0)],
               "store": str(out)}
    if store.scheme == "rigd":
        summary["label"] = RIGD_LABEL
    return summary


def _train_one(cfg: RunConfig, train_ds, store):
    model = models.init(cfg.dims(), cfg.seed)
    return trainer.train(model, train_ds, cfg.train_config(), store)


def cmd_train(cfg: RunConfig, out: Path) -> dict:
    run = Run("train", cfg)
    train_ds = run.dataset(cfg.dataset, "train")
    test_ds = run.dataset(cfg.test_dataset, "test")
    store = run.store(train_ds) if cfg.regime == "pag" else None
    out.mkdir(parents=True, exist_ok=True)
    model, records = _train_one(cfg, train_ds, store)
    if store is not None:
        model.metadata["scheme"] = store.scheme
        reps.save_store(store, out / "reps.store")
    models.save(model, out / "model.ckpt")
    trainer.write_metrics(records, out / "metrics.csv")
    report = {"regime": cfg.regime, "train_clean_acc": records[-1].clean_acc,
              **{("test_" + k if k in ("clean_acc", "robust_acc", "n") else k): v
                 for k, v in evaluate(model, test_ds, cfg).items()}}
    if store is not None and store.scheme == "rigd":
        report["label"] = RIGD_LABEL
    _write_json(out / "report.json", report)
    run.write_dir_manifest(out)
    return report


def cmd_eval(cfg: RunConfig, out: Path | None) -> dict:
    run = Run("eval", cfg)
    model = run.model(cfg.checkpoint)
    ds = run.dataset(cfg.test_dataset, "test")
    if model.input_dim != ds.dim:
        raise UsageError(f"checkpoint expects M={model.input_dim} but dataset has M={ds.dim}")
    report = evaluate(model, ds, cfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "report.json", report)
        run.write_dir_manifest(out)
    return report


def grid_predictions(model: models.MlpModel, x1_range, x2_range, res):
    """Cell-center coordinates (H, W, 2) and argmax predictions (H, W); row 0 is the top (max x2)."""
    (a, b), (c, d), (w, h) = x1_range, x2_range, res
    xs = a + (np.arange(w) + 0.5) * (b - a) / w
    ys = d - (np.arange(h) + 0.5) * (d - c) / h
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx, gy], axis=-1)
    flat = pts.reshape(-1, 2)
    pred = np.concatenate([models.predict(model, flat[i:i + 65536]) for i in range(0, len(flat), 65536)])
    return pts, pred.reshape(h, w)


def boundary_margins(cells: np.ndarray, cell_pred: np.ndarray, X: np.ndarray, y: np.ndarray,
                     num_classes: int, chunk: int = 16) -> dict:
    """Per class, mean distance from its test points to the nearest cell predicting another class."""
    cells, cell_pred = cells.reshape(-1, 2), cell_pred.reshape(-1)
    out = {}
    for k in range(num_classes):
        pts = X[y == k]
        other = cells[cell_pred != k]
        if len(pts) == 0 or len(other) == 0:
            out[str(k)] = None
            continue
        dists = []
        for lo in range(0, len(pts), chunk):
            diff = pts[lo:lo + chunk, None, :] - other[None]
            dists.append(np.sqrt(np.min(np.einsum("ijk,ijk->ij", diff, diff), axis=1)))
        out[str(k)] = float(np.mean(np.concatenate(dists)))
    return out


def write_ppm(path: Path, pred: np.ndarray) -> None:
    h, w = pred.shape
    rgb = PALETTE[pred % len(PALETTE)]
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


def cmd_export_boundary(cfg: RunConfig, out: Path) -> dict:
    run = Run("export-boundary", cfg)
    model = run.model(cfg.checkpoint)
    if model.input_dim != 2:
        raise UsageError(f"export-boundary needs a 2-D model, checkpoint has input dim {model.input_dim}")
    ds = run.dataset(cfg.test_dataset, "test")
    x1, x2, res = cfg.grid()
    cells, pred = grid_predictions(model, x1, x2, res)
    out.mkdir(parents=True, exist_ok=True)
    write_ppm(out / "boundary.ppm", pred)
    with open(out / "grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "pred"])
        for (a, b), p in zip(cells.reshape(-1, 2), pred.reshape(-1)):
            w.writerow([repr(float(a)), repr(float(b)), int(p)])
    test_pred = models.predict(model, ds.X)
    with open(out / "points.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "label", "pred"])
        for x, lab, p in zip(ds.X, ds.y, test_pred):
            w.writerow([repr(float(x[0])), repr(float(x[1])), int(lab), int(p)])
    margins = boundary_margins(cells, pred, ds.X, ds.y, model.num_classes)
    finite = [v for v in margins.values() if v is not None]
    summary = {"width": res[0], "height": res[1], "x1": list(x1), "x2": list(x2),
               "class_counts": {str(k): int(np.sum(pred == k)) for k in range(model.num_classes)},
               "margin_per_class": margins,
               "margin_mean": float(np.mean(finite)) if finite else None}
    _write_json(out / "boundary.json", summary)
    run.write_dir_manifest(out)
    return summary


def _sweep_worker(args):
    cfg, lam, train_ds, test_ds, store = args
    run_cfg = cfg.updated({"lam": repr(lam)})
    model, _ = _train_one(run_cfg, train_ds, store)
    ev = evaluate(model, test_ds, run_cfg)
    return lam, model, ev["clean_acc"], ev["robust_acc"]


def cmd_sweep_lambda(cfg: RunConfig, out: Path, jobs: int = 1) -> list[dict]:
    if cfg.regime != "pag":
        raise UsageError("sweep-lambda needs a pag regime config")
    lams = cfg.lambda_list()
    if not lams:
        raise UsageError("empty lambda list")
    run = Run("sweep-lambda", cfg)
    train_ds = run.dataset(cfg.dataset, "train")
    test_ds = run.dataset(cfg.test_dataset, "test")
    store = run.store(train_ds)
    tasks = [(cfg, lam, train_ds, test_ds, store) for lam in lams]
    # every lambda shares the run seed, so lambda=0 reproduces the vanilla run exactly
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_worker, tasks))
    else:
        results = [_sweep_worker(t) for t in tasks]
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "clean_acc", "robust_acc"])
        for i, (lam, model, clean, robust) in enumerate(results):
            w.writerow([repr(lam), repr(clean), repr(robust)])
            models.save(model, out / f"model_{i}.ckpt")
            rows.append({"lambda": lam, "clean_acc": clean, "robust_acc": robust})
    run.write_dir_manifest(out)
    return rows


# ---------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a named toy preset")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


# shortcut flags; each writes to the config key of the same name
_SHORTCUTS = {
    "make-reps": [("--scheme", "scheme"), ("--dataset", "dataset"), ("--pool", "pool"),
                  ("--seed", "rep_seed"), ("--teacher", "teacher")],
    "train": [("--dataset", "dataset"), ("--test-dataset", "test_dataset"), ("--regime", "regime"),
              ("--scheme", "scheme"), ("--store", "store"), ("--teacher", "teacher"),
              ("--lam", "lam"), ("--seed", "seed"), ("--epochs", "epochs")],
    "eval": [("--checkpoint", "checkpoint"), ("--dataset", "test_dataset"), ("--norm", "attack_norm"),
             ("--eps", "attack_eps"), ("--steps", "attack_steps"), ("--step-size", "attack_step_size"),
             ("--attack-seed", "attack_seed")],
    "export-boundary": [("--checkpoint", "checkpoint"), ("--dataset", "test_dataset"),
                        ("--grid-x1", "grid_x1"), ("--grid-x2", "grid_x2"), ("--grid-res", "grid_res")],
    "sweep-lambda": [("--lambdas", "lambdas"), ("--scheme", "scheme"), ("--store", "store"),
                     ("--seed", "seed"), ("--teacher", "teacher")],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paglab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"paglab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"make-reps": "build a representative-gradient store",
             "train": "train a model (vanilla, pag or adversarial)",
             "eval": "clean and PGD robust accuracy of a checkpoint",
             "export-boundary": "rasterize a 2-D model's decision regions",
             "sweep-lambda": "train one pag model per lambda"}
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        _common(p)
        for flag, key in _SHORTCUTS[name]:
            p.add_argument(flag, dest=f"cfg_{key}", metavar=key.upper())
        if name == "make-reps":
            p.add_argument("--out", required=True, help="store file to write")
        elif name == "eval":
            p.add_argument("--out", help="optional directory for report.json")
        else:
            p.add_argument("--out", required=True, help="output directory")
        if name == "sweep-lambda":
            p.add_argument("--jobs", type=int, default=1, help="parallel trainings")
    return parser


def _overrides(args) -> dict[str, str]:
    items = {}
    for kv in args.set:
        if "=" not in kv:
            raise UsageError(f"--set expects KEY=VALUE, got {kv!r}")
        k, v = kv.split("=", 1)
        items[k.strip()] = v
    for name, value in vars(args).items():
        if name.startswith("cfg_") and value is not None:
            items[name[4:]] = value
    return items


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.config, args.preset, _overrides(args))
        out = Path(args.out) if args.out else None
        if args.command == "make-reps":
            result = cmd_make_reps(cfg, out)
        elif args.command == "train":
            result = cmd_train(cfg, out)
        elif args.command == "eval":
            result = cmd_eval(cfg, out)
        elif args.command == "export-boundary":
            result = cmd_export_boundary(cfg, out)
        else:
            result = cmd_sweep_lambda(cfg, out, args.jobs)
    except UsageError as exc:
        parser.error(str(exc))
    except (ConfigError, data.DataError, reps.StoreError, models.CheckpointError,
            trainer.TrainingError, ShapeError, GradError, ValueError, OSError) as exc:
        print(f"paglab: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
