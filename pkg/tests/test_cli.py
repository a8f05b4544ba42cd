import csv
import json

import numpy as np
import pytest

from paglab import cli, config, data, models, reps

SMALL = ["--set", "toy_per_mode=40", "--set", "toy_test_per_mode=10", "--set", "epochs=3"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def read(p):
    return p.read_bytes()


# -- config -----------------------------------------------------------------

def test_config_text_parsing(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\nlam = 0.25  # trailing\n\nregime=pag\nat_random_init=false\n")
    cfg = config.resolve(p)
    assert cfg.lam == 0.25 and cfg.regime == "pag" and cfg.at_random_init is False


def test_config_rejects_unknown_and_malformed(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("lamda=1\n")
    with pytest.raises(config.ConfigError, match="unknown config key 'lamda'"):
        config.resolve(p)
    p.write_text("just words\n")
    with pytest.raises(config.ConfigError, match="line 1"):
        config.resolve(p)
    with pytest.raises(config.ConfigError, match="epochs"):
        config.resolve(overrides={"epochs": "ten"})


def test_precedence_and_round_trip(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("lam=0.3\nseed=4\n")
    cfg = config.resolve(p, "toy-pag-nn", {"seed": "9"})
    assert (cfg.scheme, cfg.lam, cfg.seed, cfg.attack_step_size) == ("nearest-neighbor", 0.3, 9, "2")
    q = tmp_path / "resolved.txt"
    q.write_text(cfg.to_text())
    assert config.resolve(q) == cfg


def test_every_preset_resolves():
    for name in config.PRESETS:
        cfg = config.resolve(preset=name)
        cfg.train_config()
        assert cfg.attack().alpha(cfg.threat()) == 2.0


def test_unknown_override_is_an_error(tmp_path, capsys):
    assert run("train", "--set", "bogus=1", "--out", tmp_path / "o") == 1
    assert "bogus" in capsys.readouterr().err


# -- make-reps ---------------------------------------------------------------

def test_make_reps_shape_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.store", tmp_path / "b.store"
    assert run("make-reps", "--scheme", "nn", "--pool", 100, "--seed", 0, "--out", a) == 0
    summary = json.loads(capsys.readouterr().out)
    assert (summary["N"], summary["C"], summary["M"], summary["pool"]) == (6000, 2, 2, 100)
    assert len(summary["mean_target_norm_per_class"]) == 2
    run("make-reps", "--scheme", "nn", "--pool", 100, "--seed", 0, "--out", b)
    assert read(a) == read(b)
    store = reps.load_store(a)
    assert store.shape == (6000, 2, 2)
    manifest = json.loads((tmp_path / "a.store.manifest.json").read_text())
    assert manifest["version"].startswith("paglab ") and "train:toy" in manifest["inputs"]
    assert (tmp_path / "a.store.config.txt").read_text() == (tmp_path / "b.store.config.txt").read_text()


def test_rigd_without_teacher_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("make-reps", "--scheme", "rigd", "--out", tmp_path / "r.store")
    assert exc.value.code == 2


# -- train / eval --------------------------------------------------------------

@pytest.mark.parametrize("preset", ["toy-vanilla", "toy-pag-nn", "toy-at"])
def test_train_outputs_are_byte_identical(tmp_path, preset):
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert run("train", "--preset", preset, *SMALL, "--out", o) == 0
    names = ["model.ckpt", "metrics.csv", "report.json", "config.txt", "manifest.json"]
    if preset == "toy-pag-nn":
        names.append("reps.store")
    for name in names:
        assert read(outs[0] / name) == read(outs[1] / name), name
    report = json.loads((outs[0] / "report.json").read_text())
    assert {"test_clean_acc", "test_robust_acc", "attack"} <= set(report)


def test_at_checkpoint_feeds_rigd(tmp_path, capsys):
    run("train", "--preset", "toy-at", *SMALL, "--out", tmp_path / "at")
    teacher = tmp_path / "at" / "model.ckpt"
    capsys.readouterr()
    assert run("make-reps", "--scheme", "rigd", "--teacher", teacher, "--set", "toy_per_mode=40",
               "--out", tmp_path / "r.store") == 0
    assert "upper bound" in json.loads(capsys.readouterr().out)["label"]
    assert run("train", "--preset", "toy-rigd", "--teacher", teacher, *SMALL, "--out", tmp_path / "rg") == 0
    manifest = json.loads((tmp_path / "rg" / "manifest.json").read_text())
    assert any(k.startswith("teacher:") for k in manifest["inputs"])


@pytest.fixture(scope="module")
def vanilla_ckpt(tmp_path_factory):
    out = tmp_path_factory.mktemp("van")
    assert run("train", "--preset", "toy-vanilla", *SMALL, "--set", "epochs=20", "--out", out) == 0
    return out / "model.ckpt"


def test_eval_zero_eps_and_step_echo(tmp_path, vanilla_ckpt, capsys):
    small = ["--set", "toy_test_per_mode=10"]
    capsys.readouterr()
    run("eval", "--checkpoint", vanilla_ckpt, "--eps", 0, *small)
    r0 = json.loads(capsys.readouterr().out)
    assert r0["robust_acc"] == r0["clean_acc"]
    run("eval", "--checkpoint", vanilla_ckpt, "--eps", 15, "--steps", 10, *small, "--out", tmp_path / "e")
    r = json.loads(capsys.readouterr().out)
    assert r["attack"]["step_size"] == pytest.approx(3.0) and r["attack"]["step_size_source"] == "2*eps/steps"
    assert r["robust_acc"] <= r["clean_acc"]
    assert json.loads((tmp_path / "e" / "report.json").read_text()) == r
    assert (tmp_path / "e" / "config.txt").exists() and (tmp_path / "e" / "manifest.json").exists()


def test_eval_missing_checkpoint_is_usage_error():
    with pytest.raises(SystemExit):
        run("eval")


# -- export-boundary -----------------------------------------------------------

def ppm_pixels(path):
    raw = path.read_bytes()
    magic, dims, maxval, body = raw.split(b"\n", 3)
    w, h = map(int, dims.split())
    assert magic == b"P6" and maxval == b"255"
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def test_export_raster_dims_and_csvs(tmp_path, vanilla_ckpt):
    out = tmp_path / "b"
    assert run("export-boundary", "--checkpoint", vanilla_ckpt, "--grid-res", "30,20",
               "--set", "toy_test_per_mode=10", "--out", out) == 0
    px = ppm_pixels(out / "boundary.ppm")
    assert px.shape == (20, 30, 3)
    grid = list(csv.reader((out / "grid.csv").open()))
    assert grid[0] == ["x1", "x2", "pred"] and len(grid) == 1 + 600
    pts = list(csv.reader((out / "points.csv").open()))
    assert pts[0] == ["x1", "x2", "label", "pred"] and len(pts) == 1 + 60
    summary = json.loads((out / "boundary.json").read_text())
    assert set(summary["margin_per_class"]) == {"0", "1"}


def test_export_default_grid(tmp_path, vanilla_ckpt):
    out = tmp_path / "b"
    run("export-boundary", "--checkpoint", vanilla_ckpt, "--set", "toy_test_per_mode=5", "--out", out)
    assert ppm_pixels(out / "boundary.ppm").shape == (600, 600, 3)


def test_constant_model_single_color(tmp_path):
    m = models.MlpModel([2, 2], [np.zeros((2, 2))], [np.array([0.0, 1.0])])
    ck = tmp_path / "c.ckpt"
    models.save(m, ck)
    run("export-boundary", "--checkpoint", ck, "--grid-res", "16,16", "--set", "toy_test_per_mode=5",
        "--out", tmp_path / "b")
    px = ppm_pixels(tmp_path / "b" / "boundary.ppm").reshape(-1, 3)
    assert len(np.unique(px, axis=0)) == 1
    summary = json.loads((tmp_path / "b" / "boundary.json").read_text())
    # every cell predicts class 1, so class 1 points have no opposite cell
    assert summary["margin_per_class"]["1"] is None


def test_export_rejects_non_2d_model(tmp_path):
    ck = tmp_path / "m.ckpt"
    models.save(models.init([3, 4, 2], 0), ck)
    with pytest.raises(SystemExit):
        run("export-boundary", "--checkpoint", ck, "--out", tmp_path / "b")


def test_margin_against_brute_force():
    cells = np.array([[[0.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [1.0, 1.0]]])
    pred = np.array([[0, 1], [0, 0]])
    X = np.array([[0.0, 0.0], [0.2, 1.0], [3.0, 0.0]])
    y = np.array([0, 0, 1])
    got = cli.boundary_margins(cells, pred, X, y, 2)
    d0 = [1.0, np.hypot(0.8, 1.0)]
    d1 = [min(np.hypot(3.0, 0.0), np.hypot(3.0, 1.0), np.hypot(2.0, 1.0))]
    assert got["0"] == pytest.approx(np.mean(d0))
    assert got["1"] == pytest.approx(np.mean(d1))


# -- sweep ---------------------------------------------------------------------

def test_sweep_rows_and_zero_lambda_matches_vanilla(tmp_path):
    van = tmp_path / "v"
    run("train", "--preset", "toy-vanilla", *SMALL, "--out", van)
    out = tmp_path / "s"
    assert run("sweep-lambda", "--preset", "toy-pag-cm", *SMALL, "--lambdas", "0,0.5,1", "--out", out) == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert [float(r["lambda"]) for r in rows] == [0.0, 0.5, 1.0]
    vr = json.loads((van / "report.json").read_text())
    assert float(rows[0]["clean_acc"]) == vr["test_clean_acc"]
    assert float(rows[0]["robust_acc"]) == vr["test_robust_acc"]
    a, b = models.load(out / "model_0.ckpt"), models.load(van / "model.ckpt")
    assert all(p.tobytes() == q.tobytes() for p, q in zip(a.params(), b.params()))


def test_sweep_needs_pag(tmp_path):
    with pytest.raises(SystemExit):
        run("sweep-lambda", "--preset", "toy-vanilla", "--out", tmp_path / "s")


# -- file datasets -------------------------------------------------------------

def test_train_on_csv_and_image_files(tmp_path):
    train, test = data.toy_generate(0, per_mode=20, test_per_mode=5)
    data.save_csv(train, tmp_path / "tr.csv")
    data.save_csv(test, tmp_path / "te.csv")
    assert run("train", "--dataset", tmp_path / "tr.csv", "--test-dataset", tmp_path / "te.csv",
               "--regime", "pag", "--scheme", "cm", "--lam", 0.5, "--epochs", 2, "--out", tmp_path / "c") == 0
    manifest = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert any(k.startswith("train:") and k.endswith("tr.csv") for k in manifest["inputs"])

    rng = np.random.default_rng(0)
    labels = np.arange(40) % 10
    data.write_image_batches(tmp_path / "img.bin", rng.integers(0, 256, size=(40, 3072)), labels)
    assert run("train", "--dataset", tmp_path / "img.bin", "--test-dataset", tmp_path / "img.bin",
               "--set", "layer_dims=3072,8,10", "--regime", "pag", "--scheme", "oi", "--lam", 1,
               "--epochs", 1, "--set", "attack_eps=0.03", "--set", "attack_steps=2",
               "--set", "clamp=0,1", "--out", tmp_path / "i") == 0


def test_missing_dataset_file_is_usage_error(tmp_path):
    with pytest.raises(SystemExit):
        run("train", "--dataset", tmp_path / "nope.csv", "--out", tmp_path / "o")
