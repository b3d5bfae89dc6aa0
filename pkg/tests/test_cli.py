import json
import subprocess
import sys

import numpy as np
import pytest

from thermalfield.cli import main
from thermalfield.dataset import load_dataset, save_dataset
from thermalfield.mesh import read_ply
from thermalfield.thermal_image import RawThermalImage, decode_pgm8, encode_pgm16

TINY = {"batch_rays": 16, "samples_per_ray": 8, "hidden_width": 8, "hidden_layers": 2,
        "position_frequencies": 2, "direction_frequencies": 1, "iterations": 12, "log_every": 5}


def error_json(capsys) -> dict:
    return json.loads(capsys.readouterr().err.splitlines()[0])


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory, small_bundle):
    root = tmp_path_factory.mktemp("data")
    save_dataset(small_bundle, root)
    return root


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset_dir):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "config.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["train", "--data", str(dataset_dir), "--config", str(cfg), "--out", str(out)]) == 0
    return out


def test_help_lists_commands():
    proc = subprocess.run([sys.executable, "-m", "thermalfield.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("convert", "synth", "train", "render", "eval", "mesh"):
        assert cmd in proc.stdout


def test_usage_error_is_json(capsys):
    assert main(["train"]) == 2
    assert error_json(capsys)["error"] == "usage"


def test_invalid_config_key_reported(tmp_path, dataset_dir, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"nonsense": 1, "batch_rays": 10}))
    assert main(["train", "--data", str(dataset_dir), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = error_json(capsys)
    assert err["error"] == "config"
    assert any("nonsense" in p for p in err["problems"]) and any("batch_rays" in p for p in err["problems"])


def test_bad_workers_env(trained, dataset_dir, capsys, monkeypatch):
    monkeypatch.setenv("THERMALFIELD_WORKERS", "zero")
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.tfld"), "--data", str(dataset_dir)]) == 2
    assert error_json(capsys)["error"] == "config"


def test_missing_dataset(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 2
    assert error_json(capsys)["error"] == "dataset"


def test_train_outputs(trained):
    assert (trained / "checkpoint.tfld").is_file()
    rows = [json.loads(line) for line in (trained / "train_log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in rows] == [5, 10]
    assert json.loads((trained / "config.json").read_text())["iterations"] == 12


def test_render_writes_images(trained, dataset_dir, tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["render", "--checkpoint", str(trained / "checkpoint.tfld"), "--data", str(dataset_dir),
                 "--out", str(out), "--views", "0,9", "--pseudo-color"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["000.npy", "000.pgm", "000.ppm", "009.npy", "009.pgm", "009.ppm"]
    img = decode_pgm8((out / "000.pgm").read_bytes())
    assert np.max(np.abs(img.values - np.load(out / "000.npy"))) <= 0.5 / 255 + 1e-12
    capsys.readouterr()
    assert main(["render", "--checkpoint", str(trained / "checkpoint.tfld"), "--data", str(dataset_dir),
                 "--out", str(out), "--views", "99"]) == 2


def test_eval_prints_tsv_and_json(trained, dataset_dir, tmp_path, capsys):
    report = tmp_path / "m.json"
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.tfld"), "--data", str(dataset_dir),
                 "--samples", "16", "--out", str(report)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "view\tpsnr\tssim\thssim"
    assert [line.split("\t")[0] for line in lines[1:4]] == ["008.pgm", "009.pgm", "mean"]
    scores = json.loads(report.read_text())
    assert scores["views"] == 2 and len(scores["per_view"]) == 2 and np.isfinite(scores["psnr"])


def test_mesh_from_checkpoint_and_grid(trained, tmp_path, capsys):
    ply, grid = tmp_path / "m.ply", tmp_path / "g.tfld"
    assert main(["mesh", "--checkpoint", str(trained / "checkpoint.tfld"), "--resolution", "12",
                 "--save-grid", str(grid), "--out", str(ply)]) == 0
    first = json.loads(capsys.readouterr().out)
    mesh = read_ply(ply)
    assert len(mesh.triangles) == first["triangles"]
    if len(mesh.vertices):
        assert mesh.scalars is not None
    assert main(["mesh", "--grid", str(grid), "--out", str(tmp_path / "m2.ply")]) == 0
    assert json.loads(capsys.readouterr().out)["triangles"] == first["triangles"]
    assert main(["mesh", "--out", str(ply)]) == 2


def test_convert_raw_sequence(tmp_path, capsys):
    raw = tmp_path / "raw"
    (raw / "images").mkdir(parents=True)
    rng = np.random.default_rng(0)
    for i in range(3):
        counts = rng.integers(1000, 5000, size=(4, 5)).astype(np.uint16)
        (raw / "images" / f"{i:03d}.pgm").write_bytes(encode_pgm16(RawThermalImage(5, 4, counts)))
    out = tmp_path / "out"
    assert main(["convert", "--raw", str(raw), "--out", str(out)]) == 2
    assert error_json(capsys)["error"] == "calibration"
    (raw / "meta.json").write_text(json.dumps({"k": 10.0, "b": -50.0}))
    assert main(["convert", "--raw", str(raw), "--out", str(out)]) == 0
    meta = json.loads((out / "meta.json").read_text())
    assert meta["k"] == 10.0 and meta["t_min"] < meta["t_max"]
    vals = np.concatenate([decode_pgm8(p.read_bytes()).values.ravel() for p in sorted((out / "images").glob("*.pgm"))])
    assert vals.min() == 0.0 and vals.max() == 1.0


def test_synth_layout(tmp_path, capsys):
    assert main(["synth", "--views", "3", "--res", "6", "--test-views", "1", "--bit-depth", "8", "--out", str(tmp_path)]) == 0
    bundle = load_dataset(tmp_path)
    assert len(bundle.images) == 4 and bundle.splits.count("test") == 1
    assert {p.name for p in tmp_path.iterdir()} == {"images", "poses.json", "meta.json"}
