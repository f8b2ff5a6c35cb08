import csv
import json

import numpy as np
import pytest

from mtd2nn.cli import main
from mtd2nn.config import ConfigError, load_config, parse_config
from mtd2nn.dataio import load_checkpoint

from test_dataio import write_idx


@pytest.fixture
def data_dir(tmp_path):
    rng = np.random.default_rng(0)
    d = tmp_path / "data"
    d.mkdir()
    for task in ("a", "b"):
        for split, n in (("train", 16), ("test", 8)):
            write_idx(d / f"{task}-{split}-images", rng.integers(0, 256, (n, 28, 28)))
            write_idx(d / f"{task}-{split}-labels", rng.integers(0, 10, n))
    return d


def make_config(tmp_path, data_dir, **overrides):
    cfg = {
        "architecture": {"grid": 20, "seed": 1},
        "encoding": {"amplitude": 0.2},
        "training": {"epochs": 1, "batch_size": 4, "eta": 0.05},
        "data": [{"name": name, "polarity": pol,
                  **{f"{s}_{k}": str(data_dir / f"{t}-{s}-{k}")
                     for s in ("train", "test") for k in ("images", "labels")}}
                 for name, t, pol in (("digits", "a", "argmin"), ("clothes", "b", "argmax"))],
        "noise": {"detector_sigmas": [0.0, 0.1], "device_sigmas": [0.0, 0.2],
                  "splitter_epsilons": [0.0, 0.1], "repeats": 2},
        "output_dir": str(tmp_path / "run"),
    }
    for key, value in overrides.items():
        cfg[key] = {**cfg[key], **value} if isinstance(value, dict) else value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_full_pipeline(tmp_path, data_dir, capsys):
    cfg = make_config(tmp_path, data_dir)
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg)]) == 0
    ck = run / "checkpoint.d2nn"
    model, state, meta = load_checkpoint(ck)
    assert len(model.masks()) == 8 and meta["update_rule"] == "adam-autograd"
    assert meta["epochs"] == 1 and state["step"] == 4
    assert len((run / "metrics.jsonl").read_text().splitlines()) == 1
    assert (run / "training_curves.png").stat().st_size > 0

    assert main(["eval", "--config", str(cfg), "--checkpoint", str(ck)]) == 0
    first = json.loads((run / "eval.json").read_text())
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(ck)]) == 0
    assert json.loads((run / "eval.json").read_text()) == first
    assert first["tasks"] == ["digits", "clothes"] and first["detectors"] == 10

    assert main(["sweep", "--config", str(cfg), "--checkpoint", str(ck),
                 "--grid", "detector_device"]) == 0
    with open(run / "sweep_detector_device_summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 * 2
    clean = [r for r in rows if float(r["detector_sigma"]) == 0 and float(r["device_sigma"]) == 0]
    assert [float(r["mean"]) for r in clean] == pytest.approx(first["accuracy"], abs=0)
    assert (run / "heatmap_detector_device_task1.pgm").read_bytes().startswith(b"P5 2 2 255\n")
    assert (run / "heatmap_detector_device_task2.png").exists()

    capsys.readouterr()
    assert main(["visualize", "--config", str(cfg), "--checkpoint", str(ck), "--sample", "3",
                 "--task", "2"]) == 0
    info = json.loads(capsys.readouterr().out)
    stages = sorted((run / "stages").glob("*.pgm"))
    assert info["stages"] == len(stages) == 1 + 4 + 4 + 2
    snapshot = [p.read_bytes() for p in stages]
    main(["visualize", "--config", str(cfg), "--checkpoint", str(ck), "--sample", "3",
          "--task", "2"])
    assert [p.read_bytes() for p in stages] == snapshot
    assert len((run / "reading.csv").read_text().splitlines()) == 11


def test_four_task_train_has_twelve_masks(tmp_path, data_dir):
    cfg = json.loads(make_config(tmp_path, data_dir).read_text())
    cfg["architecture"]["n_tasks"] = 4
    cfg["training"]["lambdas"] = [1, 1, 1, 1]
    cfg["data"] = [dict(cfg["data"][i % 2], polarity="") for i in range(4)]
    path = tmp_path / "four.json"
    path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "four")]) == 0
    model, _, _ = load_checkpoint(tmp_path / "four" / "checkpoint.d2nn")
    assert len(model.masks()) == 12


def test_lambda_zero_rejected_before_compute(tmp_path, data_dir, capsys):
    cfg = make_config(tmp_path, data_dir, training={"lambdas": [0, 1]})
    assert main(["train", "--config", str(cfg)]) == 1
    assert "lambda" in capsys.readouterr().err
    assert not (tmp_path / "run").exists()


def test_all_problems_listed(tmp_path, data_dir):
    raw = json.loads(make_config(tmp_path, data_dir).read_text())
    raw["architecture"]["grdi"] = 3
    raw["training"]["eta"] = -1
    raw["data"][0]["train_images"] = str(tmp_path / "missing")
    raw["data"][1]["polarity"] = "argmin"
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    text = "\n".join(err.value.problems)
    for needle in ("grdi", "eta", "does not exist", "polarity"):
        assert needle in text


def test_unknown_top_level_key(tmp_path, data_dir):
    raw = json.loads(make_config(tmp_path, data_dir).read_text())
    raw["extra"] = 1
    with pytest.raises(ConfigError, match="extra"):
        parse_config(raw)


def test_config_roundtrip(tmp_path, data_dir):
    cfg = load_config(make_config(tmp_path, data_dir))
    assert cfg.architecture.grid == 20 and cfg.noise.repeats == 2
    assert set(cfg.noise.grids()) == {"detector_device", "detector_splitter", "device_splitter"}


def test_missing_checkpoint_and_bad_checkpoint(tmp_path, data_dir):
    cfg = make_config(tmp_path, data_dir)
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(tmp_path / "no")]) == 1
    bad = tmp_path / "bad.d2nn"
    bad.write_bytes(b"D2NN\x01")
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(bad)]) == 2


def test_empty_test_set_is_an_error(tmp_path, data_dir):
    write_idx(data_dir / "b-test-images", np.zeros((0, 28, 28)))
    write_idx(data_dir / "b-test-labels", np.zeros(0))
    cfg = make_config(tmp_path, data_dir, training={"epochs": 0})
    assert main(["train", "--config", str(cfg)]) == 0
    ck = tmp_path / "run" / "checkpoint.d2nn"
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(ck)]) == 1


def test_report_published(tmp_path, capsys):
    assert main(["report", "--published", "--out", str(tmp_path / "rep")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 8
    with open(tmp_path / "rep" / "acc_hw.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert round(float(rows[0]["acc_hw"]), 2) == 1.99


def test_report_from_evals(tmp_path, capsys):
    multi = {"tasks": ["a", "b"], "accuracy": [0.9, 0.8], "detectors": 10}
    singles = [{"tasks": ["a"], "accuracy": [0.95], "detectors": 10},
               {"tasks": ["b"], "accuracy": [0.85], "detectors": 10}]
    paths = []
    for i, obj in enumerate([multi] + singles):
        paths.append(tmp_path / f"e{i}.json")
        paths[-1].write_text(json.dumps(obj))
    assert main(["report", "--multi-eval", str(paths[0]), "--single-eval", str(paths[1]),
                 "--single-eval", str(paths[2])]) == 0
    out = capsys.readouterr().out
    assert f"acc_hw={0.9 / 0.95 * 2:.4f}" in out


def test_report_needs_inputs():
    assert main(["report"]) == 1
