"""End-to-end CLI: subcommands, exit codes, produced artifacts, determinism."""

import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conftest import make_rafdb_fixture, tiny_config
from mtfer.cli import main
from mtfer.data import load_cache, save_cache
from mtfer.model import build_model, save_checkpoint
from mtfer.preprocess import write_pnm
from mtfer.synthetic import synthetic_examples

TINY_BLOCKS = [
    {"kind": "conv2d", "channels": 4, "kernel": 3, "stride": 1},
    {"kind": "relu"},
    {"kind": "maxpool"},
    {"kind": "flatten"},
    {"kind": "dense", "units": 8},
    {"kind": "relu"},
]


def write_run_config(path, cache_path, epochs=2, extra=None, train_extra=None):
    doc = {
        "model": {"blocks": TINY_BLOCKS, "dropout_schedule": [], "seed": 1},
        "train": {"max_epochs": epochs, "seed": 1,
                  "plateau": {"patience": 50}, "early_stop": {"patience": 50}},
        "data": {"kind": "cache", "path": str(cache_path)},
        "split": {"ratio": 0.75, "seed": 3},
    }
    if extra:
        doc.update(extra)
    if train_extra:
        doc["train"].update(train_extra)
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


@pytest.fixture
def cache_file(tmp_path):
    examples = synthetic_examples(16, seed=0, noise=0.2)
    path = tmp_path / "data.bin"
    save_cache(path, examples)
    return path


@pytest.fixture
def biased_checkpoint(tmp_path):
    """Checkpoint whose every head predicts class 0."""
    model = build_model(tiny_config(seed=0))
    for head in ("emotion", "gender", "race", "age"):
        model.params[f"head.{head}.w"][:] = 0.0
        model.params[f"head.{head}.b"][:] = 0.0
        model.params[f"head.{head}.b"][0] = 10.0
    path = tmp_path / "biased.ckpt"
    save_checkpoint(model, path)
    return path


class TestTrainCommand:
    def test_writes_all_artifacts(self, tmp_path, cache_file):
        cfg = write_run_config(tmp_path / "run.json", cache_file, epochs=2)
        out = tmp_path / "out"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "model.ckpt").exists()
        assert (out / "run_config.resolved.json").exists()
        lines = (out / "metrics.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 2   # header + one row per completed epoch

    def test_same_seed_byte_identical(self, tmp_path, cache_file):
        cfg = write_run_config(tmp_path / "run.json", cache_file, epochs=2)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["train", "--config", str(cfg), "--out", str(out),
                         "--seed", "42"]) == 0
            outs.append(out)
        assert (outs[0] / "metrics.csv").read_bytes() == (outs[1] / "metrics.csv").read_bytes()
        assert (outs[0] / "model.ckpt").read_bytes() == (outs[1] / "model.ckpt").read_bytes()

    def test_negative_loss_weight_exit_2(self, tmp_path, cache_file):
        cfg = write_run_config(tmp_path / "run.json", cache_file,
                               train_extra={"loss_weights": {"emotion": -1.0}})
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_unknown_key_exit_2(self, tmp_path, cache_file):
        cfg = write_run_config(tmp_path / "run.json", cache_file,
                               extra={"learning_rate": 1.0})
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_missing_dataset_exit_3(self, tmp_path):
        cfg = write_run_config(tmp_path / "run.json", tmp_path / "nope.bin")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3

    def test_missing_config_exit_3(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "absent.json"),
                     "--out", str(tmp_path / "o")]) == 3

    def test_env_forces_deterministic(self, tmp_path, cache_file, monkeypatch):
        cfg = write_run_config(tmp_path / "run.json", cache_file,
                               extra={"deterministic": False})
        monkeypatch.setenv("MTFER_DETERMINISTIC", "1")
        out = tmp_path / "out"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        resolved = json.loads((out / "run_config.resolved.json").read_text())
        assert resolved["deterministic"] is True


class TestEvalCommand:
    def _train_ckpt(self, tmp_path, cache_file):
        cfg = write_run_config(tmp_path / "run.json", cache_file, epochs=1)
        out = tmp_path / "trained"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        return out / "model.ckpt"

    def test_full_labels_four_numeric_rows(self, tmp_path, cache_file, capsys):
        ckpt = self._train_ckpt(tmp_path, cache_file)
        ej = tmp_path / "eval.json"
        assert main(["eval", "--checkpoint", str(ckpt), "--dataset", str(cache_file),
                     "--out", str(ej)]) == 0
        stdout = capsys.readouterr().out
        assert "N/A" not in stdout
        for label in ("emotion", "gender", "race/ethnicity", "age"):
            assert label in stdout
        doc = json.loads(ej.read_text())
        assert doc["accuracy"]["emotion"] is not None

    def test_emotion_only_shows_na(self, tmp_path, cache_file, capsys):
        ckpt = self._train_ckpt(tmp_path, cache_file)
        emotion_only = synthetic_examples(8, seed=1, noise=0.2, multitask=False)
        data = tmp_path / "fer_style.bin"
        save_cache(data, emotion_only)
        assert main(["eval", "--checkpoint", str(ckpt), "--dataset", str(data),
                     "--out", str(tmp_path / "e.json")]) == 0
        stdout = capsys.readouterr().out
        assert stdout.count("N/A") == 6   # gender/race/age, accuracy + loss
        doc = json.loads((tmp_path / "e.json").read_text())
        assert doc["accuracy"]["gender"] is None

    def test_corrupted_checkpoint_exit_4(self, tmp_path, cache_file):
        ckpt = self._train_ckpt(tmp_path, cache_file)
        blob = ckpt.read_bytes()
        ckpt.write_bytes(blob[:-20])
        assert main(["eval", "--checkpoint", str(ckpt),
                     "--dataset", str(cache_file)]) == 4

    def test_wrong_magic_exit_4(self, tmp_path, cache_file):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"JUNKJUNKJUNK")
        assert main(["eval", "--checkpoint", str(bad),
                     "--dataset", str(cache_file)]) == 4


class TestPredictCommand:
    def test_biased_model_prints_class_zero_names(self, tmp_path, biased_checkpoint, capsys, rng):
        img = rng.integers(0, 256, (60, 60)).astype(np.uint8)
        path = tmp_path / "face.pgm"
        write_pnm(path, img)
        assert main(["predict", "--checkpoint", str(biased_checkpoint),
                     "--image", str(path)]) == 0
        out = capsys.readouterr().out
        assert "surprise, male, Caucasian, 0-3" in out
        assert "confidence" in out

    def test_omitted_eyes_equals_zero_angle(self, tmp_path, biased_checkpoint, capsys, rng):
        img = rng.integers(0, 256, (60, 60)).astype(np.uint8)
        path = tmp_path / "face.pgm"
        write_pnm(path, img)
        main(["predict", "--checkpoint", str(biased_checkpoint), "--image", str(path)])
        without = capsys.readouterr().out
        main(["predict", "--checkpoint", str(biased_checkpoint), "--image", str(path),
              "--eyes", "10,20,40,20"])   # horizontal: theta = 0
        with_eyes = capsys.readouterr().out
        assert without == with_eyes

    def test_malformed_eyes_exit_2(self, tmp_path, biased_checkpoint, rng):
        img = rng.integers(0, 256, (60, 60)).astype(np.uint8)
        path = tmp_path / "face.pgm"
        write_pnm(path, img)
        assert main(["predict", "--checkpoint", str(biased_checkpoint),
                     "--image", str(path), "--eyes", "10,20,40"]) == 2
        assert main(["predict", "--checkpoint", str(biased_checkpoint),
                     "--image", str(path), "--eyes", "a,b,c,d"]) == 2

    def test_unreadable_image_exit_3(self, biased_checkpoint, tmp_path):
        assert main(["predict", "--checkpoint", str(biased_checkpoint),
                     "--image", str(tmp_path / "absent.pgm")]) == 3


class TestPreprocessCommand:
    def test_rafdb_fixture_to_cache(self, tmp_path, capsys, rng):
        paths = make_rafdb_fixture(tmp_path, rng, n=5,
                                   drop_landmark_for={"face001.pgm"})
        out = tmp_path / "cache.bin"
        code = main(["preprocess", "--dataset", str(paths["image_dir"]),
                     "--emotion-labels", str(paths["emotion_labels_file"]),
                     "--attribute-dir", str(paths["attribute_dir"]),
                     "--landmarks", str(paths["landmarks_file"]),
                     "--out", str(out)])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "5 examples" in stdout and "1 rotation skip" in stdout
        cached = load_cache(out)
        assert len(cached) == 5
        record = lambda sid: 2 + len(sid) + 2500 * 4 + 8
        expected = 8 + 8 + sum(record(e.source_id) for e in cached)
        assert out.stat().st_size == expected

    def test_rerun_byte_identical(self, tmp_path, rng):
        paths = make_rafdb_fixture(tmp_path, rng, n=3)
        args = ["preprocess", "--dataset", str(paths["image_dir"]),
                "--emotion-labels", str(paths["emotion_labels_file"]),
                "--attribute-dir", str(paths["attribute_dir"]),
                "--landmarks", str(paths["landmarks_file"])]
        o1, o2 = tmp_path / "c1.bin", tmp_path / "c2.bin"
        assert main(args + ["--out", str(o1)]) == 0
        assert main(args + ["--out", str(o2)]) == 0
        assert o1.read_bytes() == o2.read_bytes()

    def test_missing_image_exit_3_names_file(self, tmp_path, capsys, rng):
        paths = make_rafdb_fixture(tmp_path, rng, n=3)
        (paths["image_dir"] / "face002.pgm").unlink()
        code = main(["preprocess", "--dataset", str(paths["image_dir"]),
                     "--emotion-labels", str(paths["emotion_labels_file"]),
                     "--attribute-dir", str(paths["attribute_dir"]),
                     "--landmarks", str(paths["landmarks_file"]),
                     "--out", str(tmp_path / "c.bin")])
        assert code == 3
        assert "face002.pgm" in capsys.readouterr().err


class TestPlotCommand:
    def _train_metrics(self, tmp_path, cache_file, epochs):
        cfg = write_run_config(tmp_path / "run.json", cache_file, epochs=epochs)
        out = tmp_path / f"run{epochs}"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        return out / "metrics.csv"

    def test_ten_epoch_chart_structure(self, tmp_path, cache_file):
        metrics = self._train_metrics(tmp_path, cache_file, epochs=10)
        svg_path = tmp_path / "curves.svg"
        assert main(["plot", "--metrics", str(metrics), "--out", str(svg_path)]) == 0
        root = ET.fromstring(svg_path.read_text())   # well-formed XML
        ns = "{http://www.w3.org/2000/svg}"
        polylines = root.findall(f".//{ns}polyline")
        assert len(polylines) == 4   # 2 panels x (train, validation)
        texts = [t.text for t in root.findall(f".//{ns}text")]
        assert "epoch" in texts and "accuracy" in texts and "loss" in texts
        assert "train" in texts and "validation" in texts

    def test_single_epoch_still_valid(self, tmp_path, cache_file):
        metrics = self._train_metrics(tmp_path, cache_file, epochs=1)
        svg_path = tmp_path / "one.svg"
        assert main(["plot", "--metrics", str(metrics), "--out", str(svg_path)]) == 0
        root = ET.fromstring(svg_path.read_text())
        ns = "{http://www.w3.org/2000/svg}"
        assert len(root.findall(f".//{ns}polyline")) == 4
        assert len(root.findall(f".//{ns}circle")) >= 4   # visible markers

    def test_empty_csv_exit_2(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        assert main(["plot", "--metrics", str(empty), "--out", str(tmp_path / "x.svg")]) == 2

    def test_missing_column_exit_2_names_column(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("epoch,lr\n1,0.0003\n")
        assert main(["plot", "--metrics", str(bad), "--out", str(tmp_path / "x.svg")]) == 2
        assert "train_acc_emotion" in capsys.readouterr().err
