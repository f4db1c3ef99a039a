import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.io import wavfile

from birdcall.cli import main
from birdcall.config import RunConfig
from birdcall.fixtures import BIN_HZ, ToneSpec, class_tone_bins, synth_clip
from birdcall.model import build_model, save_checkpoint

FAST = ["--set", "backbone=tiny", "--set", "dropout=0.1",
        "--set", "initial_lr=1e-3", "--set", "plateau_patience=2",
        "--set", "abort_patience=4", "--set", "restarts=0",
        "--set", "max_epochs_per_cycle=4",
        "--set", "negatives_per_epoch_base=6",
        "--set", "negatives_per_epoch_target=6",
        "--set", "target_split=0.6,0.2,0.2"]


def write_wav(path, samples, rate):
    wavfile.write(path, rate, np.asarray(
        np.clip(samples, -1, 1) * 32767, dtype=np.int16))


def tone_samples(class_index, rate, seconds=1.0):
    base, partner = class_tone_bins(class_index)
    n = int(seconds * rate)
    t = np.arange(n) / rate
    return 0.4 * (np.sin(2 * np.pi * base * BIN_HZ * t)
                  + np.sin(2 * np.pi * partner * BIN_HZ * t))


@pytest.fixture(scope="module")
def wav_corpus(tmp_path_factory):
    """Tiny audio manifest: two species, noise negatives, one silent clip."""
    root = tmp_path_factory.mktemp("wavs")
    rows = []

    for c, species in ((0, "sp_a"), (1, "sp_b")):
        for i, rate in enumerate((22050, 44100)):
            path = root / f"{species}_{i}.wav"
            write_wav(path, tone_samples(c, rate), rate)
            rows.append((str(path), species, "positive"))
    rng = np.random.default_rng(44)
    for i in range(2):
        path = root / f"noise_{i}.wav"
        write_wav(path, 0.3 * rng.standard_normal(22050), 22050)
        rows.append((str(path), "negative", "negative"))
    silent = root / "silent.wav"
    write_wav(silent, np.zeros(22050), 22050)
    rows.append((str(silent), "sp_a", "positive"))

    manifest = root / "audio_manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["audio_path", "species", "role"])
        writer.writerows(rows)
    return manifest, rows


@pytest.fixture(scope="module")
def prepared(wav_corpus, tmp_path_factory):
    manifest, rows = wav_corpus
    out = tmp_path_factory.mktemp("prepared")
    rc = main(["prepare", "--manifest", str(manifest), "--out-dir", str(out)])
    assert rc == 0
    return out


def toy_manifest_path(man):
    return Path(man.records[0].image_path).parent.parent / "manifest.csv"


class TestPrepare:
    def test_outputs_and_skips(self, wav_corpus, prepared, capsys):
        manifest, rows = wav_corpus
        out_manifest = prepared / "manifest.csv"
        with open(out_manifest, newline="") as fh:
            kept = list(csv.DictReader(fh))
        assert len(kept) == 6  # silent clip dropped
        assert all(Path(r["image_path"]).exists() for r in kept)
        assert {r["species"] for r in kept} == {"sp_a", "sp_b", "negative"}

        resolved = json.loads((prepared / "resolved_config.json").read_text())
        assert resolved["command"] == "prepare"
        assert resolved["clips_in"] == 7
        assert resolved["clips_out"] == 6
        assert resolved["config"]["sample_rate"] == 22050
        assert resolved["config_hash"] == RunConfig().config_hash()

    def test_silent_clip_warns(self, wav_corpus, tmp_path, capsys):
        manifest, _ = wav_corpus
        rc = main(["prepare", "--manifest", str(manifest),
                   "--out-dir", str(tmp_path)])
        captured = capsys.readouterr()
        assert rc == 0
        assert "skipping" in captured.err
        assert "silent.wav" in captured.err
        assert "prepared 6/7 clips" in captured.out

    def test_rerun_and_jobs_are_byte_identical(self, wav_corpus, prepared,
                                               tmp_path):
        manifest, _ = wav_corpus
        rc = main(["prepare", "--manifest", str(manifest),
                   "--out-dir", str(tmp_path), "--jobs", "2"])
        assert rc == 0
        for png in sorted((prepared / "images").glob("*.png")):
            twin = tmp_path / "images" / png.name
            assert twin.read_bytes() == png.read_bytes(), png.name

    def test_resampled_wav_matches_native_rate_geometry(self, prepared):
        with open(prepared / "manifest.csv", newline="") as fh:
            kept = {Path(r["image_path"]).stem: r["image_path"]
                    for r in csv.DictReader(fh)}
        from birdcall.spectrogram import load_png

        native = load_png(kept["sp_a_0"])   # recorded at 22050
        resampled = load_png(kept["sp_a_1"])  # recorded at 44100
        assert native.pixels.shape == resampled.pixels.shape == (256, 82)

    def test_bad_header_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("path,species\nx.wav,sp\n")
        rc = main(["prepare", "--manifest", str(bad), "--out-dir", str(tmp_path)])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_manifest_exits_2(self, tmp_path):
        rc = main(["prepare", "--manifest", str(tmp_path / "none.csv"),
                   "--out-dir", str(tmp_path)])
        assert rc == 2


@pytest.fixture(scope="module")
def base_run(toy_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_base")
    rc = main(["train-base", "--manifest", str(toy_manifest_path(toy_dataset)),
               "--out-dir", str(out), "--seed", "3", *FAST])
    return rc, out


class TestTrainBase:
    def test_run_and_artifacts(self, base_run, toy_dataset):
        rc, out = base_run
        assert rc == 0
        assert (out / "best.ckpt").exists()
        assert (out / "split_3.csv").exists()
        report = json.loads((out / "train_report.json").read_text())
        assert report["stage"] == "base"
        assert report["class_names"] == toy_dataset.class_names
        assert report["epochs"][0]["lr"] == 1e-3  # --set overrides the default
        assert 1 <= len(report["epochs"]) <= 4
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["config"]["backbone"] == "tiny"
        assert resolved["seed"] == 3

    def test_split_csv_covers_positives(self, base_run, toy_dataset):
        _, out = base_run
        with open(out / "split_3.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 16
        counts = {}
        for r in rows:
            counts[r["split"]] = counts.get(r["split"], 0) + 1
        assert counts == {"train": 14, "validation": 2}

    def test_best_line_printed(self, toy_dataset, tmp_path, capsys):
        rc = main(["train-base", "--manifest", str(toy_manifest_path(toy_dataset)),
                   "--out-dir", str(tmp_path), "--seed", "4", *FAST])
        assert rc == 0
        assert "best epoch=" in capsys.readouterr().out

    def test_missing_pretrained_exits_2(self, toy_dataset, tmp_path):
        rc = main(["train-base", "--manifest", str(toy_manifest_path(toy_dataset)),
                   "--pretrained", str(tmp_path / "missing.pth"),
                   "--out-dir", str(tmp_path), *FAST])
        assert rc == 2

    def test_missing_manifest_exits_2(self, tmp_path):
        rc = main(["train-base", "--manifest", str(tmp_path / "none.csv"),
                   "--out-dir", str(tmp_path), *FAST])
        assert rc == 2


class TestTransfer:
    def test_single_fold_run(self, trained_toy, tmp_path, capsys):
        _, report, man = trained_toy
        out = tmp_path / "transfer"
        rc = main(["transfer", "--base-checkpoint", report["best"]["path"],
                   "--manifest", str(toy_manifest_path(man)),
                   "--folds", "1", "--fold-seeds", "301",
                   "--out-dir", str(out), *FAST])
        assert rc == 0
        kreport = json.loads((out / "kfold_report.json").read_text())
        assert kreport["fold_count"] == 1
        assert kreport["folds"][0]["seed"] == 301
        assert (out / "averaged_matrix.csv").exists()
        assert (out / "averaged_matrix.png").exists()
        assert (out / "split_301.csv").exists()
        assert "mean_accuracy=" in capsys.readouterr().out
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["fold_seeds"] == [301]

    def test_default_fold_seeds_follow_seed(self, trained_toy, tmp_path):
        _, report, man = trained_toy
        out = tmp_path / "transfer"
        rc = main(["transfer", "--base-checkpoint", report["best"]["path"],
                   "--manifest", str(toy_manifest_path(man)),
                   "--folds", "2", "--seed", "10",
                   "--out-dir", str(out), *FAST])
        assert rc == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["fold_seeds"] == [11, 12]

    def test_strict_rejects_small_head(self, trained_toy, tmp_path):
        _, report, man = trained_toy
        rc = main(["transfer", "--base-checkpoint", report["best"]["path"],
                   "--manifest", str(toy_manifest_path(man)),
                   "--folds", "1", "--strict",
                   "--out-dir", str(tmp_path), *FAST])
        assert rc == 2  # toy base head is 3-way, strict mode demands 47

    def test_missing_checkpoint_exits_2(self, trained_toy, tmp_path):
        _, _, man = trained_toy
        rc = main(["transfer", "--base-checkpoint", str(tmp_path / "none.ckpt"),
                   "--manifest", str(toy_manifest_path(man)),
                   "--folds", "1", "--out-dir", str(tmp_path), *FAST])
        assert rc == 2


class TestPredict:
    def test_png_input_json_line(self, trained_toy, capsys):
        _, report, man = trained_toy
        rec = man.positives[0]
        rc = main(["predict", "--checkpoint", report["best"]["path"],
                   rec.image_path])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert doc["path"] == rec.image_path
        assert set(doc["scores"]) == set(man.class_names)
        assert doc["windows"] == 1
        assert doc["label"] in man.class_names

    def test_wav_input_matches_prepared_png(self, trained_toy, prepared,
                                            wav_corpus, capsys):
        _, report, _ = trained_toy
        manifest, _ = wav_corpus
        wav = str(Path(manifest).parent / "sp_a_0.wav")
        with open(prepared / "manifest.csv", newline="") as fh:
            png = next(r["image_path"] for r in csv.DictReader(fh)
                       if Path(r["image_path"]).stem == "sp_a_0")
        rc = main(["predict", "--checkpoint", report["best"]["path"], wav, png])
        assert rc == 0
        wav_doc, png_doc = [json.loads(l) for l in
                            capsys.readouterr().out.strip().splitlines()[-2:]]
        assert wav_doc["scores"] == png_doc["scores"]

    def test_threshold_gives_label_list(self, trained_toy, tmp_path, capsys):
        _, report, man = trained_toy
        rec = man.positives[0]
        rc = main(["predict", "--checkpoint", report["best"]["path"],
                   "--threshold", "0.5", "--out-dir", str(tmp_path),
                   rec.image_path])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert isinstance(doc["labels"], list)
        saved = (tmp_path / "predictions.jsonl").read_text().strip()
        assert json.loads(saved) == doc

    def test_missing_checkpoint_exits_2(self, tmp_path):
        rc = main(["predict", "--checkpoint", str(tmp_path / "none.ckpt"),
                   str(tmp_path / "x.png")])
        assert rc == 2


class TestEvaluate:
    def test_full_manifest(self, trained_toy, tmp_path, capsys):
        _, report, man = trained_toy
        rc = main(["evaluate", "--checkpoint", report["best"]["path"],
                   "--manifest", str(toy_manifest_path(man)),
                   "--out-dir", str(tmp_path)])
        assert rc == 0
        doc = json.loads((tmp_path / "evaluation.json").read_text())
        assert doc["n_samples"] == 48
        assert 0.0 <= doc["accuracy"] <= 1.0
        assert np.asarray(doc["matrix"]).shape == (3, 3)
        assert (tmp_path / "matrix.csv").exists()
        assert "accuracy=" in capsys.readouterr().out

    def test_split_filter(self, trained_toy, base_run, tmp_path):
        _, report, man = trained_toy
        _, base_out = base_run
        rc = main(["evaluate", "--checkpoint", report["best"]["path"],
                   "--manifest", str(toy_manifest_path(man)),
                   "--split-csv", str(base_out / "split_3.csv"),
                   "--split", "validation", "--out-dir", str(tmp_path)])
        assert rc == 0
        doc = json.loads((tmp_path / "evaluation.json").read_text())
        assert doc["n_samples"] == 2

    def test_unknown_split_exits_1(self, trained_toy, base_run, tmp_path):
        _, report, man = trained_toy
        _, base_out = base_run
        rc = main(["evaluate", "--checkpoint", report["best"]["path"],
                   "--manifest", str(toy_manifest_path(man)),
                   "--split-csv", str(base_out / "split_3.csv"),
                   "--split", "holdout", "--out-dir", str(tmp_path)])
        assert rc == 1

    def test_class_name_mismatch_exits_2(self, toy_dataset, tmp_path):
        net = build_model(3, seed=0, backbone="tiny")
        net.class_names = ["a", "b", "negative"]
        ckpt = tmp_path / "other.ckpt"
        save_checkpoint(net, {"spectrogram": RunConfig().spectrogram_meta()}, ckpt)
        rc = main(["evaluate", "--checkpoint", str(ckpt),
                   "--manifest", str(toy_manifest_path(toy_dataset)),
                   "--out-dir", str(tmp_path)])
        assert rc == 2


class TestParser:
    def test_no_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["predict", "--no-such-flag"])
        assert exc.value.code == 2

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "birdcall.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        for command in ("prepare", "train-base", "transfer", "predict", "evaluate"):
            assert command in proc.stdout
