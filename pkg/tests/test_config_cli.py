import csv

import numpy as np
import pytest

from railwave import config as config_mod
from railwave import pipeline
from railwave.cli import main
from railwave.errors import ConfigError
from railwave.resnet import load_checkpoint

SMALL = [
    "dataset.samples_per_class=5",
    "dataset.segment_length=512",
    "wavelet.n_scales=16",
    "wavelet.image_size=32",
    "training.epochs=1",
    "training.batch_size=8",
]


def _args(out, *extra):
    flags = []
    for item in [*SMALL, f"output.dir={out}", *extra]:
        flags += ["--set", item]
    return flags


def test_config_round_trip():
    cfg = config_mod.apply_overrides(
        config_mod.RunConfig(),
        {"wavelet.omega0": "7.5", "training.lr_milestones": "0.5, 0.75", "model.spec": "18", "output.dir": "x y"},
    )
    assert config_mod.parse(config_mod.render(cfg)) == cfg
    assert config_mod.parse(config_mod.render(config_mod.RunConfig())) == config_mod.RunConfig()


def test_config_parse_errors():
    for text in ["dataset.nope = 1\n", "training.epochs = 1\ntraining.epochs = 2\n", "training.epochs = x\n", "just words\n"]:
        with pytest.raises(ConfigError):
            config_mod.parse(text)
    parsed = config_mod.parse("# comment\n\n  model.seed = 4  \n")
    assert parsed.model.seed == 4


def test_config_file_and_seed_flag(tmp_path, capsys):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(f"output.dir = {tmp_path / 'o'}\ndataset.samples_per_class = 2\n")
    assert main(["generate", "--config", str(cfg_file), "--seed", "9", "--dry-run"]) == 0
    cfg = config_mod.load(cfg_file, {"dataset.seed": "9", "model.seed": "9"})
    assert cfg.dataset.samples_per_class == 2 and cfg.model.seed == 9
    assert main(["generate", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert "config file not found" in capsys.readouterr().err


def test_validation_errors(tmp_path, capsys):
    assert main(["train", *_args(tmp_path / "o", "model.spec=101")]) == 1
    assert main(["train", *_args(tmp_path / "o", "training.momentum=1.5")]) == 1
    assert main(["generate", "--set", "nonsense"]) == 1
    capsys.readouterr()


def test_dry_run_writes_nothing(tmp_path):
    out = tmp_path / "o"
    for cmd in ("generate", "extract", "train", "eval"):
        assert main([cmd, *_args(out), "--dry-run"]) == 0
    assert not out.exists()


def test_unwritable_output_dir(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    assert main(["generate", *_args(blocker / "out")]) == 2
    assert "cannot" in capsys.readouterr().err


def test_missing_manifest_and_features(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["extract", *_args(out)]) == 1
    assert "manifest.csv" in capsys.readouterr().err
    assert main(["train", *_args(out)]) == 1
    err = capsys.readouterr().err
    assert str(out / "features" / "manifest.csv") in err


@pytest.fixture
def generated(tmp_path):
    out = tmp_path / "o"
    assert main(["generate", *_args(out)]) == 0
    return out


def test_extract_idempotent_and_cache_key(generated, capsys):
    out = generated
    cfg = config_mod.load(None, dict(s.split("=", 1) for s in [*SMALL, f"output.dir={out}"]))
    first = pipeline.cmd_extract(cfg)
    assert first.computed == 85 and first.skipped == 0 and first.images == 85
    second = pipeline.cmd_extract(cfg)
    assert second.computed == 0 and second.skipped == 85
    changed = config_mod.apply_overrides(cfg, {"wavelet.omega0": "7.0"})
    assert pipeline.cmd_extract(changed).computed == 85
    images = list((out / "features").rglob("*.rwim"))
    assert len(images) == 85
    capsys.readouterr()


def test_extract_segments_per_part(generated):
    cfg = config_mod.load(None, dict(s.split("=", 1) for s in [*SMALL, f"output.dir={generated}", "dataset.n_parts=2"]))
    stats = pipeline.cmd_extract(cfg)
    assert stats.images == 170
    assert (generated / "features" / "signals" / "TYPE0" / "TYPE0_0000_p01.rwim").is_file()


def test_train_eval_and_predictions_file(generated, tmp_path, capsys):
    out = generated
    assert main(["extract", *_args(out)]) == 0
    assert main(["train", *_args(out)]) == 0
    stdout = capsys.readouterr().out
    assert "final val accuracy:" in stdout
    assert (out / "model.rwck").is_file()
    rows = list(csv.reader(open(out / "history_batches.csv")))
    assert rows[0] == ["batch_index", "loss"] and len(rows) == 1 + 7  # 51 training images, batches of 8
    assert main(["eval", *_args(out), "--split", "test"]) == 0
    assert "accuracy:" in capsys.readouterr().out
    assert (out / "eval_test" / "confusion_matrix.csv").is_file()

    # oracle predictions: every test path mapped to its true class
    manifest = list(csv.DictReader(open(out / "features" / "manifest.csv")))
    preds = tmp_path / "preds.csv"
    with open(preds, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "predicted_class_id"])
        for row in manifest:
            if row["split"] == "test":
                w.writerow([row["path"], row["class_id"]])
    assert main(["eval", *_args(out), "--predictions-file", str(preds), "--out", str(tmp_path / "rep")]) == 0
    assert "accuracy: 1.0000" in capsys.readouterr().out
    metrics = list(csv.DictReader(open(tmp_path / "rep" / "metrics.csv")))
    assert all(m["precision"] == "1.0000" and m["f1"] == "1.0000" for m in metrics)

    assert main(["eval", *_args(out), "--checkpoint", str(tmp_path / "none.rwck")]) == 1


def test_zero_epochs_writes_initial_checkpoint(generated, capsys):
    out = generated
    assert main(["extract", *_args(out)]) == 0
    assert main(["train", *_args(out, "training.epochs=0")]) == 0
    capsys.readouterr()
    assert (out / "history_epochs.csv").read_text() == "epoch,val_accuracy\n"
    assert (out / "history_batches.csv").read_text() == "batch_index,loss\n"
    ck = load_checkpoint(out / "model.rwck")
    cfg = config_mod.load(None, dict(s.split("=", 1) for s in [*SMALL, f"output.dir={out}"]))
    from railwave.resnet import build_model

    fresh = build_model(pipeline.model_spec(cfg), cfg.model.seed)
    for name, t in fresh.state().items():
        assert np.array_equal(ck.model.state()[name].data, t.data)


def test_output_lock(tmp_path):
    out = tmp_path / "o"
    with pipeline.output_lock(out):
        with pytest.raises(pipeline.LockHeld):
            with pipeline.output_lock(out):
                pass
    with pipeline.output_lock(out):
        pass


def test_shipped_default_config_matches_builtin_defaults():
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / "default.cfg"
    assert config_mod.load(path) == config_mod.RunConfig()
