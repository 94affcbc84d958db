"""The four pipeline stages: generate, extract, train, eval."""

from __future__ import annotations

import csv
import fcntl
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, TextIO

import numpy as np

from railwave import config as config_mod
from railwave.config import RunConfig
from railwave.errors import (
    ConfigError,
    EmptySplit,
    IoFailure,
    MissingFeatures,
    MissingManifest,
    RailwaveError,
)
from railwave.metrics import accumulate, accuracy, emit_report, per_class_metrics
from railwave.nn import SGD, step_schedule
from railwave.resnet import (
    SPEC_PRESETS,
    ResNetSpec,
    build_model,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train_epoch,
)
from railwave.signal_core import DatasetManifest, FaultClass, ManifestEntry, load_recording, segment_recording
from railwave.synth import SynthConfig, generate_dataset
from railwave.wavelet import MorletParams, make_scale_grid, read_image, segment_to_image, write_image

log = logging.getLogger(__name__)

CACHE_KEY_FILE = "cache_key.txt"
LOCK_FILE = ".railwave.lock"


class ExtractionFailed(RailwaveError):
    def __init__(self, failures: list[tuple[str, str]]) -> None:
        self.failures = failures
        listing = "; ".join(f"{p}: {msg}" for p, msg in failures)
        super().__init__(f"{len(failures)} segment(s) failed: {listing}")


class LockHeld(RailwaveError):
    pass


@contextmanager
def output_lock(out_dir: Path) -> Iterator[None]:
    """Exclusive advisory lock so two commands never write one output tree at once."""
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / LOCK_FILE, "w")
    except OSError as exc:
        raise IoFailure(f"cannot use output directory {out_dir}: {exc}") from exc
    try:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise LockHeld(f"another railwave command holds {out_dir / LOCK_FILE}") from None
        yield
    finally:
        fh.close()


def synth_config(cfg: RunConfig) -> SynthConfig:
    d = cfg.dataset
    return SynthConfig(d.sample_rate_hz, d.segment_length, d.samples_per_class, d.noise_sigma, d.base_freq_hz, d.seed)


def model_spec(cfg: RunConfig) -> ResNetSpec:
    base = SPEC_PRESETS[cfg.model.spec]
    size = cfg.wavelet.image_size
    return ResNetSpec(base.stem_channels, base.stage_block_counts, base.block_kind, 17, (1, size, size))


# --- generate --------------------------------------------------------------

def cmd_generate(cfg: RunConfig, dry_run: bool = False, out: TextIO | None = None) -> DatasetManifest | None:
    out = out or sys.stdout
    config_mod.validate(cfg)
    if cfg.dataset.source != "synthetic":
        raise ConfigError("generate needs dataset.source = synthetic")
    scfg = synth_config(cfg)
    root = cfg.dataset_root
    n_files = 17 * scfg.samples_per_class
    if dry_run:
        print(f"plan: write {n_files} signal files ({scfg.segment_length} samples @ {scfg.sample_rate_hz:g} Hz) "
              f"and manifest.csv under {root}", file=out)
        return None
    with output_lock(cfg.output_dir):
        manifest = generate_dataset(scfg, root, cfg.dataset.val_fraction, cfg.dataset.test_fraction)
    counts = {tag: len(manifest.split(tag)) for tag in ("train", "val", "test")}
    print(f"generated {len(manifest)} files in {root}: "
          + ", ".join(f"{k}={v}" for k, v in counts.items()), file=out)
    return manifest


# --- extract ---------------------------------------------------------------

@dataclass
class ExtractStats:
    computed: int = 0
    skipped: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)
    images: int = 0


def _image_paths(entry: ManifestEntry, n_parts: int) -> list[str]:
    stem = str(Path(entry.path).with_suffix(""))
    if n_parts == 1:
        return [stem + ".rwim"]
    return [f"{stem}_p{i:02d}.rwim" for i in range(n_parts)]


def _worker_count() -> int:
    raw = os.environ.get("RAILWAVE_THREADS", "")
    cap = int(raw) if raw.strip().isdigit() and int(raw) > 0 else (os.cpu_count() or 1)
    return max(1, min(cap, os.cpu_count() or 1))


def cmd_extract(cfg: RunConfig, dry_run: bool = False, out: TextIO | None = None) -> ExtractStats:
    """Turn every manifest entry into feature images, skipping up-to-date ones.

    An image is current when it exists, is newer than its source and the
    stored cache key matches the wavelet/extraction settings.
    """
    out = out or sys.stdout
    config_mod.validate(cfg)
    root = cfg.dataset_root
    manifest_path = root / "manifest.csv"
    d, w = cfg.dataset, cfg.wavelet
    feat_dir = cfg.features_dir
    key = cfg.feature_key()
    n_parts = d.n_parts
    if dry_run:
        if manifest_path.is_file():
            n = len(DatasetManifest.read_csv(manifest_path))
            print(f"plan: extract {n * n_parts} images from {n} recordings into {feat_dir}", file=out)
        else:
            print(f"plan: extract {n_parts} image(s) per recording listed in {manifest_path} "
                  f"(not present yet) into {feat_dir}", file=out)
        return ExtractStats()
    if not manifest_path.is_file():
        raise MissingManifest(f"dataset manifest not found: {manifest_path}")
    manifest = DatasetManifest.read_csv(manifest_path)

    params = MorletParams(w.omega0)
    grid = make_scale_grid(w.f_min_hz, w.f_max_hz, w.n_scales, d.sample_rate_hz, params)
    with output_lock(cfg.output_dir):
        feat_dir.mkdir(parents=True, exist_ok=True)
        key_file = feat_dir / CACHE_KEY_FILE
        key_matches = key_file.is_file() and key_file.read_text().strip() == key
        if not key_matches:
            key_file.unlink(missing_ok=True)

        def work(entry: ManifestEntry) -> tuple[int, int, str | None]:
            src = root / entry.path
            targets = [feat_dir / p for p in _image_paths(entry, n_parts)]
            try:
                if key_matches and all(
                    t.is_file() and t.stat().st_mtime_ns >= src.stat().st_mtime_ns for t in targets
                ):
                    return 0, len(targets), None
                rec = load_recording(src, d.channels, d.sample_rate_hz)
                segments = segment_recording(rec, d.channel, n_parts, entry.fault_class)
                for seg, target in zip(segments, targets):
                    target.parent.mkdir(parents=True, exist_ok=True)
                    write_image(target, segment_to_image(seg, grid, params, (w.image_size, w.image_size)))
                return len(targets), 0, None
            except (RailwaveError, OSError, ValueError) as exc:
                return 0, 0, f"{type(exc).__name__}: {exc}"

        with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
            results = list(pool.map(work, manifest.entries))

        stats = ExtractStats()
        feature_entries = []
        for entry, (done, skipped, err) in zip(manifest.entries, results):
            if err is not None:
                stats.failures.append((entry.path, err))
                continue
            stats.computed += done
            stats.skipped += skipped
            for p in _image_paths(entry, n_parts):
                feature_entries.append(ManifestEntry(p, entry.fault_class, entry.split))
        stats.images = len(feature_entries)
        DatasetManifest(tuple(feature_entries), manifest.seed).write_csv(feat_dir / "manifest.csv")
        key_file.write_text(key + "\n")
    print(f"extracted {stats.computed} images, {stats.skipped} up to date, {len(stats.failures)} failed", file=out)
    if stats.failures:
        raise ExtractionFailed(stats.failures)
    return stats


# --- train -----------------------------------------------------------------

@dataclass
class TrainingHistory:
    val_accuracy: list[float] = field(default_factory=list)
    batch_losses: list[float] = field(default_factory=list)

    def write(self, out_dir: Path) -> tuple[Path, Path]:
        epochs_csv = out_dir / "history_epochs.csv"
        batches_csv = out_dir / "history_batches.csv"
        with open(epochs_csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "val_accuracy"])
            for i, acc in enumerate(self.val_accuracy, start=1):
                writer.writerow([i, "" if np.isnan(acc) else repr(acc)])
        with open(batches_csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["batch_index", "loss"])
            for i, loss in enumerate(self.batch_losses):
                writer.writerow([i, repr(loss)])
        return epochs_csv, batches_csv


def load_features(cfg: RunConfig, split: str) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Images as an [N, 1, H, W] float32 array, integer labels and relative paths."""
    feat_dir = cfg.features_dir
    manifest_path = feat_dir / "manifest.csv"
    if not manifest_path.is_file():
        raise MissingFeatures(f"feature manifest not found: {manifest_path}")
    entries = DatasetManifest.read_csv(manifest_path).split(split)
    size = cfg.wavelet.image_size
    images = np.zeros((len(entries), 1, size, size), dtype=np.float32)
    for i, e in enumerate(entries):
        path = feat_dir / e.path
        if not path.is_file():
            raise MissingFeatures(f"feature image not found: {path}")
        img = read_image(path)
        if img.shape != (size, size):
            raise MissingFeatures(f"{path}: image is {img.shape}, config expects {size}x{size}")
        images[i, 0] = img.pixels
    labels = np.array([e.fault_class.id for e in entries], dtype=np.int64)
    return images, labels, [e.path for e in entries]


def fit(
    cfg: RunConfig,
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray,
    val_y: np.ndarray,
    log_fn=None,
):
    t = cfg.training
    model = build_model(model_spec(cfg), cfg.model.seed)
    optimizer = SGD(model.named_parameters(), t.momentum, t.weight_decay)
    schedule = step_schedule(t.lr, t.epochs, t.lr_milestones, t.lr_factor)
    history = TrainingHistory()
    for epoch in range(t.epochs):
        stats = train_epoch(model, optimizer, train_x, train_y, schedule(epoch), cfg.model.seed, epoch, t.batch_size)
        history.batch_losses.extend(stats.batch_losses)
        val_acc = evaluate(model, val_x, val_y)[0] if len(val_y) else float("nan")
        history.val_accuracy.append(val_acc)
        if log_fn is not None:
            log_fn(f"epoch {epoch + 1}/{t.epochs}: loss {stats.mean_loss:.4f}, val accuracy {val_acc:.4f}")
    return model, optimizer, history


def cmd_train(cfg: RunConfig, dry_run: bool = False, out: TextIO | None = None) -> TrainingHistory:
    out = out or sys.stdout
    config_mod.validate(cfg)
    if dry_run:
        print(f"plan: train spec {cfg.model.spec} for {cfg.training.epochs} epochs, "
              f"write {cfg.output_dir / 'model.rwck'} and history CSVs", file=out)
        return TrainingHistory()
    train_x, train_y, _ = load_features(cfg, "train")
    val_x, val_y, _ = load_features(cfg, "val")
    if len(train_y) == 0:
        raise EmptySplit("the feature manifest has no training entries")
    with output_lock(cfg.output_dir):
        model, optimizer, history = fit(cfg, train_x, train_y, val_x, val_y, log_fn=lambda m: print(m, file=out))
        save_checkpoint(model, cfg.output_dir / "model.rwck", optimizer.state_dict(), cfg.training.epochs, cfg.model.seed)
        history.write(cfg.output_dir)
    final = history.val_accuracy[-1] if history.val_accuracy else float("nan")
    print(f"final val accuracy: {final:.4f}", file=out)
    return history


# --- eval ------------------------------------------------------------------

def read_predictions(path: Path) -> dict[str, int]:
    if not path.is_file():
        raise ConfigError(f"predictions file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["path", "predicted_class_id"]:
            raise ConfigError(f"{path}: expected header path,predicted_class_id")
        return {row["path"]: int(row["predicted_class_id"]) for row in reader}


def cmd_eval(
    cfg: RunConfig,
    checkpoint: Path | None = None,
    split: str = "test",
    out_dir: Path | None = None,
    predictions_file: Path | None = None,
    dry_run: bool = False,
    out: TextIO | None = None,
) -> float:
    out = out or sys.stdout
    config_mod.validate(cfg)
    if split not in ("train", "val", "test"):
        raise ConfigError(f"unknown split {split!r}")
    checkpoint = checkpoint or cfg.output_dir / "model.rwck"
    out_dir = out_dir or cfg.output_dir / f"eval_{split}"
    if dry_run:
        print(f"plan: evaluate {predictions_file or checkpoint} on {split}, reports into {out_dir}", file=out)
        return float("nan")
    images, labels, paths = load_features(cfg, split)
    if len(labels) == 0:
        raise EmptySplit(f"split {split!r} has no entries")
    if predictions_file is not None:
        preds_by_path = read_predictions(Path(predictions_file))
        missing = [p for p in paths if p not in preds_by_path]
        if missing:
            raise ConfigError(f"predictions file lacks {len(missing)} entries, e.g. {missing[0]}")
        cm = accumulate(np.array([preds_by_path[p] for p in paths], dtype=np.int64), labels, 17)
    else:
        if not Path(checkpoint).is_file():
            raise ConfigError(f"checkpoint not found: {checkpoint}")
        ckpt = load_checkpoint(checkpoint, model_spec(cfg))
        _, cm = evaluate(ckpt.model, images, labels)
        if split != "train":
            train_x, train_y, _ = load_features(cfg, "train")
            if len(train_y):
                train_acc = evaluate(ckpt.model, train_x, train_y)[0]
                if train_acc < accuracy(cm):
                    print(f"warning: train accuracy {train_acc:.4f} below {split} accuracy {accuracy(cm):.4f}",
                          file=sys.stderr)
    cm = type(cm)(cm.counts, tuple(FaultClass.from_id(i).name for i in range(cm.k)))
    emit_report(cm, per_class_metrics(cm), out_dir)
    acc = accuracy(cm)
    print(f"accuracy: {acc:.4f}", file=out)
    return acc
