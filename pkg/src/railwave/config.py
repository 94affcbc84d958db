"""Declarative run configuration in a flat ``section.key = value`` text format.

Grammar (one statement per line)::

    line      := blank | comment | statement
    comment   := optional spaces, "#", anything
    statement := section "." key spaces? "=" spaces? value
    value     := everything after "=" up to end of line, surrounding spaces stripped

Values are typed by the key: integers, floats (Python float syntax), strings,
and comma-separated float lists. Unknown keys and repeated keys are errors.
``render`` emits every key in declaration order, so ``parse(render(c)) == c``.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from railwave.errors import ConfigError
from railwave.resnet import SPEC_PRESETS


@dataclass(frozen=True)
class DatasetSection:
    source: str = "synthetic"  # synthetic | directory
    dir: str = ""  # external dataset root holding manifest.csv (source = directory)
    sample_rate_hz: float = 64000.0
    channels: int = 1
    channel: int = 0
    n_parts: int = 1
    segment_length: int = 6400
    samples_per_class: int = 30
    noise_sigma: float = 0.2
    base_freq_hz: float = 20.0
    seed: int = 0
    val_fraction: float = 0.2
    test_fraction: float = 0.2


@dataclass(frozen=True)
class WaveletSection:
    omega0: float = 6.0
    f_min_hz: float = 50.0
    f_max_hz: float = 28800.0
    n_scales: int = 64
    image_size: int = 64


@dataclass(frozen=True)
class ModelSection:
    spec: str = "tiny"
    seed: int = 0


@dataclass(frozen=True)
class TrainingSection:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 0.05
    lr_milestones: tuple[float, ...] = (0.6, 0.8)
    lr_factor: float = 0.2
    momentum: float = 0.9
    weight_decay: float = 1e-4


@dataclass(frozen=True)
class OutputSection:
    dir: str = "railwave_out"


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    wavelet: WaveletSection = field(default_factory=WaveletSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    output: OutputSection = field(default_factory=OutputSection)

    @property
    def output_dir(self) -> Path:
        return Path(self.output.dir)

    @property
    def dataset_root(self) -> Path:
        return self.output_dir / "dataset" if self.dataset.source == "synthetic" else Path(self.dataset.dir)

    @property
    def features_dir(self) -> Path:
        return self.output_dir / "features"

    def feature_key(self) -> str:
        """Hash of every setting that changes the extracted images."""
        d, w = self.dataset, self.wavelet
        text = render_sections(
            {"wavelet": w, "extract": (d.sample_rate_hz, d.channels, d.channel, d.n_parts)}
        )
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


_SECTIONS = [f.name for f in fields(RunConfig)]


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(kind: Any, raw: str, key: str) -> Any:
    kind = str(kind)
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("tuple"):
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def render_sections(sections: dict[str, Any]) -> str:
    lines = []
    for name, sec in sections.items():
        if dataclasses.is_dataclass(sec):
            for f in fields(sec):
                lines.append(f"{name}.{f.name} = {_format(getattr(sec, f.name))}")
        else:
            lines.append(f"{name} = {_format(sec)}")
    return "\n".join(lines) + "\n"


def render(cfg: RunConfig) -> str:
    return render_sections({name: getattr(cfg, name) for name in _SECTIONS})


def apply_overrides(cfg: RunConfig, assignments: dict[str, str]) -> RunConfig:
    grouped: dict[str, dict[str, Any]] = {}
    for key, raw in assignments.items():
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        sec = getattr(cfg, section)
        types = {f.name: f.type for f in fields(sec)}
        if name not in types:
            raise ConfigError(f"unknown config key {key!r}")
        grouped.setdefault(section, {})[name] = _convert(types[name], raw.strip(), key)
    for section, values in grouped.items():
        cfg = replace(cfg, **{section: replace(getattr(cfg, section), **values)})
    return cfg


def parse(text: str) -> RunConfig:
    assignments: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, eq, value = stripped.partition("=")
        if not eq:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key = key.strip()
        if key in assignments:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        assignments[key] = value.strip()
    return apply_overrides(RunConfig(), assignments)


def load(path: str | Path | None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        cfg = parse(p.read_text())
    return apply_overrides(cfg, overrides or {})


def validate(cfg: RunConfig) -> None:
    d, w, m, t = cfg.dataset, cfg.wavelet, cfg.model, cfg.training
    if d.source not in ("synthetic", "directory"):
        raise ConfigError(f"dataset.source must be synthetic or directory, got {d.source!r}")
    if d.source == "directory" and not (Path(d.dir) / "manifest.csv").is_file():
        raise ConfigError(f"dataset.dir {d.dir!r} has no manifest.csv")
    if m.spec not in SPEC_PRESETS:
        raise ConfigError(f"model.spec must be one of {sorted(SPEC_PRESETS)}, got {m.spec!r}")
    if t.epochs < 0 or t.batch_size < 1:
        raise ConfigError("training.epochs must be >= 0 and training.batch_size >= 1")
    if t.lr < 0 or t.weight_decay < 0 or not 0 <= t.momentum < 1:
        raise ConfigError("training.lr / weight_decay must be >= 0 and momentum in [0, 1)")
    if w.image_size < 1 or w.n_scales < 2:
        raise ConfigError("wavelet.image_size must be >= 1 and wavelet.n_scales >= 2")
    if d.n_parts < 1 or not 0 <= d.channel < d.channels:
        raise ConfigError("dataset.n_parts must be >= 1 and dataset.channel < dataset.channels")
    if not cfg.output.dir:
        raise ConfigError("output.dir must be set")
