"""Deterministic 17-class synthetic vibration dataset.

Every class shares a healthy baseline: the shaft tone at ``base_freq_hz``
plus a gear-mesh tone at ``MESH_ORDER`` times the shaft speed. Faults add
one of three families on top:

* TYPE1-TYPE8: periodic impacts (bearing-like), each a decaying sinusoid
  at a class-specific resonance, repeating at 8 log-spaced rates;
* TYPE9-TYPE12: extra mesh harmonics at 2x, 3x, 0.5x and a mix of them
  (misalignment / looseness-like);
* TYPE13-TYPE16: amplitude modulation of the mesh tone at 4 rates
  (gear-fault sidebands).

The noise-free waveform is a fixed function of the class; per-sample
variability is white Gaussian noise drawn from a generator seeded by
``(master_seed, class id, sample index)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from railwave.errors import IoFailure
from railwave.signal_core import (
    ALL_CLASSES,
    N_CLASSES,
    DatasetManifest,
    FaultClass,
    Recording,
    Segment,
    split_dataset,
    write_recording,
)

TABLE_VERSION = 1
MESH_ORDER = 40
IMPULSE_RATES_HZ = tuple(float(r) for r in np.geomspace(37.0, 157.0, 8))
# Interleaved so that classes with neighbouring impact rates ring at distant resonances.
RESONANCES_HZ = tuple(float(np.linspace(3000.0, 8000.0, 8)[k]) for k in (0, 4, 1, 5, 2, 6, 3, 7))
MODULATION_RATES_HZ = (15.0, 30.0, 60.0, 120.0)
# Largest |sample| / RMS of any noise-free class waveform is about 8.7 (TYPE1).
CREST_LIMIT = 12.0


@dataclass(frozen=True)
class SynthConfig:
    sample_rate_hz: float = 64000.0
    segment_length: int = 6400
    samples_per_class: int = 30
    noise_sigma: float = 0.2
    base_freq_hz: float = 20.0
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.segment_length < 256:
            raise ValueError("segment_length must be >= 256")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if not self.sample_rate_hz > 0 or not self.base_freq_hz > 0:
            raise ValueError("rates must be positive")


@dataclass(frozen=True)
class ImpulseTrain:
    rate_hz: float
    decay_per_s: float
    resonance_hz: float
    amplitude: float


@dataclass(frozen=True)
class Modulation:
    rate_hz: float
    depth: float


@dataclass(frozen=True)
class FaultSignature:
    fault_class: FaultClass
    harmonics: tuple[tuple[float, float], ...]  # (multiple of base_freq_hz, amplitude)
    impulse: ImpulseTrain | None = None
    modulation: Modulation | None = None


# Shaft tone stays the strongest spectral line; the mesh tone carries the in-band energy.
_BASELINE = ((1.0, 1.0), (float(MESH_ORDER), 0.9))


def signature_table() -> list[FaultSignature]:
    """The frozen, versioned signature table (``TABLE_VERSION``)."""
    table = [FaultSignature(ALL_CLASSES[0], _BASELINE)]
    for i, (rate, res) in enumerate(zip(IMPULSE_RATES_HZ, RESONANCES_HZ)):
        table.append(FaultSignature(ALL_CLASSES[1 + i], _BASELINE, ImpulseTrain(rate, 1000.0, res, 20.0)))
    extra = [
        ((2.0 * MESH_ORDER, 0.8),),
        ((3.0 * MESH_ORDER, 0.8),),
        ((0.5 * MESH_ORDER, 0.8),),
        ((2.0 * MESH_ORDER, 0.5), (3.0 * MESH_ORDER, 0.5), (0.5 * MESH_ORDER, 0.5)),
    ]
    for i, harmonics in enumerate(extra):
        table.append(FaultSignature(ALL_CLASSES[9 + i], _BASELINE + harmonics))
    for i, rate in enumerate(MODULATION_RATES_HZ):
        table.append(FaultSignature(ALL_CLASSES[13 + i], _BASELINE, modulation=Modulation(rate, 1.0)))
    assert len(table) == N_CLASSES
    return table


def clean_waveform(sig: FaultSignature, cfg: SynthConfig) -> np.ndarray:
    """Noise-free waveform, normalized to unit RMS."""
    t = np.arange(cfg.segment_length) / cfg.sample_rate_hz
    x = np.zeros_like(t)
    for multiple, amp in sig.harmonics:
        tone = amp * np.sin(2 * np.pi * multiple * cfg.base_freq_hz * t)
        if sig.modulation is not None and multiple == MESH_ORDER:
            tone *= 1.0 + sig.modulation.depth * np.cos(2 * np.pi * sig.modulation.rate_hz * t)
        x += tone
    if sig.impulse is not None:
        imp = sig.impulse
        period = 1.0 / imp.rate_hz
        for onset in np.arange(0.25 * period, t[-1], period):
            dt = t - onset
            live = dt >= 0
            x[live] += imp.amplitude * np.exp(-imp.decay_per_s * dt[live]) * np.sin(2 * np.pi * imp.resonance_hz * dt[live])
    return x / np.sqrt(np.mean(x * x))


def sample_seed(master_seed: int, class_id: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, class_id, index])


def generate_sample(fault_class: FaultClass, index: int, cfg: SynthConfig) -> Segment:
    sig = signature_table()[fault_class.id]
    x = clean_waveform(sig, cfg)
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(sample_seed(cfg.master_seed, fault_class.id, index))
        x = x + rng.normal(0.0, cfg.noise_sigma, size=x.shape)
    return Segment(x, cfg.sample_rate_hz, fault_class)


def amplitude_bound(cfg: SynthConfig) -> float:
    return CREST_LIMIT + 8.0 * cfg.noise_sigma


def sample_path(fault_class: FaultClass, index: int) -> str:
    return f"signals/{fault_class.name}/{fault_class.name}_{index:04d}.rwsg"


def generate_dataset(
    cfg: SynthConfig,
    out_dir: str | Path,
    val_fraction: float = 0.2,
    test_fraction: float = 0.2,
) -> DatasetManifest:
    """Write every sample as a one-channel signal file plus ``manifest.csv``.

    Manifest paths are relative to ``out_dir``; the split is seeded by
    ``cfg.master_seed``.
    """
    out_dir = Path(out_dir)
    entries = []
    try:
        for fc in ALL_CLASSES:
            (out_dir / "signals" / fc.name).mkdir(parents=True, exist_ok=True)
            for i in range(cfg.samples_per_class):
                seg = generate_sample(fc, i, cfg)
                rel = sample_path(fc, i)
                rec = Recording(seg.samples[None, :], cfg.sample_rate_hz, source_id=rel)
                write_recording(out_dir / rel, rec)
                entries.append((rel, fc))
        manifest = split_dataset(entries, val_fraction, test_fraction, cfg.master_seed)
        manifest.write_csv(out_dir / "manifest.csv")
    except OSError as exc:
        raise IoFailure(f"cannot write dataset to {out_dir}: {exc}") from exc
    return manifest
