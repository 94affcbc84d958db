"""Recording ingestion, temporal segmentation and stratified dataset splits.

Two on-disk encodings are accepted by :func:`load_recording`:

* the binary ``RWSG`` format: a 32-byte little-endian header
  (magic, version, channel count, sample rate, length, 4 reserved zero bytes)
  followed by channel-major float32 samples;
* a CSV file with a ``ch0,ch1,...`` header row and one column per channel.
"""

from __future__ import annotations

import csv
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import numpy.typing as npt

from railwave.errors import (
    BadChannel,
    BadFraction,
    BadPartCount,
    ChannelCountMismatch,
    EmptyClass,
    MalformedHeader,
    MissingFile,
    NonFiniteSample,
)

FloatArray = npt.NDArray[np.float64]

N_CLASSES = 17
SPLITS = ("train", "val", "test")

SIGNAL_MAGIC = b"RWSG"
SIGNAL_VERSION = 1
_HEADER = struct.Struct("<4sIIdQ4s")
assert _HEADER.size == 32


class SampleRateMismatch(MalformedHeader):
    pass


@dataclass(frozen=True, order=True)
class FaultClass:
    id: int
    name: str = field(compare=False)

    def __post_init__(self) -> None:
        if not 0 <= self.id < N_CLASSES:
            raise ValueError(f"fault class id must be in [0, {N_CLASSES}), got {self.id}")
        if self.name != f"TYPE{self.id}":
            raise ValueError(f"fault class {self.id} must be named TYPE{self.id}, got {self.name!r}")

    @classmethod
    def from_id(cls, class_id: int) -> "FaultClass":
        class_id = int(class_id)
        if not 0 <= class_id < N_CLASSES:
            raise ValueError(f"fault class id must be in [0, {N_CLASSES}), got {class_id}")
        return ALL_CLASSES[class_id]

    @classmethod
    def from_name(cls, name: str) -> "FaultClass":
        if not name.startswith("TYPE") or not name[4:].isdigit():
            raise ValueError(f"not a fault class name: {name!r}")
        return cls.from_id(int(name[4:]))

    def __str__(self) -> str:
        return self.name


ALL_CLASSES: tuple[FaultClass, ...] = tuple(FaultClass(i, f"TYPE{i}") for i in range(N_CLASSES))


@dataclass(frozen=True, eq=False)
class Recording:
    """Multi-channel vibration recording, ``samples`` shaped [channels, length]."""

    samples: FloatArray
    sample_rate_hz: float
    source_id: str = ""

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ValueError("samples must be 2-D [channels, length]")
        if samples.shape[0] < 1 or samples.shape[1] < 1:
            raise ValueError("recording needs at least one channel and one sample")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        if not np.all(np.isfinite(samples)):
            raise NonFiniteSample(f"{self.source_id or 'recording'} contains NaN or Inf samples")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    @property
    def channel_count(self) -> int:
        return int(self.samples.shape[0])

    @property
    def length(self) -> int:
        return int(self.samples.shape[1])


@dataclass(frozen=True, eq=False)
class Segment:
    """One contiguous single-channel slice, the unit fed to the wavelet transform."""

    samples: FloatArray
    sample_rate_hz: float
    label: FaultClass | None = None
    segment_index: int = 0
    n_parts: int = 1

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("segment samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise NonFiniteSample("segment contains NaN or Inf samples")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        if not 0 <= self.segment_index < self.n_parts:
            raise ValueError("segment_index must lie in [0, n_parts)")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return int(self.samples.size)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    fault_class: FaultClass
    split: str

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ValueError(f"split tag must be one of {SPLITS}, got {self.split!r}")


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        entries = tuple(self.entries)
        paths = [e.path for e in entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, tag: str) -> list[ManifestEntry]:
        if tag not in SPLITS:
            raise ValueError(f"unknown split {tag!r}")
        return [e for e in self.entries if e.split == tag]

    def counts(self) -> dict[tuple[int, str], int]:
        """Number of entries per (class id, split tag)."""
        out: dict[tuple[int, str], int] = defaultdict(int)
        for e in self.entries:
            out[(e.fault_class.id, e.split)] += 1
        return dict(out)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["path", "class_id", "split"])
            for e in self.entries:
                writer.writerow([e.path, e.fault_class.id, e.split])

    @classmethod
    def read_csv(cls, path: str | Path, seed: int = 0) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise MissingFile(str(path))
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["path", "class_id", "split"]:
                raise ValueError(f"{path}: expected header path,class_id,split")
            entries = [
                ManifestEntry(row["path"], FaultClass.from_id(int(row["class_id"])), row["split"])
                for row in reader
            ]
        return cls(tuple(entries), seed)


def write_recording(path: str | Path, rec: Recording) -> None:
    """Serialize ``rec`` in the binary RWSG format."""
    header = _HEADER.pack(
        SIGNAL_MAGIC, SIGNAL_VERSION, rec.channel_count, rec.sample_rate_hz, rec.length, b"\0" * 4
    )
    payload = np.ascontiguousarray(rec.samples, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def _read_binary(path: Path) -> tuple[np.ndarray, int, float]:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise MalformedHeader(f"{path}: file shorter than the 32-byte header")
    magic, version, channels, rate, length, reserved = _HEADER.unpack_from(raw)
    if magic != SIGNAL_MAGIC:
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if version != SIGNAL_VERSION:
        raise MalformedHeader(f"{path}: unsupported format version {version}")
    if reserved != b"\0" * 4:
        raise MalformedHeader(f"{path}: reserved header bytes must be zero")
    if channels < 1 or length < 1 or not (np.isfinite(rate) and rate > 0):
        raise MalformedHeader(f"{path}: invalid channels/length/rate in header")
    payload = raw[_HEADER.size:]
    row_bytes = 4 * length
    if len(payload) != channels * row_bytes:
        if len(payload) % row_bytes == 0:
            raise ChannelCountMismatch(
                f"{path}: header declares {channels} channels, payload holds {len(payload) // row_bytes}"
            )
        raise MalformedHeader(f"{path}: payload size {len(payload)} does not match header")
    data = np.frombuffer(payload, dtype="<f4").reshape(channels, length).astype(np.float64)
    return data, channels, rate


def _read_csv(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedHeader(f"{path}: empty CSV") from None
        if not header or header != [f"ch{i}" for i in range(len(header))]:
            raise MalformedHeader(f"{path}: CSV header must be ch0..chN")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ChannelCountMismatch(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise MalformedHeader(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise MalformedHeader(f"{path}: CSV has no samples")
    return np.asarray(rows, dtype=np.float64).T


def load_recording(path: str | Path, expected_channels: int, expected_rate_hz: float) -> Recording:
    """Read a recording and check it against the declared channel count and rate.

    CSV files carry no rate of their own and are assigned ``expected_rate_hz``.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    if path.suffix.lower() == ".csv":
        data = _read_csv(path)
        rate = float(expected_rate_hz)
    else:
        data, _, rate = _read_binary(path)
    if data.shape[0] != expected_channels:
        raise ChannelCountMismatch(f"{path}: expected {expected_channels} channels, found {data.shape[0]}")
    if not np.isclose(rate, expected_rate_hz, rtol=1e-12, atol=0.0):
        raise SampleRateMismatch(f"{path}: expected {expected_rate_hz} Hz, file declares {rate} Hz")
    if not np.all(np.isfinite(data)):
        raise NonFiniteSample(f"{path}: contains NaN or Inf samples")
    return Recording(data, rate, source_id=str(path))


def segment_recording(
    rec: Recording, channel: int, n_parts: int, label: FaultClass | None = None
) -> list[Segment]:
    """Cut one channel into ``n_parts`` equal, contiguous pieces.

    Trailing samples that do not fill a whole part are dropped.
    """
    if not 0 <= channel < rec.channel_count:
        raise BadChannel(f"channel {channel} out of range for {rec.channel_count} channels")
    if n_parts < 1 or n_parts > rec.length:
        raise BadPartCount(f"n_parts must be in [1, {rec.length}], got {n_parts}")
    part = rec.length // n_parts
    row = rec.samples[channel]
    return [
        Segment(row[i * part:(i + 1) * part], rec.sample_rate_hz, label, i, n_parts)
        for i in range(n_parts)
    ]


def split_dataset(
    all_entries: Iterable[tuple[str, FaultClass]],
    val_fraction: float,
    test_fraction: float,
    seed: int,
    classes: Sequence[FaultClass] | None = None,
) -> DatasetManifest:
    """Stratified, seeded train/val/test split.

    Each class list is shuffled with its own generator seeded by
    ``(seed, class id)``; the first ``floor(n * test_fraction)`` shuffled
    entries become test, the next ``floor(n * val_fraction)`` become val and
    the remainder train. Entries keep their input order in the manifest.
    ``classes`` lists the classes that must be present (default: all 17).
    """
    if not (0 <= val_fraction and 0 <= test_fraction and val_fraction + test_fraction < 1):
        raise BadFraction(f"invalid fractions val={val_fraction} test={test_fraction}")
    entries = list(all_entries)
    by_class: dict[int, list[int]] = defaultdict(list)
    for idx, (_, fc) in enumerate(entries):
        by_class[fc.id].append(idx)
    required = ALL_CLASSES if classes is None else tuple(classes)
    for fc in required:
        if not by_class.get(fc.id):
            raise EmptyClass(f"class {fc.name} has no entries")

    tags: list[str] = ["train"] * len(entries)
    for class_id in sorted(by_class):
        members = by_class[class_id]
        order = np.random.default_rng([seed, class_id]).permutation(len(members))
        n_test = int(np.floor(len(members) * test_fraction))
        n_val = int(np.floor(len(members) * val_fraction))
        for rank, pos in enumerate(order):
            if rank < n_test:
                tags[members[pos]] = "test"
            elif rank < n_test + n_val:
                tags[members[pos]] = "val"
    manifest = tuple(ManifestEntry(p, fc, tag) for (p, fc), tag in zip(entries, tags))
    return DatasetManifest(manifest, seed)
