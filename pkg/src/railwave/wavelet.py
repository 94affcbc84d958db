"""Morlet continuous wavelet transform and 64x64 scalogram feature images."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import numpy.typing as npt
from scipy import fft as sp_fft

from railwave.errors import (
    BadBand,
    EmptyScalogram,
    MalformedHeader,
    MissingFile,
    NonFiniteInput,
    NyquistExceeded,
    SegmentTooShort,
)
from railwave.signal_core import FaultClass, Segment

FloatArray = npt.NDArray[np.float64]
ComplexArray = npt.NDArray[np.complex128]

MORLET_NORM = math.pi ** -0.25
# Gaussian envelope is below exp(-32) beyond this many scale units.
SUPPORT_HALF_WIDTH = 8.0
MIN_SEGMENT_LENGTH = 8

IMAGE_MAGIC = b"RWIM"
IMAGE_VERSION = 1
_IMAGE_HEADER = struct.Struct("<4sIIII")
NO_LABEL = 0xFFFFFFFF


@dataclass(frozen=True)
class MorletParams:
    omega0: float = 6.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.omega0) and self.omega0 >= 5.0):
            raise ValueError(f"omega0 must be >= 5 for an admissible Morlet wavelet, got {self.omega0}")


@dataclass(frozen=True, eq=False)
class ScaleGrid:
    """Strictly increasing wavelet dilations, in samples."""

    scales: FloatArray

    def __post_init__(self) -> None:
        scales = np.array(self.scales, dtype=np.float64)
        if scales.ndim != 1 or scales.size == 0:
            raise ValueError("scales must be a non-empty 1-D array")
        if not np.all(np.isfinite(scales)) or np.any(scales <= 0):
            raise ValueError("scales must be finite and positive")
        if np.any(np.diff(scales) <= 0):
            raise ValueError("scales must be strictly increasing")
        scales.setflags(write=False)
        object.__setattr__(self, "scales", scales)

    @property
    def n_scales(self) -> int:
        return int(self.scales.size)

    def pseudo_frequencies(self, rate_hz: float, params: MorletParams = MorletParams()) -> FloatArray:
        return scale_to_frequency(self.scales, rate_hz, params)


@dataclass(frozen=True, eq=False)
class Scalogram:
    coefficients: ComplexArray
    scales: ScaleGrid
    sample_rate_hz: float

    def __post_init__(self) -> None:
        if self.coefficients.ndim != 2 or self.coefficients.shape[0] != self.scales.n_scales:
            raise ValueError("coefficient rows must match the scale grid")

    @property
    def magnitude(self) -> FloatArray:
        return np.abs(self.coefficients)


@dataclass(frozen=True, eq=False)
class FeatureImage:
    pixels: npt.NDArray[np.float32]
    source_label: FaultClass | None = None
    shape: tuple[int, int] = field(init=False)

    def __post_init__(self) -> None:
        pixels = np.array(self.pixels, dtype=np.float32)
        if pixels.ndim != 2:
            raise ValueError("feature image must be 2-D")
        if not np.all(np.isfinite(pixels)) or pixels.min() < 0 or pixels.max() > 1:
            raise ValueError("feature image pixels must lie in [0, 1]")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "shape", pixels.shape)


def morlet_sample(t: float | FloatArray, params: MorletParams = MorletParams()) -> complex | ComplexArray:
    """pi^(-1/4) * exp(i w0 t) * exp(-t^2 / 2)."""
    t = np.asarray(t, dtype=np.float64)
    out = MORLET_NORM * np.exp(1j * params.omega0 * t) * np.exp(-0.5 * t * t)
    return complex(out) if out.ndim == 0 else out


def scale_to_frequency(scales: FloatArray, rate_hz: float, params: MorletParams = MorletParams()) -> FloatArray:
    return params.omega0 * rate_hz / (2.0 * np.pi * np.asarray(scales, dtype=np.float64))


def frequency_to_scale(freqs: FloatArray, rate_hz: float, params: MorletParams = MorletParams()) -> FloatArray:
    return params.omega0 * rate_hz / (2.0 * np.pi * np.asarray(freqs, dtype=np.float64))


def make_scale_grid(
    f_min_hz: float,
    f_max_hz: float,
    n_scales: int,
    rate_hz: float,
    params: MorletParams = MorletParams(),
) -> ScaleGrid:
    """Log-spaced pseudo-frequencies from ``f_max_hz`` down to ``f_min_hz``, as scales."""
    if n_scales < 2:
        raise BadBand(f"need at least 2 scales, got {n_scales}")
    if not (rate_hz > 0 and 0 < f_min_hz < f_max_hz):
        raise BadBand(f"invalid band [{f_min_hz}, {f_max_hz}] Hz at {rate_hz} Hz")
    if f_max_hz > rate_hz / 2:
        raise NyquistExceeded(f"f_max {f_max_hz} Hz exceeds Nyquist {rate_hz / 2} Hz")
    freqs = np.geomspace(f_max_hz, f_min_hz, n_scales)
    return ScaleGrid(frequency_to_scale(freqs, rate_hz, params))


def default_scale_grid(rate_hz: float, params: MorletParams = MorletParams(), n_scales: int = 64) -> ScaleGrid:
    return make_scale_grid(50.0, 0.9 * rate_hz / 2, n_scales, rate_hz, params)


@lru_cache(maxsize=16)
def _filter_bank(scales_key: bytes, omega0: float, length: int) -> tuple[int, ComplexArray]:
    scales = np.frombuffer(scales_key, dtype=np.float64)
    half = [min(int(math.ceil(SUPPORT_HALF_WIDTH * a)), length - 1) for a in scales]
    n_fft = sp_fft.next_fast_len(length + 2 * max(half) + 1)
    bank = np.zeros((scales.size, n_fft), dtype=np.complex128)
    params = MorletParams(omega0)
    for row, (a, lw) in enumerate(zip(scales, half)):
        m = np.arange(-lw, lw + 1)
        # correlation with conj(psi((t-b)/a)) == convolution with psi(m/a) for the Morlet wavelet
        bank[row, m % n_fft] = morlet_sample(m / a, params) / math.sqrt(a)
    spectrum = sp_fft.fft(bank, axis=1)
    spectrum.setflags(write=False)
    return n_fft, spectrum


def cwt(
    segment: Segment | npt.ArrayLike,
    grid: ScaleGrid,
    params: MorletParams = MorletParams(),
    sample_rate_hz: float | None = None,
) -> Scalogram:
    """Morlet CWT ``W(a, b) = a^(-1/2) sum_t x[t] conj(psi((t - b) / a))``.

    Evaluated for every integer translation ``b`` of the segment by FFT
    convolution on a zero-padded buffer long enough that no wrap-around
    reaches the retained samples.
    """
    if isinstance(segment, Segment):
        x = segment.samples
        rate = segment.sample_rate_hz if sample_rate_hz is None else sample_rate_hz
    else:
        x = np.asarray(segment, dtype=np.float64)
        rate = 1.0 if sample_rate_hz is None else sample_rate_hz
    if x.ndim != 1:
        raise ValueError("cwt expects a 1-D signal")
    if x.size < MIN_SEGMENT_LENGTH:
        raise SegmentTooShort(f"segment length {x.size} < {MIN_SEGMENT_LENGTH}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("segment contains NaN or Inf")
    n = x.size
    n_fft, bank = _filter_bank(grid.scales.tobytes(), float(params.omega0), n)
    spectrum = sp_fft.fft(x, n=n_fft)
    coeffs = sp_fft.ifft(bank * spectrum[None, :], axis=1)[:, :n]
    return Scalogram(np.ascontiguousarray(coeffs), grid, float(rate))


def _area_weights(n_in: int, n_out: int) -> FloatArray:
    """Row i averages source cells over [i * n_in / n_out, (i + 1) * n_in / n_out)."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo = edges[:-1, None]
    hi = edges[1:, None]
    cells = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, cells + 1) - np.maximum(lo, cells), 0.0, None)
    return overlap / (n_in / n_out)


def area_resize(image: FloatArray, out_h: int, out_w: int) -> FloatArray:
    """Area-averaging resize with fractional edge weighting; preserves the mean."""
    image = np.asarray(image, dtype=np.float64)
    rows = _area_weights(image.shape[0], out_h)
    cols = _area_weights(image.shape[1], out_w)
    return rows @ image @ cols.T


def minmax_normalize(image: FloatArray) -> FloatArray:
    lo, hi = float(image.min()), float(image.max())
    # a spread at rounding level (e.g. a resized constant image) counts as constant
    if hi - lo <= 1e-12 * max(abs(lo), abs(hi)):
        return np.zeros_like(image, dtype=np.float64)
    return (image - lo) / (hi - lo)


def scalogram_to_image(
    s: Scalogram, out_h: int = 64, out_w: int = 64, label: FaultClass | None = None
) -> FeatureImage:
    mag = s.magnitude
    if mag.size == 0:
        raise EmptyScalogram("scalogram has no coefficients")
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    if not np.all(np.isfinite(mag)):
        raise NonFiniteInput("scalogram contains non-finite coefficients")
    pixels = minmax_normalize(area_resize(mag, out_h, out_w))
    return FeatureImage(pixels.astype(np.float32), label)


def segment_to_image(
    segment: Segment,
    grid: ScaleGrid,
    params: MorletParams = MorletParams(),
    size: tuple[int, int] = (64, 64),
) -> FeatureImage:
    return scalogram_to_image(cwt(segment, grid, params), *size, label=segment.label)


def write_image(path: str | Path, image: FeatureImage) -> None:
    h, w = image.shape
    class_id = NO_LABEL if image.source_label is None else image.source_label.id
    header = _IMAGE_HEADER.pack(IMAGE_MAGIC, IMAGE_VERSION, h, w, class_id)
    Path(path).write_bytes(header + np.ascontiguousarray(image.pixels, dtype="<f4").tobytes())


def read_image(path: str | Path) -> FeatureImage:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    raw = path.read_bytes()
    if len(raw) < _IMAGE_HEADER.size:
        raise MalformedHeader(f"{path}: truncated image header")
    magic, version, h, w, class_id = _IMAGE_HEADER.unpack_from(raw)
    if magic != IMAGE_MAGIC or version != IMAGE_VERSION:
        raise MalformedHeader(f"{path}: not an RWIM v{IMAGE_VERSION} file")
    payload = raw[_IMAGE_HEADER.size:]
    if len(payload) != 4 * h * w:
        raise MalformedHeader(f"{path}: payload size does not match {h}x{w}")
    pixels = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    label = None if class_id == NO_LABEL else FaultClass.from_id(class_id)
    return FeatureImage(pixels, label)


def export_pgm(path: str | Path, image: FeatureImage) -> None:
    """8-bit binary PGM for eyeballing; never read back."""
    h, w = image.shape
    body = np.round(image.pixels.astype(np.float64) * 255.0).astype(np.uint8).tobytes()
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + body)
