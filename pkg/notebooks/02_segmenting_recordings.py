"""
From a 21-channel recording to feature images
=============================================

A measurement file holds many channels; one channel is selected and cut
into equal parts, and every part becomes one training image.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from railwave.signal_core import Recording, load_recording, segment_recording, write_recording
from railwave.wavelet import make_scale_grid, segment_to_image

rate = 64000.0
rng = np.random.default_rng(0)
t = np.arange(64000) / rate

# %%
# Build a fake 21-channel, one-second recording: each channel carries a tone
# of its own plus noise, and save it in the binary signal format.
samples = np.array([np.sin(2 * np.pi * (200 + 150 * ch) * t) for ch in range(21)])
samples += 0.1 * rng.standard_normal(samples.shape)
work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
work.mkdir(parents=True, exist_ok=True)
path = work / "run_0001.rwsg"
write_recording(path, Recording(samples, rate))
print(f"wrote {path} ({path.stat().st_size} bytes)")

# %%
# Loading checks the header against what the caller expects.
rec = load_recording(path, expected_channels=21, expected_rate_hz=rate)
print(f"{rec.channel_count} channels x {rec.length} samples at {rec.sample_rate_hz:g} Hz")

# %%
# Channel 4 carries an 800 Hz tone; ten parts of 6400 samples each.
parts = segment_recording(rec, channel=4, n_parts=10)
grid = make_scale_grid(50.0, 28800.0, 64, rate)
freqs = grid.pseudo_frequencies(rate)
for seg in parts[:3]:
    img = segment_to_image(seg, grid)
    row = int(np.argmax(img.pixels.mean(axis=1)))
    print(f"part {seg.segment_index}: {len(seg)} samples, brightest row {row} (~{freqs[row]:.0f} Hz)")
print(f"... {len(parts)} parts in total")
