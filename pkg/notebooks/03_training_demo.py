"""
Training the tiny residual network in memory
============================================

A shortened version of the command-line pipeline: a few samples per class,
a few epochs, everything kept in memory.
"""

import numpy as np

from railwave.nn import SGD, step_schedule
from railwave.resnet import SPEC_PRESETS, build_model, evaluate, train_epoch
from railwave.signal_core import ALL_CLASSES
from railwave.synth import SynthConfig, generate_sample
from railwave.wavelet import make_scale_grid, segment_to_image

cfg = SynthConfig(samples_per_class=8, noise_sigma=0.2)
grid = make_scale_grid(50.0, 28800.0, 64, cfg.sample_rate_hz)


def images(indices):
    x, y = [], []
    for fc in ALL_CLASSES:
        for i in indices:
            x.append(segment_to_image(generate_sample(fc, i, cfg), grid).pixels)
            y.append(fc.id)
    return np.array(x, dtype=np.float32)[:, None], np.array(y)


train_x, train_y = images(range(6))
val_x, val_y = images(range(6, 8))
print(f"train {train_x.shape}, val {val_x.shape}")

# %%
# 309,633 parameters: a 7x7 stem, four basic blocks and a linear head.
model = build_model(SPEC_PRESETS["tiny"], seed=0)
print(f"parameters: {model.parameter_count():,}, weighted layers: {model.layer_count()}")

opt = SGD(model.named_parameters(), momentum=0.9, weight_decay=1e-4)
epochs = 6
lr_at = step_schedule(0.05, epochs)
for epoch in range(epochs):
    stats = train_epoch(model, opt, train_x, train_y, lr_at(epoch), seed=0, epoch=epoch)
    acc, _ = evaluate(model, val_x, val_y)
    print(f"epoch {epoch + 1}: loss {stats.mean_loss:.3f}, val accuracy {acc:.3f}")
