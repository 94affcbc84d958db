"""
Per-class precision, recall and F1
==================================

A 17-class confusion matrix with six test samples per class, in the shape
of a published evaluation table.
"""

import numpy as np

from railwave.metrics import ConfusionMatrix, accuracy, micro_precision_recall, per_class_metrics, render_table
from railwave.signal_core import ALL_CLASSES

names = tuple(fc.name for fc in ALL_CLASSES)
rng = np.random.default_rng(3)

# %%
# Start from a perfect diagonal and move 31 of the 102 samples to random
# wrong classes, which leaves 71 correct.
counts = np.diag(np.full(17, 6))
for _ in range(31):
    true = rng.choice(np.flatnonzero(np.diag(counts) > 0))
    wrong = (true + rng.integers(1, 17)) % 17
    counts[true, true] -= 1
    counts[true, wrong] += 1
cm = ConfusionMatrix(counts, names)

print(render_table(per_class_metrics(cm)))
print(f"accuracy {accuracy(cm):.4f}")

# %%
# Pooled over classes, precision and recall both collapse to accuracy.
p, r = micro_precision_recall(cm)
print(f"micro precision {p:.4f}, micro recall {r:.4f}")
