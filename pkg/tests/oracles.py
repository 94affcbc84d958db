"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import math

import numpy as np


def morlet(t, omega0=6.0):
    return math.pi ** -0.25 * np.exp(1j * omega0 * t) * np.exp(-0.5 * t * t)


def cwt_direct(x, scales, omega0=6.0):
    """W(a, b) = a^-1/2 sum_t x[t] conj(psi((t - b) / a)), untruncated double sum."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    t = np.arange(n)
    out = np.empty((len(scales), n), dtype=np.complex128)
    for i, a in enumerate(scales):
        for b in range(n):
            out[i, b] = np.sum(x * np.conj(morlet((t - b) / a, omega0))) / math.sqrt(a)
    return out


def area_resize_loop(image, out_h, out_w):
    """Per-output-pixel average over the exact fractional source rectangle."""
    h, w = image.shape
    sy, sx = h / out_h, w / out_w
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            acc = 0.0
            for r in range(h):
                wy = max(0.0, min((i + 1) * sy, r + 1) - max(i * sy, r))
                if wy == 0:
                    continue
                for c in range(w):
                    wx = max(0.0, min((j + 1) * sx, c + 1) - max(j * sx, c))
                    acc += wy * wx * image[r, c]
            out[i, j] = acc / (sy * sx)
    return out


def conv2d_loop(x, w, stride=1, pad=0, bias=None):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for b in range(n):
        for k in range(o):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, k, i, j] = np.sum(patch * w[k]) + (0.0 if bias is None else bias[k])
    return out


def confusion_from_counts(k, class_index, tp, fp, per_class):
    """A k-class matrix with ``per_class`` samples per true class and the given tp/fp on one class.

    Missed samples of ``class_index`` go to the next class; false positives
    are drawn one each from the following classes.
    """
    cm = np.diag(np.full(k, per_class)).astype(np.int64)
    cm[class_index, class_index] = tp
    cm[class_index, (class_index + 1) % k] += per_class - tp
    donors = [(class_index + 2 + j) % k for j in range(k - 2)]
    for j in range(fp):
        d = donors[j % len(donors)]
        cm[d, d] -= 1
        cm[d, class_index] += 1
    assert (cm >= 0).all() and (cm.sum(axis=1) == per_class).all()
    return cm


def finite_difference(f, x, h):
    """Central differences of scalar f over every coordinate of x (modified in place, restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g
