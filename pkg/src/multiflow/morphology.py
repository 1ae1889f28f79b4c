"""Foreground mask post-processing and resizing."""

import numpy as np
from scipy import ndimage

__all__ = ["fill_holes", "dilate", "mask_postprocess", "resize_mask", "area_resize"]

DILATION_SIZE = 8


def fill_holes(mask):
    """Set every background component not 4-connected to the border to 1."""
    return ndimage.binary_fill_holes(np.asarray(mask) > 0).astype(np.uint8)


def dilate(mask, size=DILATION_SIZE, anchor=None):
    """Binary dilation with a ``size`` x ``size`` all-ones element.

    The element origin sits at ``anchor`` (default ``(size - 1) // 2``, i.e.
    the top-left of the four central cells for even sizes), so a foreground
    pixel grows ``anchor`` pixels up/left and ``size - 1 - anchor`` down/right.
    """
    m = np.asarray(mask) > 0
    a = (size - 1) // 2 if anchor is None else anchor
    h, w = m.shape
    before, after = a, size - 1 - a
    padded = np.zeros((h + size - 1, w + size - 1), dtype=bool)
    padded[after:after + h, after:after + w] = m
    out = np.zeros_like(m)
    # out[y, x] = any m[y - dy, x - dx] for dy, dx in [-before, after]
    for dy in range(-before, after + 1):
        for dx in range(-before, after + 1):
            out |= padded[after - dy:after - dy + h, after - dx:after - dx + w]
    return out.astype(np.uint8)


def mask_postprocess(mask, size=DILATION_SIZE):
    """Hole filling followed by one dilation."""
    return dilate(fill_holes(mask), size)


def _area_matrix(n_out, n_in):
    # row i: fraction of target bin i covered by each source pixel
    edges_out = np.arange(n_out + 1) * (n_in / n_out)
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = edges_out[i], edges_out[i + 1]
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
            m[i, j] = min(hi, j + 1) - max(lo, j)
        m[i] /= hi - lo
    return m


def area_resize(values, target):
    """Area-weighted resampling of a 2-D array to ``target`` (h, w)."""
    values = np.asarray(values, dtype=np.float64)
    h, w = target
    return _area_matrix(h, values.shape[0]) @ values @ _area_matrix(w, values.shape[1]).T


def resize_mask(mask, target):
    """Area-average a binary mask to ``target`` and threshold at 0.5."""
    frac = area_resize(np.asarray(mask) > 0, target)
    return (frac >= 0.5 - 1e-9).astype(np.uint8)
