"""Input checks shared by the estimator front end."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import DataError
from .morphology import resize_mask


def check_features(X):
    """Return ``X`` as a finite float32 array of shape (N, V, C, H, W)."""
    try:
        X = check_array(X, dtype=np.float32, allow_nd=True, ensure_2d=False,
                        ensure_all_finite=True)
    except ValueError as exc:
        raise DataError(f"invalid features: {exc}") from None
    if X.ndim == 4:
        X = X[None]
    if X.ndim != 5:
        raise DataError(f"features must be (N, V, C, H, W) or (V, C, H, W), got {X.shape}")
    if X.shape[0] == 0:
        raise DataError("features contain no instances")
    return X


def check_masks(masks, X):
    """Binary foreground masks at feature resolution, shape (N, V, H, W).

    ``None`` means every pixel is foreground.  Masks stored at a different
    resolution are area-resized to the feature grid.
    """
    n, v, _, h, w = X.shape
    if masks is None:
        return np.ones((n, v, h, w), dtype=np.uint8)
    masks = np.asarray(masks)
    if masks.ndim == 3:
        masks = masks[None]
    if masks.ndim != 4 or masks.shape[:2] != (n, v):
        raise DataError(f"masks must be (N, V, H, W) with N={n}, V={v}, got {masks.shape}")
    if masks.shape[2:] != (h, w):
        masks = np.stack([[resize_mask(m, (h, w)) for m in inst] for inst in masks])
    return (masks > 0).astype(np.uint8)
