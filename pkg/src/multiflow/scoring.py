"""Anomaly maps, max-aggregated scores, map upsampling and AUROC / AUPRO."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from . import tensor as T
from .exceptions import ConfigurationError, DataError, MetricError
from .flow import flow_forward

__all__ = [
    "AnomalyMap",
    "ScoreRecord",
    "anomaly_map",
    "image_score",
    "sample_score",
    "upsample_map",
    "auroc",
    "aupro",
    "pro_curve",
    "score_instance",
]


@dataclass
class AnomalyMap:
    """Per-view, per-pixel negative log-likelihood plus the foreground mask."""

    values: np.ndarray
    mask: np.ndarray
    instance_id: object = None

    @property
    def n_views(self):
        return self.values.shape[0]


@dataclass
class ScoreRecord:
    instance_id: object
    image_scores: list
    sample_score: float
    image_labels: list
    sample_label: int


def anomaly_map(z, logdet, mask, instance_id=None, include_logdet=True):
    """values = 0.5 * sum_c z**2 - logdet (the log-det term is optional)."""
    z = np.asarray(z.data if isinstance(z, T.Tensor) else z)
    logdet = np.asarray(logdet.data if isinstance(logdet, T.Tensor) else logdet)
    mask = np.asarray(mask)
    v, _, h, w = z.shape
    if logdet.shape != (v, h, w) or mask.shape != (v, h, w):
        raise ConfigurationError(
            f"inconsistent shapes: z {z.shape}, logdet {logdet.shape}, mask {mask.shape}")
    values = 0.5 * (z * z).sum(axis=1)
    if include_logdet:
        values = values - logdet
    return AnomalyMap(values, (mask > 0).astype(np.uint8), instance_id)


def image_score(amap, view):
    """Maximum over the view's foreground pixels."""
    if not 0 <= view < amap.n_views:
        raise ConfigurationError(f"view {view} out of range for {amap.n_views} views")
    fg = amap.mask[view] > 0
    if not fg.any():
        raise DataError(f"instance {amap.instance_id!r} view {view} has no foreground")
    return float(amap.values[view][fg].max())


def sample_score(image_scores):
    """Maximum over the image scores of one instance."""
    scores = list(image_scores)
    if not scores:
        raise DataError("sample_score needs at least one image score")
    return float(max(scores))


def score_instance(model, features, mask, instance_id=None, include_logdet=True):
    """Run the flow with zero noise and return the instance's AnomalyMap."""
    features = np.asarray(features, dtype=model.dtype)
    eps = np.zeros((features.shape[0], model.noise_channels) + features.shape[2:],
                   dtype=model.dtype)
    z, logdet = flow_forward(features, eps, model)
    return anomaly_map(z, logdet, mask, instance_id, include_logdet)


def _interp_matrix(n_out, n_in):
    """Rows hold bilinear weights with half-pixel centers (no corner alignment)."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def upsample_map(values, target, sigma=4.0):
    """Bilinear resize of a 2-D map, then optional Gaussian smoothing.

    ``sigma`` is in target pixels; 0 or None disables smoothing.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ConfigurationError(f"expected a 2-D map, got shape {values.shape}")
    th, tw = target
    out = _interp_matrix(th, values.shape[0]) @ values @ _interp_matrix(tw, values.shape[1]).T
    if sigma:
        out = ndimage.gaussian_filter(out, sigma=sigma, mode="reflect")
    return out


def auroc(scores, labels):
    """Mann-Whitney AUROC; ties between a positive and a negative count one half."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ConfigurationError("scores and labels differ in length")
    if not np.isin(labels, (0, 1)).all():
        raise MetricError("labels must be 0 or 1")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs both positive and negative labels")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pro_curve(maps, gt_masks, valid_masks=None):
    """Exact (fpr, pro) operating points for every distinct threshold.

    A pixel is flagged when its score is >= the threshold.  Regions are the
    8-connected components of each ground-truth mask; pixels outside
    ``valid_masks`` are ignored.  The first point is (0, 0).
    """
    scores, region_w, normal = [], [], []
    n_regions = 0
    per_image = []
    for i, (m, g) in enumerate(zip(maps, gt_masks)):
        m = np.asarray(m, dtype=np.float64)
        g = np.asarray(g) > 0
        if m.shape != g.shape:
            raise ConfigurationError(f"map {i} shape {m.shape} != ground truth {g.shape}")
        valid = np.ones_like(g) if valid_masks is None else np.asarray(valid_masks[i]) > 0
        labels, count = ndimage.label(g & valid, structure=np.ones((3, 3), dtype=int))
        per_image.append((m[valid], g[valid], labels[valid], count))
        n_regions += count
    if n_regions == 0:
        raise MetricError("AUPRO needs at least one anomalous region")

    for m, g, labels, count in per_image:
        sizes = np.bincount(labels, minlength=count + 1).astype(np.float64)
        w = np.zeros(m.shape)
        w[g] = 1.0 / (n_regions * sizes[labels[g]])
        scores.append(m)
        region_w.append(w)
        normal.append(~g)
    scores = np.concatenate(scores)
    region_w = np.concatenate(region_w)
    normal = np.concatenate(normal)
    n_normal = int(normal.sum())
    if n_normal == 0:
        raise MetricError("AUPRO needs at least one normal pixel")

    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    pro = np.cumsum(region_w[order])
    fpr = np.cumsum(normal[order]) / n_normal
    # keep the last index of every group of tied scores
    last = np.r_[s[1:] != s[:-1], True]
    fpr = np.r_[0.0, fpr[last]]
    pro = np.r_[0.0, np.minimum(pro[last], 1.0)]
    return fpr, pro


def _integrate_to(fpr, pro, limit):
    """Trapezoid area under pro(fpr) on [0, limit], interpolating at the limit."""
    keep = fpr <= limit
    x, y = fpr[keep], pro[keep]
    if x[-1] < limit:
        j = np.searchsorted(fpr, limit, side="right")
        if j < fpr.size:
            x0, x1, y0, y1 = fpr[j - 1], fpr[j], pro[j - 1], pro[j]
            y_lim = y0 + (y1 - y0) * (limit - x0) / (x1 - x0)
        else:
            y_lim = y[-1]
        x = np.r_[x, limit]
        y = np.r_[y, y_lim]
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def aupro(maps, gt_masks, fpr_limit=0.3, valid_masks=None):
    """Normalized area under the per-region-overlap curve up to ``fpr_limit``."""
    if not 0 < fpr_limit <= 1:
        raise ConfigurationError("fpr_limit must lie in (0, 1]")
    fpr, pro = pro_curve(maps, gt_masks, valid_masks)
    return _integrate_to(fpr, pro, fpr_limit) / fpr_limit
