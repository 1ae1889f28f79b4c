"""Desk-scale synthetic multi-view feature datasets with planted defects.

Normal instance, view ``v``, foreground pixel::

    y_v = offset + R_v @ (u + g_v) + noise

``u`` is a per-instance latent shared by all views, ``g_v`` a weaker smooth
per-view field and ``R_v`` a fixed random rotation per view.  Because each
``R_v`` is orthogonal and the latent is isotropic, a single view on its own
is isotropic Gaussian: its channels carry no information about each other.
Across views the channels are strongly correlated, so the shared latent can
only be recovered by looking at the other views.  Background pixels are
i.i.d. high-variance noise.

Defects are additive discs of constant feature direction:

* ``single_view_blob``: one view, random direction in channel space.
* ``cross_view_blob``: a weaker blob in one view along a latent direction
  ``lat`` (feature direction ``R_v @ lat``) plus half-magnitude blobs along the
  same latent direction in each of its neighbors.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import ndimage

from .exceptions import ConfigurationError, DataError
from .manifest import DatasetManifest, InstanceRecord, ViewRecord
from .morphology import area_resize, resize_mask
from .multiview import build_view_topology
from .tensorfile import write_tensor

__all__ = ["ANOMALY_KINDS", "SynthConfig", "SyntheticInstance", "generate_instances",
           "generate_synthetic", "disc_mask"]

ANOMALY_KINDS = ("single_view_blob", "cross_view_blob")


@dataclass
class SynthConfig:
    n_train: int = 200
    n_test_normal: int = 100
    n_test_anomalous: int = 100
    channels: int = 16
    height: int = 8
    width: int = 8
    n_side_views: int = 4
    image_scale: int = 4
    anomaly_kinds: list = field(default_factory=lambda: ["single_view_blob"])
    blob_magnitude: list = field(default_factory=lambda: [3.0, 5.0])
    blob_radius: list = field(default_factory=lambda: [1.0, 1.75])
    shared_scale: float = 1.5
    view_scale: float = 0.2
    noise_scale: float = 0.2
    background_scale: float = 2.0
    smoothness: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("channels", "height", "width", "image_scale"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if min(self.n_train, self.n_test_normal, self.n_test_anomalous, self.n_side_views) < 0:
            raise ConfigurationError("counts must be non-negative")
        if self.channels < 2:
            raise ConfigurationError("channels must be at least 2")
        kinds = list(self.anomaly_kinds)
        if not kinds or any(k not in ANOMALY_KINDS for k in kinds):
            raise ConfigurationError(
                f"anomaly_kinds must be a non-empty subset of {ANOMALY_KINDS}")
        for name in ("blob_magnitude", "blob_radius"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ConfigurationError(f"{name} must be a range [lo, hi] with 0 <= lo <= hi")
        if self.blob_radius[0] <= 0:
            raise ConfigurationError("blob_radius must be positive")

    @property
    def n_views(self):
        return self.n_side_views + 1

    @property
    def image_shape(self):
        return self.height * self.image_scale, self.width * self.image_scale

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown SynthConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)

    def to_dict(self):
        return asdict(self)


@dataclass
class SyntheticInstance:
    id: str
    features: np.ndarray      # (V, C, H, W) float32
    masks: np.ndarray         # (V, IH, IW) uint8, image resolution
    gts: np.ndarray           # (V, IH, IW) uint8
    image_labels: list
    sample_label: int
    kind: str = None

    def feature_masks(self):
        h, w = self.features.shape[-2:]
        return np.stack([resize_mask(m, (h, w)) for m in self.masks])


def disc_mask(shape, center, radius):
    """Pixels whose centers lie within ``radius`` of ``center`` (row, col)."""
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    d2 = (yy + 0.5 - center[0]) ** 2 + (xx + 0.5 - center[1]) ** 2
    return (d2 <= radius ** 2).astype(np.uint8)


class _World:
    """Quantities shared by every instance of one dataset."""

    def __init__(self, cfg):
        rng = np.random.default_rng([cfg.seed])
        self.offset = rng.normal(size=cfg.channels)
        self.rotations = []
        for _ in range(cfg.n_views):
            q, r = np.linalg.qr(rng.normal(size=(cfg.channels, cfg.channels)))
            self.rotations.append(q * np.sign(np.diag(r)))
        self.topology = build_view_topology(cfg.n_side_views, True, True)


def _smooth_fields(rng, k, h, w, sigma):
    f = rng.normal(size=(k, h, w))
    if sigma > 0:
        f = ndimage.gaussian_filter(f, sigma=(0, sigma, sigma), mode="wrap")
    std = f.std(axis=(1, 2), keepdims=True)
    return f / np.where(std > 0, std, 1.0)


def _add_blob(rng, cfg, feat, gt, mask_geom, direction, magnitude):
    """Plant one disc inside the view's foreground; updates feat and gt in place."""
    ih, iw = cfg.image_shape
    s = cfg.image_scale
    (cy, cx), radius = mask_geom
    r = rng.uniform(*cfg.blob_radius) * s
    reach = max(radius - r - s, 0.0)
    ang = rng.uniform(0, 2 * np.pi)
    dist = reach * np.sqrt(rng.random())
    center = (cy + dist * np.sin(ang), cx + dist * np.cos(ang))
    support = disc_mask((ih, iw), center, r)
    weight = area_resize(support, (cfg.height, cfg.width))
    feat += (magnitude * weight)[None] * direction[:, None, None]
    gt |= support


def _instance(cfg, world, index, instance_id, anomalous):
    rng = np.random.default_rng([cfg.seed, index])
    v, c, h, w = cfg.n_views, cfg.channels, cfg.height, cfg.width
    ih, iw = cfg.image_shape
    # shared latent: a per-instance offset plus a smooth field common to all
    # views, scaled so each pixel's latent has standard deviation shared_scale
    shared = cfg.shared_scale / np.sqrt(2) * (
        rng.normal(size=(c, 1, 1)) + _smooth_fields(rng, c, h, w, cfg.smoothness))

    feats = np.empty((v, c, h, w))
    masks = np.empty((v, ih, iw), dtype=np.uint8)
    # one object seen from every view: the foreground disc is shared so that
    # co-located pixels of different views describe the same surface point
    center = (ih / 2 + rng.uniform(-1, 1) * cfg.image_scale,
              iw / 2 + rng.uniform(-1, 1) * cfg.image_scale)
    radius = rng.uniform(0.34, 0.44) * min(ih, iw)
    geoms = [(center, radius)] * v
    for k in range(v):
        masks[k] = disc_mask((ih, iw), center, radius)
        latent = shared + cfg.view_scale * _smooth_fields(
            rng, c, h, w, cfg.smoothness)
        feats[k] = (world.offset[:, None, None]
                    + np.einsum("cj,jhw->chw", world.rotations[k], latent)
                    + cfg.noise_scale * rng.normal(size=(c, h, w)))

    gts = np.zeros((v, ih, iw), dtype=np.uint8)
    kind = None
    if anomalous:
        kind = cfg.anomaly_kinds[rng.integers(len(cfg.anomaly_kinds))]
        view = int(rng.integers(v))
        lo, hi = cfg.blob_magnitude
        mag = rng.uniform(lo, hi)
        if kind == "single_view_blob":
            d = rng.normal(size=c)
            d /= np.linalg.norm(d)
            _add_blob(rng, cfg, feats[view], gts[view], geoms[view], d, mag)
        else:
            lat = rng.normal(size=c)
            lat /= np.linalg.norm(lat)
            _add_blob(rng, cfg, feats[view], gts[view], geoms[view],
                      world.rotations[view] @ lat, mag)
            for j in world.topology.neighbors(view):
                _add_blob(rng, cfg, feats[j], gts[j], geoms[j], world.rotations[j] @ lat, mag / 2)

    # background is drawn last so it never depends on the defect draws
    fmasks = np.stack([resize_mask(m, (h, w)) for m in masks])
    bg = cfg.background_scale * rng.normal(size=(v, c, h, w))
    feats = np.where(fmasks[:, None] > 0, feats, bg)

    image_labels = [int(g.any()) for g in gts]
    return SyntheticInstance(instance_id, feats.astype(np.float32), masks, gts,
                             image_labels, int(any(image_labels)), kind)


def generate_instances(cfg):
    """Return ``(train, test)`` lists of :class:`SyntheticInstance`.

    Instance ``i`` (counted over train, then test normals, then test
    anomalies) draws from its own stream seeded by ``(seed, i)``.
    """
    world = _World(cfg)
    train, test = [], []
    index = 0
    for i in range(cfg.n_train):
        train.append(_instance(cfg, world, index, f"train_{i:04d}", False))
        index += 1
    for i in range(cfg.n_test_normal + cfg.n_test_anomalous):
        anomalous = i >= cfg.n_test_normal
        test.append(_instance(cfg, world, index, f"test_{i:04d}", anomalous))
        index += 1
    return train, test


def _write_split(instances, out_dir, name, with_gt):
    records = []
    for inst in instances:
        views = []
        for k in range(inst.features.shape[0]):
            stem = f"data/{inst.id}_v{k}"
            write_tensor(os.path.join(out_dir, f"{stem}_feat.mftn"), inst.features[k])
            write_tensor(os.path.join(out_dir, f"{stem}_mask.mftn"), inst.masks[k])
            gt_path = None
            if with_gt:
                gt_path = f"{stem}_gt.mftn"
                write_tensor(os.path.join(out_dir, gt_path), inst.gts[k])
            views.append(ViewRecord(f"{stem}_feat.mftn", f"{stem}_mask.mftn", gt_path,
                                    inst.image_labels[k]))
        records.append(InstanceRecord(inst.id, views, inst.sample_label))
    manifest = DatasetManifest(records, out_dir)
    manifest.save(os.path.join(out_dir, f"{name}.json"))
    return manifest


def generate_synthetic(cfg, out_dir):
    """Write ``train.json``, ``test.json`` and their tensor files under ``out_dir``."""
    try:
        os.makedirs(os.path.join(out_dir, "data"), exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from None
    train, test = generate_instances(cfg)
    with open(os.path.join(out_dir, "synth_config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return (_write_split(train, out_dir, "train", False),
            _write_split(test, out_dir, "test", True))
