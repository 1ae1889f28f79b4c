"""Dataset manifests: JSON lists of multi-view instances backed by MFTN files."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, FormatError
from .morphology import resize_mask
from .tensorfile import read_tensor

__all__ = ["ViewRecord", "InstanceRecord", "DatasetManifest", "LoadedInstance"]


@dataclass
class ViewRecord:
    feature_path: str
    mask_path: str
    gt_path: str = None
    image_label: int = 0

    def to_dict(self):
        d = {"feature_path": self.feature_path, "mask_path": self.mask_path,
             "image_label": self.image_label}
        if self.gt_path is not None:
            d["gt_path"] = self.gt_path
        return d


@dataclass
class InstanceRecord:
    id: str
    views: list
    sample_label: int = 0

    def to_dict(self):
        return {"id": self.id, "views": [v.to_dict() for v in self.views],
                "sample_label": self.sample_label}


@dataclass
class LoadedInstance:
    """Arrays for one instance. ``masks``/``gts`` are at their stored resolution."""

    id: str
    features: np.ndarray
    masks: np.ndarray
    gts: np.ndarray
    image_labels: list
    sample_label: int

    def feature_masks(self):
        h, w = self.features.shape[-2:]
        if self.masks.shape[-2:] == (h, w):
            return (self.masks > 0).astype(np.uint8)
        return np.stack([resize_mask(m, (h, w)) for m in self.masks])


@dataclass
class DatasetManifest:
    instances: list
    root: str = field(default=".", compare=False)

    @classmethod
    def from_dict(cls, d, root="."):
        try:
            instances = [
                InstanceRecord(str(inst["id"]),
                               [ViewRecord(v["feature_path"], v["mask_path"],
                                           v.get("gt_path"), int(v.get("image_label", 0)))
                                for v in inst["views"]],
                               int(inst.get("sample_label", 0)))
                for inst in d["instances"]
            ]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed manifest: missing or invalid {exc}") from None
        return cls(instances, root)

    def to_dict(self):
        return {"instances": [i.to_dict() for i in self.instances]}

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d, os.path.dirname(os.path.abspath(path)))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def resolve(self, rel):
        return rel if os.path.isabs(rel) else os.path.join(self.root, rel)

    @property
    def n_views(self):
        return len(self.instances[0].views) if self.instances else 0

    def validate(self, training=False):
        if not self.instances:
            raise DataError("manifest has no instances")
        ids = set()
        for inst in self.instances:
            if inst.id in ids:
                raise DataError(f"duplicate instance id {inst.id!r}")
            ids.add(inst.id)
            if len(inst.views) != self.n_views:
                raise DataError(f"instance {inst.id!r} has {len(inst.views)} views, "
                                f"expected {self.n_views}")
            labels = [inst.sample_label] + [v.image_label for v in inst.views]
            if any(label not in (0, 1) for label in labels):
                raise DataError(f"instance {inst.id!r} has labels outside {{0, 1}}")
            if training and any(labels):
                raise DataError(f"training manifest contains anomalous instance {inst.id!r}")
            for v in inst.views:
                for p in (v.feature_path, v.mask_path, v.gt_path):
                    if p is not None and not os.path.exists(self.resolve(p)):
                        raise DataError(f"instance {inst.id!r}: missing file {p}")

    def load_instance(self, inst):
        feats, masks, gts = [], [], []
        for v in inst.views:
            f = read_tensor(self.resolve(v.feature_path))
            m = read_tensor(self.resolve(v.mask_path))
            if f.ndim != 3 or m.ndim != 2:
                raise DataError(f"instance {inst.id!r}: features must be (C, H, W) and "
                                f"masks (H, W), got {f.shape} and {m.shape}")
            g = (read_tensor(self.resolve(v.gt_path)) if v.gt_path is not None
                 else np.zeros(m.shape, dtype=np.uint8))
            if g.shape != m.shape:
                raise DataError(f"instance {inst.id!r}: ground truth {g.shape} "
                                f"does not match mask {m.shape}")
            feats.append(f)
            masks.append(m)
            gts.append(g)
        shapes = {f.shape for f in feats}
        if len(shapes) != 1 or len({m.shape for m in masks}) != 1:
            raise DataError(f"instance {inst.id!r}: views differ in shape")
        return LoadedInstance(inst.id, np.stack(feats).astype(np.float32), np.stack(masks),
                              np.stack(gts), [v.image_label for v in inst.views],
                              inst.sample_label)

    def iter_instances(self):
        shape = None
        for inst in self.instances:
            loaded = self.load_instance(inst)
            if shape is None:
                shape = loaded.features.shape
            elif loaded.features.shape != shape:
                raise DataError(f"instance {inst.id!r}: feature shape "
                                f"{loaded.features.shape} differs from {shape}")
            yield loaded

    def load_training_arrays(self):
        """Stacked (features, feature-resolution masks, ids) for training."""
        self.validate(training=True)
        loaded = list(self.iter_instances())
        return (np.stack([x.features for x in loaded]),
                np.stack([x.feature_masks() for x in loaded]),
                [x.id for x in loaded])
