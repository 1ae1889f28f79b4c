"""End-to-end evaluation of a checkpoint on a test manifest."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DataError, MetricError
from .scoring import (ScoreRecord, aupro, auroc, image_score, sample_score,
                      score_instance, upsample_map)

__all__ = ["EvaluationResult", "evaluate", "write_scores_csv", "read_scores_csv",
           "write_pgm", "check_topology"]


@dataclass
class EvaluationResult:
    report: dict
    records: list
    maps: list = field(default_factory=list, repr=False)

    def write_report(self, path):
        with open(path, "w") as fh:
            fh.write(report_json(self.report))


def report_json(report):
    return json.dumps(report, indent=1, sort_keys=True) + "\n"


def _safe_auroc(scores, labels):
    try:
        return auroc(scores, labels)
    except MetricError:
        return None


def check_topology(ckpt, top_view=None, neighbor_view=None):
    """Refuse a checkpoint whose topology flags differ from the requested ones."""
    topo = ckpt.model.topology
    for name, want, have in (("top_view_connections", top_view, topo.top_view_connections),
                             ("neighbor_view_connections", neighbor_view,
                              topo.neighbor_view_connections)):
        if want is not None and bool(want) != have:
            raise DataError(f"checkpoint has {name}={have}, evaluation requested {want}")


def _neutral_background(values, mask):
    """Background takes the view's smallest foreground score before resampling."""
    out = values.astype(np.float64, copy=True)
    for v in range(out.shape[0]):
        fg = mask[v] > 0
        if fg.any():
            out[v][~fg] = out[v][fg].min()
    return out


def evaluate(ckpt, manifest, include_logdet=True, sigma=4.0, fpr_limit=0.3,
             keep_maps=False, top_view=None, neighbor_view=None):
    """Score every instance with zero noise and compute the detection metrics.

    Image and sample scores are maxima over foreground pixels.  Pixel AUROC
    and AUPRO use maps resampled to ground-truth resolution and only count
    pixels inside the stored foreground masks.
    """
    check_topology(ckpt, top_view, neighbor_view)
    manifest.validate()
    model = ckpt.model
    records, kept = [], []
    pix_scores, pix_labels = [], []
    up_maps, up_gts, up_valid = [], [], []
    for inst in manifest.iter_instances():
        if inst.features.shape != tuple(model.input_shape):
            raise DataError(f"instance {inst.id!r}: features {inst.features.shape} do not "
                            f"match the model input {tuple(model.input_shape)}")
        amap = score_instance(model, inst.features, inst.feature_masks(), inst.id,
                              include_logdet)
        scores = [image_score(amap, v) for v in range(amap.n_views)]
        records.append(ScoreRecord(inst.id, scores, sample_score(scores),
                                   list(inst.image_labels), int(inst.sample_label)))
        filled = _neutral_background(amap.values, amap.mask)
        ups = []
        for v in range(amap.n_views):
            up = upsample_map(filled[v], inst.gts[v].shape, sigma)
            fg = inst.masks[v] > 0
            pix_scores.append(up[fg])
            pix_labels.append((inst.gts[v][fg] > 0).astype(np.uint8))
            up_maps.append(up)
            up_gts.append(inst.gts[v] > 0)
            up_valid.append(fg)
            ups.append(up)
        if keep_maps:
            kept.append((inst.id, amap, np.stack(ups), inst.masks))

    image_s = [s for r in records for s in r.image_scores]
    image_l = [lab for r in records for lab in r.image_labels]
    pix_s = np.concatenate(pix_scores) if pix_scores else np.zeros(0)
    pix_l = np.concatenate(pix_labels) if pix_labels else np.zeros(0)
    try:
        pro = aupro(up_maps, up_gts, fpr_limit, up_valid)
    except MetricError:
        pro = None
    report = {
        "sample_auroc": _safe_auroc([r.sample_score for r in records],
                                    [r.sample_label for r in records]),
        "image_auroc": _safe_auroc(image_s, image_l),
        "pixel_auroc": _safe_auroc(pix_s, pix_l),
        "aupro": pro,
        "counts": {
            "instances": len(records),
            "anomalous_samples": int(sum(r.sample_label for r in records)),
            "images": len(image_l),
            "anomalous_images": int(sum(image_l)),
            "foreground_pixels": int(pix_l.size),
            "anomalous_pixels": int(pix_l.sum()),
        },
        "settings": {"include_logdet": include_logdet, "sigma": sigma,
                     "fpr_limit": fpr_limit},
    }
    return EvaluationResult(report, records, kept)


def write_scores_csv(path, records):
    """One row per view: ``instance_id,view,score,label`` (scores in repr form)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "view", "score", "label"])
        for r in records:
            for v, (s, lab) in enumerate(zip(r.image_scores, r.image_labels)):
                w.writerow([r.instance_id, v, repr(float(s)), int(lab)])


def read_scores_csv(path):
    """Return a list of ``(instance_id, view, score, label)`` rows."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"instance_id", "view", "score", "label"} - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: missing CSV columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                rows.append((row["instance_id"], int(row["view"]), float(row["score"]),
                             int(row["label"])))
            except (TypeError, ValueError):
                raise DataError(f"{path}:{line}: malformed row {row}") from None
    return rows


def csv_auroc(rows, level="image"):
    if level == "image":
        return auroc([r[2] for r in rows], [r[3] for r in rows])
    if level != "sample":
        raise ConfigurationError(f"unknown level {level!r}")
    by_id = {}
    for iid, _, score, label in rows:
        s, lab = by_id.get(iid, (-np.inf, 0))
        by_id[iid] = (max(s, score), max(lab, label))
    return auroc([s for s, _ in by_id.values()], [lab for _, lab in by_id.values()])


def write_pgm(path, image):
    """Binary 8-bit portable graymap (P5)."""
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def emit_maps(result, out_dir):
    """Write per-view graymaps, min-max normalized over each instance's foreground."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for iid, _, ups, masks in result.maps:
        fg = masks > 0
        vals = ups[fg]
        lo, hi = (float(vals.min()), float(vals.max())) if vals.size else (0.0, 1.0)
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        for v in range(ups.shape[0]):
            img = np.where(fg[v], np.rint((ups[v] - lo) * scale), 0)
            path = os.path.join(out_dir, f"{iid}_v{v}.pgm")
            write_pgm(path, np.clip(img, 0, 255))
            paths.append(path)
    return paths
