import hashlib
import os

import numpy as np
import pytest

from conftest import SMALL_SYNTH
from multiflow.exceptions import ConfigurationError
from multiflow.multiview import build_view_topology
from multiflow.synth import SynthConfig, disc_mask, generate_instances, generate_synthetic


def _tree_digest(root):
    h = hashlib.sha256()
    for dirpath, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            h.update(os.path.relpath(path, root).encode())
            with open(path, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def test_same_seed_gives_byte_identical_dataset(tmp_path):
    cfg = SynthConfig(**SMALL_SYNTH)
    generate_synthetic(cfg, str(tmp_path / "a"))
    generate_synthetic(cfg, str(tmp_path / "b"))
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")
    generate_synthetic(SynthConfig(**{**SMALL_SYNTH, "seed": 4}), str(tmp_path / "c"))
    assert _tree_digest(tmp_path / "a") != _tree_digest(tmp_path / "c")


def test_manifests_and_labels(small_dataset):
    root, train, test = small_dataset
    train.validate(training=True)
    test.validate()
    assert len(train.instances) == 6 and len(test.instances) == 8
    assert [i.sample_label for i in test.instances] == [0] * 4 + [1] * 4
    assert (root / "synth_config.json").exists()
    for inst in test.iter_instances():
        assert inst.image_labels == [int(g.any()) for g in inst.gts]
        assert inst.sample_label == int(any(inst.image_labels))
        assert not (inst.gts & (inst.masks == 0)).any()  # defects lie on the object


def test_no_anomalies_means_all_labels_zero():
    _, test = generate_instances(SynthConfig(**{**SMALL_SYNTH, "n_test_anomalous": 0}))
    assert len(test) == 4
    assert all(t.sample_label == 0 and not t.gts.any() for t in test)


def test_single_view_blob_touches_one_view():
    _, test = generate_instances(SynthConfig(**{**SMALL_SYNTH, "n_test_anomalous": 12}))
    for t in test[4:]:
        assert sum(t.image_labels) == 1


def test_cross_view_blob_marks_the_view_and_its_neighbors():
    cfg = SynthConfig(**{**SMALL_SYNTH, "n_test_anomalous": 12,
                         "anomaly_kinds": ["cross_view_blob"]})
    topo = build_view_topology(cfg.n_side_views)
    _, test = generate_instances(cfg)
    for t in test[4:]:
        marked = {v for v, lab in enumerate(t.image_labels) if lab}
        assert any(marked == {v} | set(topo.neighbors(v)) for v in marked)


@pytest.mark.parametrize("center, radius", [((8.0, 8.0), 4.0), ((5.5, 9.25), 2.5),
                                            ((10.0, 6.0), 6.0)])
def test_disc_pixel_count_matches_area(center, radius):
    count = disc_mask((20, 20), center, radius).sum()
    # lattice-point count deviates from pi r^2 by at most the boundary band
    assert abs(count - np.pi * radius ** 2) <= 2 * np.pi * radius * 0.75


def test_blob_area_matches_configured_radius():
    cfg = SynthConfig(**{**SMALL_SYNTH, "n_test_anomalous": 10, "blob_radius": [1.5, 1.5]})
    r = 1.5 * cfg.image_scale
    _, test = generate_instances(cfg)
    for t in test[4:]:
        count = int(t.gts.sum())
        assert abs(count - np.pi * r ** 2) <= 2 * np.pi * r * 0.75


def test_views_are_individually_uncorrelated_but_jointly_correlated():
    cfg = SynthConfig(n_train=40, n_test_normal=0, n_test_anomalous=0, seed=1)
    train, _ = generate_instances(cfg)
    fg = [t.feature_masks() for t in train]
    pix = [[t.features[v][:, m[v] > 0].T for t, m in zip(train, fg)] for v in range(2)]
    a, b = np.concatenate(pix[0]), np.concatenate(pix[1])
    within = np.corrcoef(a.T)[np.triu_indices(cfg.channels, 1)]
    across = np.corrcoef(a.T, b.T)[:cfg.channels, cfg.channels:]
    assert np.abs(within).max() < 0.3
    assert np.abs(across).max() > 0.5


def test_config_validation(tmp_path):
    for bad in ({"channels": 1}, {"height": 0}, {"anomaly_kinds": []},
                {"anomaly_kinds": ["scratch"]}, {"blob_magnitude": [2, 1]},
                {"blob_radius": [0, 1]}, {"n_train": -1}):
        with pytest.raises(ConfigurationError):
            SynthConfig(**bad)
    with pytest.raises(ConfigurationError, match="unknown"):
        SynthConfig.from_dict({"latent_dim": 3})
    path = tmp_path / "c.json"
    path.write_text('{"seed": 9, "channels": 6}')
    assert SynthConfig.from_json(path) == SynthConfig(seed=9, channels=6)
    path.write_text("{")
    with pytest.raises(ConfigurationError):
        SynthConfig.from_json(path)
