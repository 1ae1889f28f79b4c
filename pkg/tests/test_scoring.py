import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.metrics import auc as sk_auc
from sklearn.metrics import roc_curve

from conftest import make_model
from multiflow.exceptions import ConfigurationError, DataError, MetricError
from multiflow.flow import flow_forward
from multiflow.scoring import (
    anomaly_map, aupro, auroc, image_score, pro_curve, sample_score, score_instance,
    upsample_map)
from multiflow.training import nll_loss
from oracles import aupro_bruteforce, auroc_pairs

labels_and_scores = st.integers(2, 50).flatmap(lambda n: st.tuples(
    arrays(np.int64, n, elements=st.integers(0, 12)),
    arrays(np.int64, n, elements=st.integers(0, 1))))


# -- maps and scores -------------------------------------------------------------

def test_anomaly_map_examples(rng):
    amap = anomaly_map(np.zeros((2, 3, 2, 2)), np.zeros((2, 2, 2)), np.ones((2, 2, 2)))
    assert not amap.values.any()
    z = np.ones((1, 2, 1, 1))
    assert anomaly_map(z, np.zeros((1, 1, 1)), np.ones((1, 1, 1))).values[0, 0, 0] == 1.0
    assert anomaly_map(z, np.full((1, 1, 1), 3.0), np.ones((1, 1, 1)),
                       include_logdet=False).values[0, 0, 0] == 1.0
    with pytest.raises(ConfigurationError):
        anomaly_map(z, np.zeros((1, 2, 1)), np.ones((1, 1, 1)))


def test_anomaly_map_equals_loss_per_pixel(rng):
    z, ld = rng.normal(size=(3, 4, 3, 3)), rng.normal(size=(3, 3, 3))
    mask = np.ones((3, 3, 3))
    _, per_pixel = nll_loss(z, ld, mask)
    np.testing.assert_array_equal(anomaly_map(z, ld, mask).values, per_pixel.data)


def test_image_score_examples(rng):
    mask = np.ones((1, 3, 3))
    amap = anomaly_map(np.zeros((1, 1, 3, 3)), np.full((1, 3, 3), -0.7), mask)
    assert image_score(amap, 0) == pytest.approx(0.7)
    amap.values[0, 1, 2] = 5.0
    assert image_score(amap, 0) == 5.0
    with pytest.raises(ConfigurationError):
        image_score(amap, 1)
    amap.mask[...] = 0
    with pytest.raises(DataError):
        image_score(amap, 0)


def test_image_score_matches_loop_oracle(rng):
    z, ld = rng.normal(size=(4, 3, 5, 5)), rng.normal(size=(4, 5, 5))
    mask = (rng.random((4, 5, 5)) > 0.5).astype(np.uint8)
    mask[:, 2, 2] = 1
    amap = anomaly_map(z, ld, mask)
    for v in range(4):
        best = -np.inf
        for i in range(5):
            for j in range(5):
                if mask[v, i, j]:
                    best = max(best, 0.5 * np.sum(z[v, :, i, j] ** 2) - ld[v, i, j])
        assert image_score(amap, v) == best


def test_background_never_affects_image_score(rng):
    z, ld = rng.normal(size=(1, 2, 4, 4)), np.zeros((1, 4, 4))
    mask = np.ones((1, 4, 4))
    mask[0, 0, 0] = 0
    base = image_score(anomaly_map(z, ld, mask), 0)
    z[0, :, 0, 0] = 1e6
    assert image_score(anomaly_map(z, ld, mask), 0) == base


def test_sample_score():
    assert sample_score([1, 2, 3]) == 3
    assert sample_score([4.5]) == 4.5
    with pytest.raises(DataError):
        sample_score([])


@given(st.lists(st.floats(-1e9, 1e9), min_size=1, max_size=20), st.randoms())
def test_sample_score_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert sample_score(shuffled) == sample_score(values) == max(values)


@given(arrays(np.float64, (2, 3, 3), elements=st.floats(-100, 100)),
       st.integers(0, 1), st.integers(0, 2), st.integers(0, 2), st.floats(0, 50))
def test_raising_a_pixel_never_lowers_scores(values, v, i, j, bump):
    mask = np.ones((2, 3, 3), dtype=np.uint8)
    amap = anomaly_map(np.zeros((2, 1, 3, 3)), -values, mask)
    before = [image_score(amap, k) for k in range(2)]
    amap.values[v, i, j] += bump
    after = [image_score(amap, k) for k in range(2)]
    assert after[v] >= before[v]
    assert sample_score(after) >= sample_score(before)


def test_score_instance_uses_zero_noise(rng):
    model = make_model()
    y = rng.normal(size=model.input_shape)
    mask = np.ones((3, 2, 2))
    z, ld = flow_forward(y, np.zeros((3, 4, 2, 2)), model)
    amap = score_instance(model, y, mask, "x")
    np.testing.assert_array_equal(amap.values, anomaly_map(z, ld, mask).values)
    assert amap.instance_id == "x"


# -- upsampling -------------------------------------------------------------------

def test_upsample_constant_and_identity(rng):
    np.testing.assert_allclose(upsample_map(np.full((3, 4), 2.5), (12, 16)), 2.5)
    np.testing.assert_allclose(upsample_map(np.full((3, 4), 2.5), (12, 16), sigma=4.0), 2.5)
    x = rng.normal(size=(5, 6))
    np.testing.assert_allclose(upsample_map(x, (5, 6), sigma=0), x, atol=1e-15)


def test_upsample_bilinear_hand_weights():
    # half-pixel centers: output rows sample input positions 0, .25, .75, 1 after edge clamp
    weights = np.array([[1, 0], [.75, .25], [.25, .75], [0, 1]])
    x = np.array([[1.0, 2.0], [3.0, 5.0]])
    np.testing.assert_allclose(upsample_map(x, (4, 4), sigma=0), weights @ x @ weights.T,
                               atol=1e-15)
    assert upsample_map(x, (4, 4), sigma=0)[1, 1] == pytest.approx(
        .75 * .75 * 1 + .75 * .25 * 2 + .25 * .75 * 3 + .25 * .25 * 5)


def test_upsample_rejects_non_2d():
    with pytest.raises(ConfigurationError):
        upsample_map(np.zeros((2, 2, 2)), (4, 4))


# -- AUROC ------------------------------------------------------------------------

def test_auroc_examples():
    assert auroc([0.1, 0.9], [0, 1]) == 1.0
    assert auroc([0.9, 0.1], [0, 1]) == 0.0
    assert auroc([3, 3, 3, 3], [0, 1, 0, 1]) == 0.5


def test_auroc_errors():
    with pytest.raises(MetricError):
        auroc([1, 2], [1, 1])
    with pytest.raises(MetricError):
        auroc([1, 2], [0, 2])
    with pytest.raises(ConfigurationError):
        auroc([1, 2, 3], [0, 1])


def test_auroc_matches_pairwise_oracle(rng):
    for _ in range(200):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, 8, n) / 4.0  # coarse grid forces ties
        assert auroc(scores, labels) == auroc_pairs(scores, labels)


@given(labels_and_scores)
def test_auroc_invariant_under_increasing_maps(case):
    scores, labels = case
    if labels.min() == labels.max():
        return
    base = auroc(scores, labels)
    assert auroc(np.exp(scores), labels) == base
    assert auroc(3.0 * scores - 7.0, labels) == base
    assert base == auroc_pairs(scores, labels)


@given(labels_and_scores)
def test_auroc_complement(case):
    scores, labels = case
    if labels.min() == labels.max():
        return
    assert auroc(scores, labels) + auroc(scores, 1 - labels) == pytest.approx(1.0, abs=1e-12)


# -- AUPRO ------------------------------------------------------------------------

def test_aupro_perfect_predictor(rng):
    gts = [(rng.random((8, 8)) > 0.7).astype(np.uint8) for _ in range(3)]
    assert aupro([g.astype(float) for g in gts], gts) == pytest.approx(1.0, abs=1e-12)


def test_aupro_constant_map_matches_bruteforce():
    gt = np.zeros((4, 4), dtype=np.uint8)
    gt[1:3, 1:3] = 1
    fpr, pro = pro_curve([np.full((4, 4), 0.3)], [gt])
    np.testing.assert_array_equal(fpr, [0.0, 1.0])
    np.testing.assert_array_equal(pro, [0.0, 1.0])
    # the single step passes FPR 0.3 at PRO 0.3, so the normalized area is 0.15
    assert aupro([np.full((4, 4), 0.3)], [gt]) == pytest.approx(0.15)
    assert aupro([np.full((4, 4), 0.3)], [gt]) == pytest.approx(
        aupro_bruteforce([np.full((4, 4), 0.3)], [gt]), abs=1e-12)


def test_aupro_two_regions_one_missed():
    gt = np.zeros((8, 8), dtype=np.uint8)
    gt[0:2, 0:2] = 1          # found: highest scores
    gt[6:8, 6:8] = 1          # missed: lowest scores
    m = np.random.default_rng(0).uniform(0.2, 0.8, (8, 8))
    m[0:2, 0:2] = 1.0
    m[6:8, 6:8] = 0.0
    fpr, pro = pro_curve([m], [gt])
    in_range = (fpr > 0) & (fpr <= 0.3)
    np.testing.assert_allclose(pro[in_range], 0.5)
    expected = aupro_bruteforce([m], [gt])
    assert aupro([m], [gt]) == pytest.approx(expected, abs=1e-12)
    # the found region ties at the top score, so PRO reaches 0.5 already at FPR 0
    assert aupro([m], [gt]) == pytest.approx(0.5, abs=1e-12)


def test_aupro_matches_bruteforce_on_random_cases(rng):
    for _ in range(25):
        k = int(rng.integers(1, 4))
        maps = [np.round(rng.random((8, 8)), 2) for _ in range(k)]
        gts = [(rng.random((8, 8)) > 0.75).astype(np.uint8) for _ in range(k)]
        gts[0][3, 3] = 1
        valids = [(rng.random((8, 8)) > 0.1).astype(np.uint8) for _ in range(k)]
        valids[0][3, 3] = 1
        limit = float(rng.choice([0.05, 0.3, 1.0]))
        assert aupro(maps, gts, limit, valids) == pytest.approx(
            aupro_bruteforce(maps, gts, limit, valids), abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_aupro_single_region_full_range_is_roc_area(seed):
    r = np.random.default_rng(seed)
    gt = np.zeros((6, 6), dtype=np.uint8)
    y0, x0 = r.integers(0, 4, 2)
    gt[y0:y0 + 2, x0:x0 + 3] = 1
    m = r.random((6, 6)) + gt * r.random() * 0.5
    fpr, tpr, _ = roc_curve(gt.ravel(), m.ravel(), drop_intermediate=False)
    assert aupro([m], [gt], fpr_limit=1.0) == pytest.approx(sk_auc(fpr, tpr), abs=1e-12)


def test_aupro_errors():
    with pytest.raises(MetricError):
        aupro([np.zeros((3, 3))], [np.zeros((3, 3))])
    with pytest.raises(MetricError):
        aupro([np.zeros((3, 3))], [np.ones((3, 3))])
    with pytest.raises(ConfigurationError):
        aupro([np.zeros((3, 3))], [np.ones((3, 3))], fpr_limit=0)
    with pytest.raises(ConfigurationError):
        aupro([np.zeros((3, 3))], [np.ones((3, 4))])


def test_aupro_regions_use_8_connectivity():
    gt = np.zeros((4, 4), dtype=np.uint8)
    gt[0, 0] = gt[1, 1] = 1   # diagonal neighbors: one region
    m = np.zeros((4, 4))
    m[0, 0] = 1.0
    fpr, pro = pro_curve([m], [gt])
    assert pro[1] == 0.5  # half of the single region, not one of two regions
