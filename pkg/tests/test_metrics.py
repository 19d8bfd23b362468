import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from conddgcn.metrics import (AUC_THRESHOLDS, auc, evaluate, mpjpe, p_mpjpe, pck, pck_curve, procrustes_align,
                              procrustes_transform)


def loop_mpjpe(pred, gt):
    flat_p, flat_g = pred.reshape(-1, 3), gt.reshape(-1, 3)
    return sum(np.sqrt(((a - b) ** 2).sum()) for a, b in zip(flat_p, flat_g)) / len(flat_p)


def random_similarity(rng):
    return rng.uniform(0.5, 2.0), Rotation.random(random_state=rng.integers(1 << 30)).as_matrix(), rng.normal(0, 500, 3)


def test_mpjpe_examples(rng):
    gt = rng.normal(0, 100, size=(4, 17, 3))
    assert mpjpe(gt, gt) == 0.0
    assert mpjpe(gt + np.array([0, 0, 10.0]), gt) == pytest.approx(10.0, abs=1e-12)
    assert mpjpe(np.zeros((1, 1, 3)), np.array([[[3.0, 4.0, 0.0]]])) == 5.0
    pred = rng.normal(0, 100, size=(4, 17, 3))
    assert mpjpe(pred, gt) == pytest.approx(loop_mpjpe(pred, gt), rel=1e-13)
    assert mpjpe(pred, gt) == mpjpe(gt, pred)


def test_procrustes_exact_recovery(rng):
    for _ in range(20):
        gt = rng.normal(0, 300, size=(17, 3))
        s, R, t = random_similarity(rng)
        pred = s * gt @ R.T + t
        assert np.max(np.abs(procrustes_align(pred, gt) - gt)) < 1e-9


def test_procrustes_identity(rng):
    gt = rng.normal(0, 300, size=(17, 3))
    s, R, t, degenerate = procrustes_transform(gt, gt)
    assert not degenerate
    assert s == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(t, 0, atol=1e-9)


def test_procrustes_no_reflection(rng):
    gt = rng.normal(0, 300, size=(17, 3))
    mirrored = gt * np.array([-1.0, 1.0, 1.0])
    _, R, _, _ = procrustes_transform(mirrored, gt)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_procrustes_degenerate_is_translation_only(rng):
    gt = rng.normal(0, 300, size=(17, 3))
    pred = np.tile([5.0, 6.0, 7.0], (17, 1))
    s, R, t, degenerate = procrustes_transform(pred, gt)
    assert degenerate and s == 1.0 and np.array_equal(R, np.eye(3))
    np.testing.assert_allclose(procrustes_align(pred, gt), np.tile(gt.mean(0), (17, 1)), atol=1e-9)


def test_p_mpjpe_invariant_under_similarity(rng):
    for _ in range(20):
        gt = rng.normal(0, 300, size=(3, 17, 3))
        pred = gt + rng.normal(0, 40, size=gt.shape)
        base = p_mpjpe(pred, gt)
        s, R, t = random_similarity(rng)
        assert abs(p_mpjpe(s * pred @ R.T + t, gt) - base) <= 1e-9
        assert base <= mpjpe(pred, gt)


def test_p_mpjpe_zero_for_transformed_gt(rng):
    gt = rng.normal(0, 300, size=(5, 17, 3))
    s, R, t = random_similarity(rng)
    assert p_mpjpe(s * gt @ R.T + t, gt) < 1e-9
    assert p_mpjpe(gt, gt) < 1e-9


def offsets(dist, n=17):
    return np.tile([0.0, 0.0, dist], (1, n, 1))


def test_pck_examples():
    gt = np.zeros((1, 4, 3))
    assert pck(gt, gt) == 100.0
    assert pck(offsets(200.0, 4), gt) == 0.0
    half = np.concatenate([offsets(100.0, 2), offsets(200.0, 2)], axis=1)
    assert pck(half, gt) == 50.0
    assert pck(offsets(150.0, 4), gt) == 0.0  # strictly below the threshold


def test_auc_examples():
    gt = np.zeros((1, 17, 3))
    assert auc(gt, gt) == 100.0
    assert auc(offsets(151.0), gt) == 0.0
    # thresholds 80..150 lie strictly above 75: 15 of 30
    assert len(AUC_THRESHOLDS) == 30 and sum(AUC_THRESHOLDS > 75) == 15
    assert auc(offsets(75.0), gt) == 50.0


def test_pck_monotone_and_auc_below_pck(rng):
    for _ in range(20):
        gt = rng.normal(0, 300, size=(4, 17, 3))
        pred = gt + rng.normal(0, rng.uniform(10, 150), size=gt.shape)
        curve = pck_curve(pred, gt)
        assert np.all(np.diff(curve) >= 0)
        assert auc(pred, gt) <= pck(pred, gt)


def test_evaluate_report(rng):
    gt = rng.normal(0, 300, size=(6, 17, 3))
    pred = gt + rng.normal(0, 30, size=gt.shape)
    rep = evaluate(pred, gt, actions=["a", "a", "a", "b", "b", "b"])
    assert 0 <= rep.auc_percent <= rep.pck_percent <= 100
    assert 0 <= rep.pmpjpe_mm <= rep.mpjpe_mm
    assert set(rep.per_action) == {"a", "b"}
    kv = dict(line.split("=") for line in rep.to_kv().splitlines())
    assert float(kv["mpjpe_mm"]) == rep.mpjpe_mm
    assert "MPJPE" in rep.to_text()
    # root-relative: a global shift of the prediction costs nothing
    assert evaluate(gt + 50.0, gt).mpjpe_mm == pytest.approx(0.0, abs=1e-12)
    assert evaluate(gt + 50.0, gt, root=None).mpjpe_mm == pytest.approx(50.0 * np.sqrt(3), rel=1e-12)


def test_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        mpjpe(np.zeros((2, 17, 3)), np.zeros((2, 16, 3)))
