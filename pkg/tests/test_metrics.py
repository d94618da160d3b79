import numpy as np
import pytest

from edgeflow.metrics import (MetricsError, aggregate_report,
                              degradation_label, flow_metrics_2d,
                              flow_metrics_3d)
from edgeflow.rng import Rng


def full_mask(h=4, w=4):
    return np.ones((h, w), dtype=bool)


def test_exact_prediction():
    rng = Rng(1)
    gt = np.array(rng.uniforms(2 * 16)).reshape(2, 4, 4)
    epe, acc, fl = flow_metrics_2d(gt.copy(), gt, full_mask())
    assert (epe, acc, fl) == (0.0, 1.0, 0.0)


def test_fl_both_clauses_fire():
    gt = np.zeros((2, 1, 1))
    gt[0, 0, 0], gt[1, 0, 0] = 3.0, 4.0
    pred = np.zeros((2, 1, 1))
    epe, acc, fl = flow_metrics_2d(pred, gt, full_mask(1, 1))
    assert epe == pytest.approx(5.0)
    assert acc == 0.0
    assert fl == 1.0


def test_fl_second_clause_filters_large_motion():
    gt = np.zeros((2, 1, 1))
    gt[0, 0, 0] = 100.0
    pred = np.zeros((2, 1, 1))
    pred[0, 0, 0] = 96.0
    epe, acc, fl = flow_metrics_2d(pred, gt, full_mask(1, 1))
    assert epe == pytest.approx(4.0)
    assert fl == 0.0  # 4 > 3 but 4 < 5% of 100 -> inlier


def test_acc1px_strict():
    gt = np.zeros((2, 1, 2))
    pred = np.zeros((2, 1, 2))
    pred[0, 0, 0] = 1.0        # error exactly 1 -> not counted
    pred[0, 0, 1] = 0.999999   # just under -> counted
    _, acc, _ = flow_metrics_2d(pred, gt, full_mask(1, 2))
    assert acc == 0.5


def test_mask_selects_pixels():
    gt = np.zeros((2, 2, 2))
    pred = np.zeros((2, 2, 2))
    pred[0, 0, 0] = 10.0
    mask = np.zeros((2, 2), dtype=bool)
    mask[1, 1] = True
    epe, acc, fl = flow_metrics_2d(pred, gt, mask)
    assert epe == 0.0 and acc == 1.0


def test_empty_mask_rejected():
    with pytest.raises(MetricsError):
        flow_metrics_2d(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)),
                        np.zeros((2, 2), dtype=bool))


def test_3d_exact():
    rng = Rng(2)
    gt = np.array(rng.uniforms(12)).reshape(4, 3)
    epe, a05, a10 = flow_metrics_3d(gt.copy(), gt)
    assert (epe, a05, a10) == (0.0, 1.0, 1.0)


def test_3d_345_boundary():
    gt = np.array([[0.03, 0.0, 0.04]])
    pred = np.zeros((1, 3))
    epe, a05, a10 = flow_metrics_3d(pred, gt)
    assert epe == pytest.approx(0.05)
    assert a05 == 0.0  # strict: 0.05 not < 0.05
    assert a10 == 1.0


def test_3d_uniform_large_error():
    gt = np.zeros((5, 3))
    pred = np.full((5, 3), 0.2 / np.sqrt(3))
    _, a05, a10 = flow_metrics_3d(pred, gt)
    assert a05 == 0.0 and a10 == 0.0


def test_2d_metrics_pixel_order_invariant():
    rng = Rng(3)
    gt = np.array(rng.uniforms(2 * 9)).reshape(2, 3, 3)
    pred = np.array(rng.uniforms(2 * 9)).reshape(2, 3, 3)
    base = flow_metrics_2d(pred, gt, full_mask(3, 3))
    perm = np.array(Rng(4).permutation(9))
    gt_p = gt.reshape(2, 9)[:, perm].reshape(2, 3, 3)
    pred_p = pred.reshape(2, 9)[:, perm].reshape(2, 3, 3)
    assert flow_metrics_2d(pred_p, gt_p, full_mask(3, 3)) == pytest.approx(base)


def test_3d_metrics_row_permutation_invariant():
    rng = Rng(5)
    gt = np.array(rng.uniforms(30)).reshape(10, 3)
    pred = np.array(rng.uniforms(30)).reshape(10, 3)
    base = flow_metrics_3d(pred, gt)
    perm = np.array(Rng(6).permutation(10))
    assert flow_metrics_3d(pred[perm], gt[perm]) == pytest.approx(base)


def test_zero_flow_baseline_is_mean_magnitude():
    rng = Rng(7)
    gt = np.array(rng.uniforms(2 * 16, -3, 3)).reshape(2, 4, 4)
    epe, _, _ = flow_metrics_2d(np.zeros_like(gt), gt, full_mask())
    assert epe == pytest.approx(float(np.sqrt((gt ** 2).sum(axis=0)).mean()))


def test_aggregate_report_breakdown():
    rows = [
        {"epe2d": 1.0, "acc1px": 0.5, "fl": 0.0, "epe3d": 0.1, "acc05": 0.2,
         "acc10": 0.4, "label": "none"},
        {"epe2d": 3.0, "acc1px": 0.1, "fl": 0.2, "epe3d": 0.3, "acc05": 0.0,
         "acc10": 0.2, "label": "sparse-lidar:2"},
    ]
    rep = aggregate_report(rows)
    assert rep["epe2d"] == pytest.approx(2.0)
    assert rep["samples"] == 2
    assert set(rep["breakdown"]) == {"none", "sparse-lidar:2"}
    assert rep["breakdown"]["none"]["epe2d"] == pytest.approx(1.0)


def test_degradation_label():
    assert degradation_label({"degradations": []}) == "none"
    assert degradation_label({"degradations": [{"kind": "drift-lidar", "severity": 3}]}) \
        == "drift-lidar:3"
