"""Flow evaluation metrics: 2D endpoint error / 1px accuracy / outlier rate,
3D endpoint error with strict 5 cm and 10 cm accuracy thresholds."""

from __future__ import annotations

import numpy as np


class MetricsError(ValueError):
    pass


def flow_metrics_2d(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray):
    """(epe2d, acc1px, fl) over masked pixels.

    Per pixel e = ||pred - gt||; acc counts e < 1 strictly; an outlier needs
    both e > 3 px and e > 5% of the ground-truth magnitude.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or pred.shape[0] != 2 or mask.shape != pred.shape[1:]:
        raise MetricsError(f"shapes: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    if not mask.any():
        raise MetricsError("empty evaluation mask")
    err = np.sqrt(((pred - gt) ** 2).sum(axis=0))[mask]
    gtn = np.sqrt((gt ** 2).sum(axis=0))[mask]
    epe = float(err.mean())
    acc1 = float((err < 1.0).mean())
    fl = float(((err > 3.0) & (err > 0.05 * gtn)).mean())
    return epe, acc1, fl


def flow_metrics_3d(pred: np.ndarray, gt: np.ndarray):
    """(epe3d, acc05, acc10) in meters; thresholds are strict inequalities."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise MetricsError(f"shapes: pred {pred.shape}, gt {gt.shape}")
    if pred.shape[0] == 0:
        raise MetricsError("empty point set")
    err = np.sqrt(((pred - gt) ** 2).sum(axis=1))
    return float(err.mean()), float((err < 0.05).mean()), float((err < 0.10).mean())


_FIELDS = ("epe2d", "acc1px", "fl", "epe3d", "acc05", "acc10")


def aggregate_report(per_sample: list) -> dict:
    """Mean of per-sample metric dicts, overall and per degradation label.

    Each entry carries the six metric fields plus a "label" (degradation
    tag, "none" for clean samples).
    """
    if not per_sample:
        raise MetricsError("no samples to aggregate")

    def summarize(rows):
        out = {f: float(np.mean([r[f] for r in rows])) for f in _FIELDS}
        out["samples"] = len(rows)
        return out

    report = summarize(per_sample)
    labels = sorted({r.get("label", "none") for r in per_sample})
    report["breakdown"] = {
        lab: summarize([r for r in per_sample if r.get("label", "none") == lab])
        for lab in labels}
    return report


def degradation_label(manifest: dict) -> str:
    degs = manifest.get("degradations", [])
    if not degs:
        return "none"
    return "+".join(f"{d['kind']}:{d['severity']}" for d in degs)
