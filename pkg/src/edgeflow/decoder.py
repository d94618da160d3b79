"""Coarse-to-fine flow decoders for both branches and the task objective.

The 2D decoder starts at the coarsest pyramid level and refines residually:
each level upsamples the coarser flow (values doubled), warps the frame-2
embedding by it, and predicts a residual from [frame-1 features, warped
frame-2 features, incoming flow]. The 3D decoder works on a farthest-point
subsampled point pyramid and propagates flow by 3-NN inverse-distance
interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import add_conv2d, add_linear
from .rng import Rng


class DecoderError(ValueError):
    pass


# ---------------------------------------------------------------------------
# constant geometry helpers

def farthest_point_indices(positions: np.ndarray, count: int, rng: Rng) -> np.ndarray:
    """Greedy max-min subsample of (N, 3) rows; the seed picks the start point.

    Ties in the max-min distance resolve to the lowest index, so the result
    is a pure function of (positions, count, seed).
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    if not 1 <= count <= n:
        raise DecoderError(f"cannot pick {count} of {n} points")
    chosen = [rng.randint(n)]
    dist = ((positions - positions[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, ((positions - positions[nxt]) ** 2).sum(axis=1))
    return np.array(sorted(chosen), dtype=np.int64)


def knn_interp_matrix(queries: np.ndarray, support: np.ndarray, k: int = 3) -> np.ndarray:
    """(Nq, Ns) inverse-distance weights over each query's k nearest support
    points; ties break toward the lower support index. Rows sum to 1."""
    queries = np.asarray(queries, dtype=np.float64)
    support = np.asarray(support, dtype=np.float64)
    nq, ns = queries.shape[0], support.shape[0]
    k = min(k, ns)
    d = np.sqrt(((queries[:, None, :] - support[None, :, :]) ** 2).sum(axis=2))
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    dk = np.take_along_axis(d, order, axis=1)
    wk = 1.0 / np.maximum(dk, 1e-12)
    wk /= wk.sum(axis=1, keepdims=True)
    mat = np.zeros((nq, ns))
    rows = np.repeat(np.arange(nq), k)
    np.add.at(mat, (rows, order.ravel()), wk.ravel())
    return mat


@dataclass
class PointPyramid:
    """Nested FPS index sets per level (level 1 keeps all points) plus the
    constant interpolation matrices between consecutive levels."""

    indices: list        # [I1, I2, I3], I1 = arange(N)
    prop: dict           # level -> (|I_l| x |I_{l+1}|) coarse-to-fine weights

    @classmethod
    def build(cls, positions: np.ndarray, seed: int, levels: int = 3) -> "PointPyramid":
        n = positions.shape[0]
        if n // 2 ** (levels - 1) < 4:
            raise DecoderError(f"{n} points leave fewer than 4 at the coarsest level")
        rng = Rng(seed)
        indices = [np.arange(n, dtype=np.int64)]
        for lvl in range(1, levels):
            keep = n // 2 ** lvl
            sub = farthest_point_indices(positions[indices[-1]], keep, rng)
            indices.append(indices[-1][sub])
        prop = {}
        for lvl in range(levels - 1, 0, -1):
            prop[lvl] = knn_interp_matrix(positions[indices[lvl - 1]],
                                          positions[indices[lvl]])
        return cls(indices=indices, prop=prop)


# ---------------------------------------------------------------------------
# decoders

def make_flow_heads(rng: Rng, channels=(16, 24, 32), branches=("2d", "3d"),
                    hidden_mult: int = 2) -> dict:
    """Per-level refinement heads; the hidden width is hidden_mult * C
    (the two-conv structure is fixed, the width is free capacity)."""
    params: dict = {}
    if "2d" in branches:
        for i, c in enumerate(channels, start=1):
            add_conv2d(params, rng, f"dec2d.l{i}.h1", hidden_mult * c, 2 * c + 2, 3)
            add_conv2d(params, rng, f"dec2d.l{i}.h2", 2, hidden_mult * c, 3)
    if "3d" in branches:
        for i, c in enumerate(channels, start=1):
            add_linear(params, rng, f"dec3d.l{i}.h1", 2 * c + 3, hidden_mult * c)
            add_linear(params, rng, f"dec3d.l{i}.h2", hidden_mult * c, 3)
    return params


_BASE_COORDS: dict = {}


def _pixel_centers(h: int, w: int) -> np.ndarray:
    key = (h, w)
    if key not in _BASE_COORDS:
        cols, rows = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
        _BASE_COORDS[key] = np.stack([cols.ravel(), rows.ravel()], axis=1)
    return _BASE_COORDS[key]


def warp_by_flow(feat: Tensor, flow: Tensor) -> Tensor:
    """Bilinearly pull (C, H, W) features along a (2, H, W) flow field.

    Zero flow reproduces the input exactly (samples land on pixel centers).
    """
    c, h, w = feat.shape
    base = Tensor(_pixel_centers(h, w))
    offsets = ad.permute(ad.reshape(flow, (2, h * w)), (1, 0))
    rows = ad.bilinear_sample(feat, base + offsets)
    return ad.reshape(ad.permute(rows, (1, 0)), (c, h, w))


def decode_flow2d(fout_t0: list, fout_t1: list, params: dict) -> list[Tensor]:
    """Per-level (2, H_l, W_l) flow pyramid, finest first.

    Levels run coarse-to-fine; the coarsest starts from zero flow (its
    "warp" is the identity), finer levels double and upsample the estimate
    before refining.
    """
    if len(fout_t0) != len(fout_t1):
        raise DecoderError("branch pyramids disagree across frames")
    levels = len(fout_t0)
    flows: list = [None] * levels
    flow = None
    for idx in range(levels - 1, -1, -1):
        f0, f1 = fout_t0[idx], fout_t1[idx]
        if f0.shape != f1.shape:
            raise DecoderError(f"level {idx + 1} extents differ: {f0.shape} vs {f1.shape}")
        c, h, w = f0.shape
        if flow is None:
            init = Tensor(np.zeros((2, h, w)))
        else:
            init = ad.upsample2x_bilinear(flow) * 2.0
            if init.shape[1:] != (h, w):
                raise DecoderError(f"level {idx + 1} extent {(h, w)} vs upsampled {init.shape[1:]}")
        warped = warp_by_flow(f1, init)
        stack = ad.concat([f0, warped, init], axis=0)
        hidden = ad.relu(ad.conv2d(stack, params[f"dec2d.l{idx + 1}.h1.w"],
                                   params[f"dec2d.l{idx + 1}.h1.b"], pad=1))
        res = ad.conv2d(hidden, params[f"dec2d.l{idx + 1}.h2.w"],
                        params[f"dec2d.l{idx + 1}.h2.b"], pad=1)
        flow = init + res
        flows[idx] = flow
    return flows


def full_res_flow(flow_pyramid: list) -> Tensor:
    """Finest-level flow upsampled to sensor resolution (values doubled)."""
    return ad.upsample2x_bilinear(flow_pyramid[0]) * 2.0


def decode_flow3d(fout_t0: list, warped_t1: list, pyr: PointPyramid,
                  params: dict) -> list[Tensor]:
    """Per-level (N_l, 3) scene-flow pyramid, finest first.

    fout_t0 holds frame-1 per-point features (all N rows) per level;
    warped_t1 the frame-2 features already interpolated onto the frame-1
    points. Coarser flow propagates by 3-NN inverse-distance weights.
    """
    levels = len(fout_t0)
    flows: list = [None] * levels
    flow = None
    for idx in range(levels - 1, -1, -1):
        sel = pyr.indices[idx]
        f0 = ad.take_rows(fout_t0[idx], sel)
        f1 = ad.take_rows(warped_t1[idx], sel)
        if flow is None:
            init = Tensor(np.zeros((sel.size, 3)))
        else:
            init = ad.matmul(Tensor(pyr.prop[idx + 1]), flow)
        stack = ad.concat([f0, f1, init], axis=1)
        hidden = ad.relu(ad.linear(stack, params[f"dec3d.l{idx + 1}.h1.w"],
                                   params[f"dec3d.l{idx + 1}.h1.b"]))
        res = ad.linear(hidden, params[f"dec3d.l{idx + 1}.h2.w"],
                        params[f"dec3d.l{idx + 1}.h2.b"])
        flow = init + res
        flows[idx] = flow
    return flows


# ---------------------------------------------------------------------------
# objective

@dataclass(frozen=True)
class LossWeights:
    align: float = 0.1
    contra: float = 0.05
    task_2d: float = 1.0
    task_3d: float = 1.0
    levels: tuple = (0.32, 0.08, 0.02)  # fine -> coarse

    def __post_init__(self):
        if min(self.align, self.contra, self.task_2d, self.task_3d, *self.levels) < 0:
            raise DecoderError("loss weights must be non-negative")


def downsample_gt_flow2d(gt: np.ndarray, level: int) -> np.ndarray:
    """Average-pool dense (2, H, W) ground truth to level l, scaling values
    by 1/2^l to match the level's pixel units."""
    stride = 2 ** level
    _, h, w = gt.shape
    if h % stride or w % stride:
        raise DecoderError(f"extents {h}x{w} not divisible by {stride}")
    pooled = gt.reshape(2, h // stride, stride, w // stride, stride).mean(axis=(2, 4))
    return pooled / stride


def task_loss(pred2d: list | None, gt2d: np.ndarray | None,
              pred3d: list | None, gt3d: np.ndarray | None,
              pyr: PointPyramid | None, weights: LossWeights) -> Tensor:
    """Per-level mean endpoint norms, level-weighted and branch-weighted."""
    total = None

    def accumulate(term):
        nonlocal total
        total = term if total is None else total + term

    if pred2d is not None:
        for idx, pred in enumerate(pred2d):
            tgt = downsample_gt_flow2d(np.asarray(gt2d), idx + 1)
            if pred.shape != tgt.shape:
                raise DecoderError(f"2D level {idx + 1}: pred {pred.shape} vs gt {tgt.shape}")
            per_px = ad.l2norm(pred - Tensor(tgt), axis=0)
            accumulate(ad.mean(per_px) * (weights.levels[idx] * weights.task_2d))
    if pred3d is not None:
        gt3d = np.asarray(gt3d)
        for idx, pred in enumerate(pred3d):
            tgt = gt3d[pyr.indices[idx]]
            if pred.shape != tgt.shape:
                raise DecoderError(f"3D level {idx + 1}: pred {pred.shape} vs gt {tgt.shape}")
            per_pt = ad.l2norm(pred - Tensor(tgt), axis=1)
            accumulate(ad.mean(per_pt) * (weights.levels[idx] * weights.task_3d))
    if total is None:
        raise DecoderError("task_loss needs at least one branch")
    return total


def total_loss(task: Tensor, align: Tensor | None, contra: Tensor | None,
               weights: LossWeights) -> Tensor:
    out = task
    if align is not None:
        out = out + weights.align * align
    if contra is not None:
        out = out + weights.contra * contra
    return out
