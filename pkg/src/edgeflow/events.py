"""Event-stream domain: voxel grids, edge-strength fields, window splitting,
the 3D-conv event encoder, and its self-supervised future-edge loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import add_conv2d, add_conv3d
from .rng import Rng


class EventError(ValueError):
    pass


@dataclass
class EventStream:
    """Time-ordered events over a half-open window on a fixed sensor extent."""

    t: np.ndarray      # seconds, float64, non-strictly increasing
    x: np.ndarray      # column, int
    y: np.ndarray      # row, int
    p: np.ndarray      # polarity, -1 or +1
    t_start: float
    t_end: float
    height: int
    width: int

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise EventError("event field lengths disagree")
        if self.t_end <= self.t_start:
            raise EventError(f"window [{self.t_start}, {self.t_end}) is empty")
        if n:
            if np.any(np.diff(self.t) < 0):
                raise EventError("events not sorted by time")
            if self.t[0] < self.t_start or self.t[-1] >= self.t_end:
                raise EventError("event time outside window")
            if (np.any(self.x < 0) or np.any(self.x >= self.width)
                    or np.any(self.y < 0) or np.any(self.y >= self.height)):
                raise EventError("event coordinate outside sensor extent")
            if np.any(np.abs(self.p) != 1):
                raise EventError("polarity must be -1 or +1")

    def __len__(self):
        return len(self.t)


def voxelize(stream: EventStream, bins: int) -> np.ndarray:
    """Count events into a (2 polarities, bins, H, W) grid.

    Bin index is floor(B*(t-t0)/(t1-t0)), clamped to B-1; polarity -1 maps
    to channel 0 and +1 to channel 1. Values are raw counts so the total
    mass equals the number of events.
    """
    if bins < 1:
        raise EventError(f"bins must be >= 1, got {bins}")
    grid = np.zeros((2, bins, stream.height, stream.width))
    if len(stream) == 0:
        return grid
    span = stream.t_end - stream.t_start
    b = np.minimum((bins * (stream.t - stream.t_start) / span).astype(np.int64), bins - 1)
    pol = (stream.p > 0).astype(np.int64)
    np.add.at(grid, (pol, b, stream.y, stream.x), 1.0)
    return grid


def edge_strength(stream: EventStream) -> np.ndarray:
    """Edge-strength field in [0, 1]: activity times temporal coherence.

    Activity is the per-pixel event count normalized by the busiest pixel;
    coherence is one minus the population variance of the pixel's
    timestamps normalized by (L/2)^2, the largest variance attainable on a
    window of length L. Pixels with fewer than two events count as fully
    coherent; a pixel with no events scores zero.
    """
    h, w = stream.height, stream.width
    if len(stream) == 0:
        return np.zeros((h, w))
    span = stream.t_end - stream.t_start
    idx = stream.y * w + stream.x
    counts = np.bincount(idx, minlength=h * w).astype(np.float64)
    trel = stream.t - stream.t_start
    s1 = np.bincount(idx, weights=trel, minlength=h * w)
    s2 = np.bincount(idx, weights=trel * trel, minlength=h * w)
    n = np.maximum(counts, 1.0)
    var = np.maximum(s2 / n - (s1 / n) ** 2, 0.0)
    sig = np.clip(var / (span / 2.0) ** 2, 0.0, 1.0)
    sig[counts < 2] = 0.0
    act = counts / counts.max() if counts.max() > 0 else counts
    return (act * (1.0 - sig)).reshape(h, w)


def pool_edge(edge: np.ndarray, scale: int) -> np.ndarray:
    """Non-overlapping average pooling of a full-res edge map to scale s (stride 2**s)."""
    stride = 2 ** scale
    h, w = edge.shape
    if h % stride or w % stride:
        raise EventError(f"extents {h}x{w} not divisible by stride {stride}")
    return edge.reshape(h // stride, stride, w // stride, stride).mean(axis=(1, 3))


def split_window(stream: EventStream) -> tuple[EventStream, EventStream]:
    """Split into past [t0, tm) and future [tm, t1) halves, tm the midpoint.

    Events exactly at the midpoint go to the future half.
    """
    tm = 0.5 * (stream.t_start + stream.t_end)
    past = stream.t < tm
    future = ~past
    mk = lambda m, a, b: EventStream(stream.t[m], stream.x[m], stream.y[m], stream.p[m],
                                     a, b, stream.height, stream.width)
    return mk(past, stream.t_start, tm), mk(future, tm, stream.t_end)


# ---------------------------------------------------------------------------
# encoder

@dataclass
class EventEncoder:
    """Three conv3d stages over the voxel grid; each stage halves H and W,
    keeps the time axis, and emits a time-averaged 2D feature map."""

    channels: tuple
    bins: int
    params: dict = field(default_factory=dict)
    frozen: bool = False

    @classmethod
    def create(cls, rng: Rng, channels=(16, 24, 32), bins: int = 5) -> "EventEncoder":
        params: dict = {}
        cin = 2
        for i, cout in enumerate(channels, start=1):
            add_conv3d(params, rng, f"event_enc.stage{i}", cout, cin, 3)
            cin = cout
        return cls(channels=tuple(channels), bins=bins, params=params)

    def freeze(self) -> "EventEncoder":
        frozen = {k: Tensor(v.data, requires_grad=False) for k, v in self.params.items()}
        return EventEncoder(self.channels, self.bins, frozen, frozen=True)


def event_encode(vox, enc: EventEncoder) -> list[Tensor]:
    """Voxel grid (2, B, H, W) -> per-scale maps [(C_s, H/2^s, W/2^s)].

    Each stage is conv3d(kernel 3, stride (1,2,2), pad 1) + relu; the time
    axis is mean-reduced after each stage to form that scale's 2D map.
    Frozen encoders emit stop-gradient outputs.
    """
    x = vox if isinstance(vox, Tensor) else Tensor(vox)
    if x.ndim != 4 or x.shape[0] != 2 or x.shape[1] != enc.bins:
        raise EventError(f"voxel grid {x.shape} does not match encoder (bins={enc.bins})")
    pyramid = []
    for i in range(1, len(enc.channels) + 1):
        w = enc.params[f"event_enc.stage{i}.w"]
        b = enc.params[f"event_enc.stage{i}.b"]
        # spatial pad schedule (sym, right-only, sym) keeps each scale's
        # feature centers within 1.5 px of the pooled-edge block centers;
        # all-symmetric padding drifts to 3.5 px by scale 3
        sp = (0, 1) if i == 2 else 1
        x = ad.relu(ad.conv3d(x, w, b, stride=(1, 2, 2), pad=(1, sp, sp)))
        f2d = ad.mean(x, axis=1)
        pyramid.append(ad.stop_gradient(f2d) if enc.frozen else f2d)
    return pyramid


def make_edge_heads(rng: Rng, channels=(16, 24, 32)) -> dict:
    """1x1-conv-to-1-channel prediction heads, one per scale."""
    params: dict = {}
    for i, c in enumerate(channels, start=1):
        add_conv2d(params, rng, f"edge_head.s{i}", 1, c, 1)
    return params


def edge_pretrain_loss(pyr_past: list[Tensor], e_future: list, heads: dict,
                       weights=(1 / 3, 1 / 3, 1 / 3)) -> Tensor:
    """Weighted l1 between head(sigmoid) predictions and future edge maps."""
    if len(pyr_past) != len(e_future):
        raise EventError(f"{len(pyr_past)} pyramid scales vs {len(e_future)} edge maps")
    total = None
    for i, (feat, target) in enumerate(zip(pyr_past, e_future), start=1):
        target = np.asarray(target)
        if feat.shape[1:] != target.shape:
            raise EventError(f"scale {i}: feature {feat.shape[1:]} vs edge map {target.shape}")
        w = heads[f"edge_head.s{i}.w"]
        b = heads[f"edge_head.s{i}.b"]
        pred = ad.sigmoid(ad.conv2d(feat, w, b))
        term = ad.mean(ad.abs_sum(pred - Tensor(target[None]), axis=0)) * weights[i - 1]
        total = term if total is None else total + term
    return total


def predict_edges(pyr_past: list[Tensor], heads: dict) -> list[np.ndarray]:
    """Per-scale predicted edge maps as raw arrays (for evaluation)."""
    out = []
    for i, feat in enumerate(pyr_past, start=1):
        w = heads[f"edge_head.s{i}.w"]
        b = heads[f"edge_head.s{i}.b"]
        out.append(ad.sigmoid(ad.conv2d(feat, w, b)).data[0])
    return out
