"""Reliability-aware adaptive fusion and the single-head cross-attention
block, shared by the 2D (grid) and 3D (point) branches.

Global reliability scores image and LiDAR against the event signal from
two-frame temporal differences and spatial structure; local reliability is
a per-location softmax over the three modalities. The 3D branch computes
its spatial scores on lifted grids and samples them back at the points.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import add_conv2d, add_linear
from .rng import Rng


class FusionError(ValueError):
    pass


def make_fusion_block(rng: Rng, prefix: str, c: int, is_2d: bool) -> dict:
    """Parameters for one (branch, scale) fusion + attention block."""
    params: dict = {}
    add_conv2d(params, rng, f"{prefix}.rel_t_conv", c, 2 * c, 3)
    add_conv2d(params, rng, f"{prefix}.rel_t_lin", c, c, 1)
    add_conv2d(params, rng, f"{prefix}.rel_s_conv", c, 4 * c, 3)
    add_conv2d(params, rng, f"{prefix}.loc_group", 3 * c, c, 1, groups=3)
    add_conv2d(params, rng, f"{prefix}.loc_mix", 3, 9 * c, 1)
    if is_2d:
        for nm in ("attn_q", "attn_k", "attn_v"):
            add_conv2d(params, rng, f"{prefix}.{nm}", c, c, 1)
    else:
        for nm in ("attn_q", "attn_k", "attn_v"):
            add_linear(params, rng, f"{prefix}.{nm}", c, c)
    add_linear(params, rng, f"{prefix}.attn_mlp1", c, 2 * c)
    add_linear(params, rng, f"{prefix}.attn_mlp2", 2 * c, c)
    return params


def reliability_global(z_img, z_pc, z_ev, params: dict, prefix: str) -> Tensor:
    """Softmax reliability (omega_I, omega_L) from two-frame grids.

    Each argument is a dict {0: grid_t0, 1: grid_t1} of (C, H, W) Tensors.
    Per modality: a shared 3x3 conv runs on [Z_m(t), Z_E(t)] per frame, the
    frame difference passes a 1x1 projection and sigmoid (temporal cue T);
    a dilated 3x3 conv on all four maps feeds a spatial-gradient magnitude
    (structural cue S). The logit is the global mean of T*S.
    """
    if 1 not in z_img or 1 not in z_pc or 1 not in z_ev:
        raise FusionError("reliability_global needs both frames for every modality")
    wt = params[f"{prefix}.rel_t_conv.w"]
    bt = params[f"{prefix}.rel_t_conv.b"]
    wl = params[f"{prefix}.rel_t_lin.w"]
    bl = params[f"{prefix}.rel_t_lin.b"]
    ws = params[f"{prefix}.rel_s_conv.w"]
    bs = params[f"{prefix}.rel_s_conv.b"]

    logits = []
    for zm in (z_img, z_pc):
        h0 = ad.conv2d(ad.concat([zm[0], z_ev[0]], axis=0), wt, bt, pad=1)
        h1 = ad.conv2d(ad.concat([zm[1], z_ev[1]], axis=0), wt, bt, pad=1)
        temporal = ad.sigmoid(ad.conv2d(h1 - h0, wl, bl))
        stacked = ad.concat([zm[0], z_ev[0], zm[1], z_ev[1]], axis=0)
        edges = ad.conv2d(stacked, ws, bs, pad=2, dilation=2)
        structural = ad.l2norm(ad.spatial_gradient(edges), axis=(0, 1))
        c, h, w = temporal.shape
        logit = ad.mean(temporal * ad.reshape(structural, (1, h, w)))
        logits.append(ad.reshape(logit, (1,)))
    return ad.softmax(ad.concat(logits, axis=0), axis=0)


def reliability_local(z_img: Tensor, z_pc: Tensor, z_ev: Tensor,
                      params: dict, prefix: str) -> Tensor:
    """Per-location modality weights (3, H, W), softmax-normalized.

    The stacked tri-modal volume feeds three parallel views: a Laplacian
    high-pass, a 3x3 stride-1 average pool, and a grouped 1x1 conv (one
    group per modality); their concatenation collapses to 3 logit channels.
    """
    stacked = ad.concat([z_img, z_pc, z_ev], axis=0)
    if stacked.shape[0] % 3:
        raise FusionError(f"channel count {stacked.shape[0]} not divisible into 3 groups")
    high = ad.laplacian2d(stacked)
    pooled = ad.avg_pool2d(stacked, 3, 1, 1)
    grouped = ad.conv2d(stacked, params[f"{prefix}.loc_group.w"],
                        params[f"{prefix}.loc_group.b"], groups=3)
    mixed = ad.conv2d(ad.concat([high, pooled, grouped], axis=0),
                      params[f"{prefix}.loc_mix.w"], params[f"{prefix}.loc_mix.b"])
    return ad.softmax(mixed, axis=0)


def with_event_weight(omega: Tensor) -> Tensor:
    """Extend the (omega_I, omega_L) softmax pair with the fixed event
    weight of 1, giving the 3-vector adaptive_fuse consumes."""
    return ad.concat([omega, Tensor(np.ones(1))], axis=0)


def adaptive_fuse(z_list, omega: Tensor, attn: Tensor) -> Tensor:
    """Normalized (omega_m * A_m)-weighted sum of the three embeddings.

    z_list is [Z_I, Z_L, Z_E] as (C, H, W) grids or (N, C) point rows;
    omega is the per-modality (3,) global score; attn carries the local
    weights, (3, H, W) for grids and (N, 3) for points. The weights are
    renormalized per location, so an all-equal omega with uniform attn
    reduces to the plain mean.
    """
    if omega.shape != (3,):
        raise FusionError(f"omega must be a 3-vector, got {omega.shape}")
    grid = z_list[0].ndim == 3
    parts = []
    for m in range(3):
        w_m = ad.reshape(omega[m:m + 1], (1, 1, 1) if grid else (1, 1))
        a_m = attn[m:m + 1] if grid else attn[:, m:m + 1]
        parts.append(a_m * w_m)
    denom = parts[0] + parts[1] + parts[2]
    if float(np.min(denom.data)) < 1e-12:
        raise FusionError("fusion weight denominator below 1e-12")
    out = None
    for m in range(3):
        term = (parts[m] / denom) * z_list[m]
        out = term if out is None else out + term
    return out


def cross_attention(f_fused: Tensor, aux: list, params: dict, prefix: str) -> Tensor:
    """Single-head cross-attention with an MLP head and residual connection.

    Queries come from the fused features, keys/values from the auxiliary
    embeddings concatenated along the token axis; scores scale by
    1/sqrt(d) with d the channel width. 2D uses 1x1 convs, 3D linear maps.
    """
    grid = f_fused.ndim == 3
    if grid:
        c, h, w = f_fused.shape
        tokens = lambda t: ad.permute(ad.reshape(t, (t.shape[0], t.shape[1] * t.shape[2])), (1, 0))
        q = tokens(ad.conv2d(f_fused, params[f"{prefix}.attn_q.w"], params[f"{prefix}.attn_q.b"]))
        k = ad.concat([tokens(ad.conv2d(a, params[f"{prefix}.attn_k.w"],
                                        params[f"{prefix}.attn_k.b"])) for a in aux], axis=0)
        v = ad.concat([tokens(ad.conv2d(a, params[f"{prefix}.attn_v.w"],
                                        params[f"{prefix}.attn_v.b"])) for a in aux], axis=0)
        d = c
    else:
        d = f_fused.shape[1]
        q = ad.linear(f_fused, params[f"{prefix}.attn_q.w"], params[f"{prefix}.attn_q.b"])
        cat = ad.concat(aux, axis=0)
        k = ad.linear(cat, params[f"{prefix}.attn_k.w"], params[f"{prefix}.attn_k.b"])
        v = ad.linear(cat, params[f"{prefix}.attn_v.w"], params[f"{prefix}.attn_v.b"])
    if q.shape[1] != k.shape[1]:
        raise FusionError(f"query width {q.shape[1]} vs key width {k.shape[1]}")
    scores = ad.matmul(q, ad.permute(k, (1, 0))) * (1.0 / math.sqrt(d))
    attended = ad.matmul(ad.softmax(scores, axis=1), v)
    hidden = ad.relu(ad.linear(attended, params[f"{prefix}.attn_mlp1.w"],
                               params[f"{prefix}.attn_mlp1.b"]))
    out = ad.linear(hidden, params[f"{prefix}.attn_mlp2.w"], params[f"{prefix}.attn_mlp2.b"])
    if grid:
        out = ad.reshape(ad.permute(out, (1, 0)), (c, h, w))
    return out + f_fused
