"""Full pipeline assembly: config, parameter construction per variant,
per-sample preprocessing caches, the training/pretraining loops, and
evaluation. Everything is driven by one seed and is bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .alignment import AlignConfig, align_loss, pairwise_l1
from .autodiff import Tensor
from .contrast import (contra_loss, make_contrast_heads, motion_vectors,
                       pull_loss, push_loss, variational_encode)
from .decoder import (LossWeights, PointPyramid, decode_flow2d, decode_flow3d,
                      downsample_gt_flow2d, full_res_flow, knn_interp_matrix,
                      make_flow_heads, task_loss, total_loss)
from .encoders import (FrameGeometry, image_encode, lidar_encode,
                       lift_points_to_grid, make_image_encoder,
                       make_lidar_encoder, make_projection_heads,
                       project_to_space, sample_grid_at_points,
                       sample_map_at_points)
from .events import (EventEncoder, edge_pretrain_loss, event_encode,
                     make_edge_heads, pool_edge, split_window, voxelize,
                     edge_strength)
from .fusion import (adaptive_fuse, cross_attention, make_fusion_block,
                     reliability_global, reliability_local, with_event_weight)
from .metrics import (aggregate_report, degradation_label, flow_metrics_2d,
                      flow_metrics_3d)
from .optim import AdamHyper, OptimState, adam_step, lr_at_epoch
from .params import add_conv2d, add_linear, trainable
from .rng import Rng
from .synth import SampleData

VARIANTS = ("full", "no-ees", "no-reg", "no-edge", "indep", "joint", "joint-ccl")
_VARIANT_ID = {v: float(i) for i, v in enumerate(VARIANTS)}


class NumericError(RuntimeError):
    """Non-finite loss; the message names the offending component."""


@dataclass(frozen=True)
class ModelConfig:
    height: int = 32
    width: int = 32
    channels: tuple = (16, 24, 32)
    lidar_width: int = 32
    bins: int = 5
    density_radius: float = 0.5
    align_2d: float = 1.0
    align_3d: float = 1.0
    w_align: float = 0.1
    w_contra: float = 0.05
    w_task2d: float = 1.0
    w_task3d: float = 1.0
    level_weights: tuple = (0.32, 0.08, 0.02)
    edge_scale_weights: tuple = (1 / 3, 1 / 3, 1 / 3)
    gamma: float = 0.5
    push_sign: float = 1.0
    dec_hidden_mult: int = 2

    @property
    def scales(self):
        return tuple(range(1, len(self.channels) + 1))

    def loss_weights(self) -> LossWeights:
        return LossWeights(align=self.w_align, contra=self.w_contra,
                           task_2d=self.w_task2d, task_3d=self.w_task3d,
                           levels=self.level_weights)


def micro_config() -> ModelConfig:
    """Tiny instance for gradient checks: 8x8 frames, narrow channels."""
    return ModelConfig(height=8, width=8, channels=(2, 3, 4), lidar_width=6,
                       dec_hidden_mult=1)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    weight_decay: float = 1e-6
    batch_size: int = 8
    epochs: int = 30
    milestones: tuple = ()
    seed: int = 0

    def hyper(self, epoch: int) -> AdamHyper:
        return AdamHyper(lr=lr_at_epoch(self.lr, epoch, self.milestones),
                         beta1=self.beta1, beta2=self.beta2,
                         eps_adam=self.eps_adam, weight_decay=self.weight_decay)


# ---------------------------------------------------------------------------
# parameters

def build_params(cfg: ModelConfig, variant: str, rng: Rng,
                 branches=("2d", "3d")) -> dict:
    """All trainable parameters for one model, in fixed registration order."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant '{variant}'")
    params: dict = {}
    params.update(make_image_encoder(rng, cfg.channels))
    params.update(make_lidar_encoder(rng, cfg.lidar_width))
    if variant == "no-ees":
        for i, c in enumerate(cfg.channels, start=1):
            add_conv2d(params, rng, f"adapt.img.s{i}", c, c, 1)
        for i, c in enumerate(cfg.channels, start=1):
            add_linear(params, rng, f"adapt.pc.s{i}", cfg.lidar_width, c)
        for i, c in enumerate(cfg.channels, start=1):
            add_conv2d(params, rng, f"adapt.ev.s{i}", c, c, 1)
    else:
        params.update(make_projection_heads(rng, cfg.channels, cfg.lidar_width))
    if "2d" in branches:
        for i, c in enumerate(cfg.channels, start=1):
            params.update(make_fusion_block(rng, f"fuse2d.s{i}", c, is_2d=True))
    if "3d" in branches:
        for i, c in enumerate(cfg.channels, start=1):
            params.update(make_fusion_block(rng, f"fuse3d.s{i}", c, is_2d=False))
    params.update(make_flow_heads(rng, cfg.channels, branches, cfg.dec_hidden_mult))
    if uses_contrast(variant, branches):
        params.update(make_contrast_heads(rng, cfg.channels[0]))
    return params


def uses_contrast(variant: str, branches) -> bool:
    # only the task-supervision ablations drop the contrast coupling
    return variant not in ("indep", "joint") and "2d" in branches and "3d" in branches


def uses_alignment(variant: str) -> bool:
    return variant not in ("no-ees", "no-reg")


# ---------------------------------------------------------------------------
# per-sample preprocessing

@dataclass
class PreparedSample:
    sample: SampleData
    geoms: dict                      # frame -> FrameGeometry
    edges2d: dict                    # frame -> [np (H_s, W_s)] per scale
    edges3d: dict                    # frame -> [np (N,)] per scale
    event_feats: dict                # frame -> [np (C_s, H_s, W_s)]
    event_rows: dict                 # frame -> [np (N, C_s)]
    event_lift: dict                 # frame -> [np (C_s, H_s, W_s)]
    pyr: PointPyramid
    warp21: np.ndarray               # (N0, N1) frame-2 -> frame-1 weights
    gt2d_levels: list
    vox: dict                        # frame -> np voxel grid (pretraining reuse)


def prepare_sample(sample: SampleData, cfg: ModelConfig,
                   enc: EventEncoder) -> PreparedSample:
    """Cache everything that does not depend on trainable parameters."""
    cam = sample.cam
    geoms = {0: FrameGeometry(sample.points0, cam, cfg.scales),
             1: FrameGeometry(sample.points1, cam, cfg.scales)}
    past, future = split_window(sample.events)
    halves = {0: past, 1: future}
    vox = {t: voxelize(halves[t], cfg.bins) for t in (0, 1)}
    edges2d = {}
    edges3d = {}
    for t in (0, 1):
        full = edge_strength(halves[t])
        edges2d[t] = [pool_edge(full, s) for s in cfg.scales]
        edges3d[t] = [sample_map_at_points(edges2d[t][i], geoms[t], s)
                      for i, s in enumerate(cfg.scales)]
    event_feats = {}
    event_rows = {}
    event_lift = {}
    for t in (0, 1):
        pyramid = event_encode(vox[t], enc)
        event_feats[t] = [f.data for f in pyramid]
        event_rows[t] = [sample_grid_at_points(Tensor(f.data), geoms[t], s).data
                         for f, s in zip(pyramid, cfg.scales)]
        event_lift[t] = [lift_points_to_grid(Tensor(rows), geoms[t], s).data
                         for rows, s in zip(event_rows[t], cfg.scales)]
    pyr = PointPyramid.build(sample.points0, seed=sample.manifest.get("seed", 0))
    warp21 = knn_interp_matrix(sample.points0, sample.points1)
    gt_levels = [downsample_gt_flow2d(sample.gt2d, s) for s in cfg.scales]
    return PreparedSample(sample=sample, geoms=geoms, edges2d=edges2d,
                          edges3d=edges3d, event_feats=event_feats,
                          event_rows=event_rows, event_lift=event_lift,
                          pyr=pyr, warp21=warp21, gt2d_levels=gt_levels, vox=vox)


# ---------------------------------------------------------------------------
# forward

@dataclass
class ForwardOut:
    flow2d_levels: list | None = None
    flow2d_full: Tensor | None = None
    flow3d_levels: list | None = None
    flow3d: Tensor | None = None
    task: Tensor | None = None
    align: Tensor | None = None
    contra: Tensor | None = None
    total: Tensor | None = None
    push_targets: dict | None = None   # detached 3D latents, per frame


def forward(params: dict, cfg: ModelConfig, variant: str, prep: PreparedSample,
            branches=("2d", "3d"), latent_rng: Rng | None = None,
            with_loss: bool = True,
            push_target_override: dict | None = None) -> ForwardOut:
    """One full pass. ``push_target_override`` substitutes constant 3D
    latents for the detached push target, which makes the objective a
    plain differentiable function of the parameters (used by gradient
    checks; training recomputes the detached target every step)."""
    scales = cfg.scales
    geoms = prep.geoms
    sample = prep.sample

    img_pyr = {t: image_encode(img, params, cfg.channels)
               for t, img in ((0, sample.img0), (1, sample.img1))}
    pc_feat = {0: lidar_encode(sample.points0, params, cfg.density_radius),
               1: lidar_encode(sample.points1, params, cfg.density_radius)}

    # embeddings in the shared space, per (frame, scale)
    z_img, z_pc, z_ev = {}, {}, {}
    for t in (0, 1):
        z_img[t], z_pc[t], z_ev[t] = [], [], []
        for i, s in enumerate(scales):
            if variant == "no-ees":
                zi = ad.conv2d(img_pyr[t][i], params[f"adapt.img.s{s}.w"],
                               params[f"adapt.img.s{s}.b"])
                zl = ad.linear(pc_feat[t], params[f"adapt.pc.s{s}.w"],
                               params[f"adapt.pc.s{s}.b"])
                ze = ad.conv2d(Tensor(prep.event_feats[t][i]),
                               params[f"adapt.ev.s{s}.w"], params[f"adapt.ev.s{s}.b"])
            else:
                zi, zl = project_to_space(img_pyr[t][i], pc_feat[t], s, params)
                ze = Tensor(prep.event_feats[t][i])
            z_img[t].append(zi)
            z_pc[t].append(zl)
            z_ev[t].append(ze)

    # shared lift/sample products, reused by alignment and fusion
    pc_grid = {t: [lift_points_to_grid(z_pc[t][i], geoms[t], s)
                   for i, s in enumerate(scales)] for t in (0, 1)}
    img_rows = {t: [sample_grid_at_points(z_img[t][i], geoms[t], s)
                    for i, s in enumerate(scales)] for t in (0, 1)}

    def ev_rows(t, i):
        if z_ev[t][i].requires_grad:
            return sample_grid_at_points(z_ev[t][i], geoms[t], scales[i])
        return Tensor(prep.event_rows[t][i])

    def ev_lift(t, i, rows):
        if rows.requires_grad:
            return lift_points_to_grid(rows, geoms[t], scales[i])
        return Tensor(prep.event_lift[t][i])

    ev_row = {t: [ev_rows(t, i) for i in range(len(scales))] for t in (0, 1)}

    out = ForwardOut()

    if with_loss and uses_alignment(variant):
        acfg = AlignConfig(cfg.align_2d, cfg.align_3d)
        frame_terms = []
        for t in (0, 1):
            d2d, d3d, e2d, e3d = [], [], [], []
            if "2d" in branches:
                for i in range(len(scales)):
                    d2d.append(pairwise_l1(z_img[t][i], z_ev[t][i], pc_grid[t][i]))
                    e2d.append(prep.edges2d[t][i])
            if "3d" in branches:
                for i in range(len(scales)):
                    d3d.append(pairwise_l1(img_rows[t][i], ev_row[t][i], z_pc[t][i]))
                    e3d.append(prep.edges3d[t][i])
            frame_terms.append(align_loss(d2d, d3d, e2d, e3d, acfg))
        out.align = (frame_terms[0] + frame_terms[1]) * 0.5

    fout2d = {t: [] for t in (0, 1)}
    if "2d" in branches:
        for i, s in enumerate(scales):
            zi = {t: z_img[t][i] for t in (0, 1)}
            zl = {t: pc_grid[t][i] for t in (0, 1)}
            ze = {t: z_ev[t][i] for t in (0, 1)}
            omega = with_event_weight(
                reliability_global(zi, zl, ze, params, f"fuse2d.s{s}"))
            for t in (0, 1):
                attn = reliability_local(zi[t], zl[t], ze[t], params, f"fuse2d.s{s}")
                fused = adaptive_fuse([zi[t], zl[t], ze[t]], omega, attn)
                fout2d[t].append(cross_attention(fused, [zl[t], ze[t]],
                                                 params, f"fuse2d.s{s}"))

    fout3d = {t: [] for t in (0, 1)}
    if "3d" in branches:
        for i, s in enumerate(scales):
            gi = {t: ev_lift(t, i, img_rows[t][i]) if img_rows[t][i].requires_grad
                  else lift_points_to_grid(img_rows[t][i], geoms[t], s) for t in (0, 1)}
            gl = {t: pc_grid[t][i] for t in (0, 1)}
            ge = {t: ev_lift(t, i, ev_row[t][i]) for t in (0, 1)}
            omega = with_event_weight(
                reliability_global(gi, gl, ge, params, f"fuse3d.s{s}"))
            for t in (0, 1):
                attn_grid = reliability_local(gi[t], gl[t], ge[t], params, f"fuse3d.s{s}")
                attn_pts = sample_grid_at_points(attn_grid, geoms[t], s)
                fused = adaptive_fuse([img_rows[t][i], z_pc[t][i], ev_row[t][i]],
                                      omega, attn_pts)
                fout3d[t].append(cross_attention(fused, [img_rows[t][i], ev_row[t][i]],
                                                 params, f"fuse3d.s{s}"))

    if "2d" in branches:
        out.flow2d_levels = decode_flow2d(fout2d[0], fout2d[1], params)
        out.flow2d_full = full_res_flow(out.flow2d_levels)
    if "3d" in branches:
        w21 = Tensor(prep.warp21)
        warped = [ad.matmul(w21, fout3d[1][i]) for i in range(len(scales))]
        out.flow3d_levels = decode_flow3d(fout3d[0], warped, prep.pyr, params)
        out.flow3d = out.flow3d_levels[0]

    if not with_loss:
        return out

    weights = cfg.loss_weights()
    out.task = task_loss(out.flow2d_levels, sample.gt2d if "2d" in branches else None,
                         out.flow3d_levels, sample.gt3d if "3d" in branches else None,
                         prep.pyr, weights)

    if uses_contrast(variant, branches):
        if latent_rng is None:
            raise ValueError("contrast loss needs a latent sampling stream")
        proj3d = {t: lift_points_to_grid(fout3d[t][0], geoms[t], scales[0])
                  for t in (0, 1)}
        m2d, m3d = motion_vectors(fout2d[0][0], fout2d[1][0], proj3d[0], proj3d[1])
        pull = pull_loss(m2d, m3d, params)
        z2d, z3d = {}, {}
        for t in (0, 1):
            feat2d = ad.mean(fout2d[t][0], axis=(1, 2))
            feat3d = ad.mean(proj3d[t], axis=(1, 2))
            z2d[t] = variational_encode(feat2d, params, "enc2d", latent_rng).z
            if push_target_override is not None:
                z3d[t] = Tensor(push_target_override[t])
                latent_rng.normals(32)  # keep the stream aligned with training
            else:
                z3d[t] = variational_encode(feat3d, params, "enc3d", latent_rng).z
        out.push_targets = {t: z3d[t].data for t in (0, 1)}
        push = push_loss(z2d, z3d)
        out.contra = contra_loss(pull, push, cfg.gamma, cfg.push_sign)

    out.total = total_loss(out.task, out.align, out.contra, weights)
    return out


def _check_finite(out: ForwardOut) -> None:
    for name in ("task", "align", "contra", "total"):
        t = getattr(out, name)
        if t is not None and not np.isfinite(t.data):
            raise NumericError(f"non-finite loss in component '{name}'")


# ---------------------------------------------------------------------------
# training

def train_step(prep: PreparedSample, params: dict, cfg: ModelConfig, variant: str,
               state: OptimState, hyper: AdamHyper, latent_rng: Rng,
               branches=("2d", "3d")):
    """Single-sample step: forward, backward, one Adam update.

    Returns (total loss value, new trainable params merged over the old
    dict, new state). Frozen entries pass through untouched.
    """
    out = forward(params, cfg, variant, prep, branches, latent_rng)
    _check_finite(out)
    train_params = trainable(params)
    grads = ad.backward(out.total, list(train_params.values()))
    grad_map = {name: grads[t] for name, t in train_params.items()}
    new_train, new_state = adam_step(train_params, grad_map, state, hyper)
    merged = dict(params)
    merged.update(new_train)
    return float(out.total.data), merged, new_state


def _accumulate(total: dict, grads: dict) -> None:
    for name, g in grads.items():
        if name in total:
            total[name] = total[name] + g.data
        else:
            total[name] = g.data.copy()


def train_model(preps: list, cfg: ModelConfig, tcfg: TrainConfig, variant: str,
                branches=("2d", "3d"), param_rng: Rng | None = None,
                loop_rng: Rng | None = None, frozen: dict | None = None,
                log: list | None = None) -> dict:
    """Adam training with batch gradient accumulation over single-sample tapes.

    ``frozen`` entries (the event encoder) are carried into the returned
    parameter dict unchanged. Appends one record per optimizer step to
    ``log`` when given.
    """
    if not preps:
        raise ValueError("empty training set")
    base = Rng(tcfg.seed)
    param_rng = param_rng or base.spawn(1)
    loop_rng = loop_rng or base.spawn(2)
    latent_rng = base.spawn(3)
    params = build_params(cfg, variant, param_rng, branches)
    if frozen:
        params.update(frozen)
    train_names = list(trainable(params).keys())
    state = OptimState()
    step = 0
    for epoch in range(tcfg.epochs):
        hyper = tcfg.hyper(epoch)
        order = loop_rng.permutation(len(preps))
        for start in range(0, len(order), tcfg.batch_size):
            batch = order[start:start + tcfg.batch_size]
            acc: dict = {}
            sums = {"loss": 0.0, "task": 0.0, "align": 0.0, "contra": 0.0}
            for k in batch:
                out = forward(params, cfg, variant, preps[k], branches, latent_rng)
                _check_finite(out)
                tp = trainable(params)
                grads = ad.backward(out.total, list(tp.values()))
                _accumulate(acc, {n: grads[t] for n, t in tp.items()})
                sums["loss"] += float(out.total.data)
                sums["task"] += float(out.task.data)
                sums["align"] += float(out.align.data) if out.align is not None else 0.0
                sums["contra"] += float(out.contra.data) if out.contra is not None else 0.0
            nb = len(batch)
            grad_map = {n: acc[n] / nb for n in train_names}
            new_train, state = adam_step(trainable(params), grad_map, state, hyper)
            params = dict(params)
            params.update(new_train)
            step += 1
            if log is not None:
                log.append({"epoch": epoch, "step": step,
                            "loss": sums["loss"] / nb, "task": sums["task"] / nb,
                            "align": sums["align"] / nb,
                            "contra": sums["contra"] / nb, "lr": hyper.lr})
    return params


def pretrain_encoder(samples: list, cfg: ModelConfig, tcfg: TrainConfig,
                     log: list | None = None):
    """Self-supervised future-edge pretraining of the event encoder.

    Returns (EventEncoder with trained unfrozen params, head params dict).
    Logs one record per epoch with the mean loss.
    """
    if not samples:
        raise ValueError("empty pretraining set")
    base = Rng(tcfg.seed)
    enc = EventEncoder.create(base.spawn(1), cfg.channels, cfg.bins)
    heads = make_edge_heads(base.spawn(2), cfg.channels)
    loop_rng = base.spawn(3)

    cache = []
    for sample in samples:
        past, future = split_window(sample.events)
        vox_past = voxelize(past, cfg.bins)
        e_future = [pool_edge(edge_strength(future), s) for s in cfg.scales]
        cache.append((vox_past, e_future))

    params = dict(enc.params)
    params.update(heads)
    state = OptimState()
    for epoch in range(tcfg.epochs):
        hyper = tcfg.hyper(epoch)
        order = loop_rng.permutation(len(cache))
        losses = []
        for start in range(0, len(order), tcfg.batch_size):
            batch = order[start:start + tcfg.batch_size]
            acc: dict = {}
            for k in batch:
                vox_past, e_future = cache[k]
                live = EventEncoder(cfg.channels, cfg.bins, params, frozen=False)
                pyr = event_encode(vox_past, live)
                loss = edge_pretrain_loss(pyr, e_future, params, cfg.edge_scale_weights)
                if not np.isfinite(loss.data):
                    raise NumericError("non-finite loss in component 'edge'")
                grads = ad.backward(loss, list(params.values()))
                _accumulate(acc, {n: grads[t] for n, t in params.items()})
                losses.append(float(loss.data))
            grad_map = {n: acc[n] / len(batch) for n in params}
            params, state = adam_step(params, grad_map, state, hyper)
        if log is not None:
            log.append({"epoch": epoch, "loss": float(np.mean(losses)), "lr": hyper.lr})
    enc_params = {n: t for n, t in params.items() if n.startswith("event_enc.")}
    head_params = {n: t for n, t in params.items() if n.startswith("edge_head.")}
    return EventEncoder(cfg.channels, cfg.bins, enc_params), head_params


# ---------------------------------------------------------------------------
# checkpoints

def _meta_entries(cfg: ModelConfig, variant: str) -> dict:
    return {
        "meta.variant_id": np.array([_VARIANT_ID[variant]]),
        "meta.channels": np.array(cfg.channels, dtype=np.float64),
        "meta.lidar_width": np.array([float(cfg.lidar_width)]),
        "meta.bins": np.array([float(cfg.bins)]),
        "meta.extent": np.array([float(cfg.height), float(cfg.width)]),
        "meta.density_radius": np.array([cfg.density_radius]),
    }


def save_model(path, params: dict, cfg: ModelConfig, variant: str) -> None:
    entries = dict(_meta_entries(cfg, variant))
    for name, t in params.items():
        entries[name] = t.data
    ckpt.save(path, entries)


def load_model(path, trainable_params: bool = False):
    """Returns (params dict, ModelConfig, variant). Event-encoder entries are
    always frozen; others follow ``trainable_params``."""
    entries = ckpt.load(path)
    variant = VARIANTS[int(entries.pop("meta.variant_id")[0])]
    channels = tuple(int(c) for c in entries.pop("meta.channels"))
    lidar_width = int(entries.pop("meta.lidar_width")[0])
    bins = int(entries.pop("meta.bins")[0])
    h, w = (int(v) for v in entries.pop("meta.extent"))
    density = float(entries.pop("meta.density_radius")[0])
    cfg = ModelConfig(height=h, width=w, channels=channels,
                      lidar_width=lidar_width, bins=bins, density_radius=density)
    params = {}
    for name, arr in entries.items():
        rg = trainable_params and "event_enc." not in name
        params[name] = Tensor(arr, requires_grad=rg)
    return params, cfg, variant


def encoder_from_params(params: dict, cfg: ModelConfig,
                        prefix: str = "") -> EventEncoder:
    sub = {k[len(prefix):]: Tensor(v.data) for k, v in params.items()
           if k.startswith(prefix + "event_enc.")}
    return EventEncoder(cfg.channels, cfg.bins, sub).freeze()


# ---------------------------------------------------------------------------
# evaluation

def predict_flows(params: dict, cfg: ModelConfig, variant: str,
                  prep: PreparedSample, branches=("2d", "3d")):
    out = forward(params, cfg, variant, prep, branches, with_loss=False)
    flow2d = out.flow2d_full.data if out.flow2d_full is not None else None
    flow3d = out.flow3d.data if out.flow3d is not None else None
    return flow2d, flow3d


def _sample_metrics(flow2d, flow3d, sample: SampleData) -> dict:
    mask = np.ones(sample.gt2d.shape[1:], dtype=bool)
    epe2d, acc1, fl = flow_metrics_2d(flow2d, sample.gt2d, mask)
    epe3d, a05, a10 = flow_metrics_3d(flow3d, sample.gt3d)
    return {"epe2d": epe2d, "acc1px": acc1, "fl": fl,
            "epe3d": epe3d, "acc05": a05, "acc10": a10,
            "label": degradation_label(sample.manifest)}


def evaluate_checkpoint_params(params: dict, cfg: ModelConfig, variant: str,
                               samples: list) -> dict:
    """EvalReport dict over a dataset; handles the two-model indep layout."""
    rows = []
    if variant == "indep":
        sub2d = {k[4:]: v for k, v in params.items() if k.startswith("m2d/")}
        sub3d = {k[4:]: v for k, v in params.items() if k.startswith("m3d/")}
        enc2 = encoder_from_params(sub2d, cfg)
        enc3 = encoder_from_params(sub3d, cfg)
        for sample in samples:
            prep2 = prepare_sample(sample, cfg, enc2)
            prep3 = prepare_sample(sample, cfg, enc3)
            f2, _ = predict_flows(sub2d, cfg, variant, prep2, branches=("2d",))
            _, f3 = predict_flows(sub3d, cfg, variant, prep3, branches=("3d",))
            rows.append(_sample_metrics(f2, f3, sample))
    else:
        enc = encoder_from_params(params, cfg)
        for sample in samples:
            prep = prepare_sample(sample, cfg, enc)
            f2, f3 = predict_flows(params, cfg, variant, prep)
            rows.append(_sample_metrics(f2, f3, sample))
    return aggregate_report(rows)


def zero_baseline_report(samples: list) -> dict:
    """The trivial zero-motion predictor; anchors relative acceptance bars."""
    rows = []
    for sample in samples:
        rows.append(_sample_metrics(np.zeros_like(sample.gt2d),
                                    np.zeros_like(sample.gt3d), sample))
    return aggregate_report(rows)
