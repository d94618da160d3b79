"""Run the reliability-aware fusion block on one scene and show how the
global and local weights respond when the image degrades."""

import numpy as np

from edgeflow import model as M
from edgeflow.autodiff import Tensor
from edgeflow.events import EventEncoder
from edgeflow.fusion import reliability_global, reliability_local
from edgeflow.rng import Rng
from edgeflow.synth import degrade, generate_sample, random_scene

cfg = M.ModelConfig()
enc = EventEncoder.create(Rng(5), cfg.channels, cfg.bins).freeze()
params = M.build_params(cfg, "full", Rng(11))


def global_weights(sample):
    prep = M.prepare_sample(sample, cfg, enc)
    from edgeflow.encoders import image_encode, lidar_encode, project_to_space, lift_points_to_grid
    zi, zl, ze = {}, {}, {}
    for t, img, pts in ((0, sample.img0, sample.points0), (1, sample.img1, sample.points1)):
        pyr = image_encode(img, params, cfg.channels)
        pc = lidar_encode(pts, params, cfg.density_radius)
        z_img, z_pc = project_to_space(pyr[0], pc, 1, params)
        zi[t] = z_img
        zl[t] = lift_points_to_grid(z_pc, prep.geoms[t], 1)
        ze[t] = Tensor(prep.event_feats[t][0])
    omega = reliability_global(zi, zl, ze, params, "fuse2d.s1")
    attn = reliability_local(zi[0], zl[0], ze[0], params, "fuse2d.s1")
    return omega.data, attn.data


clean = generate_sample(random_scene(seed=11))
print("scale-1 global reliability (image, lidar) and local weight means:")
for label, sample in [
        ("clean", clean),
        ("low-exposure:3", degrade(clean, "low-exposure", 3, seed=1)),
        ("drift-lidar:3", degrade(clean, "drift-lidar", 3, seed=1))]:
    omega, attn = global_weights(sample)
    print(f"  {label:16s} omega = ({omega[0]:.3f}, {omega[1]:.3f})  "
          f"local mean (I, L, E) = ({attn[0].mean():.3f}, "
          f"{attn[1].mean():.3f}, {attn[2].mean():.3f})")
print("(untrained weights: the point is the normalization invariants --")
print(" omega sums to 1 over image/lidar, local weights sum to 1 per pixel)")
