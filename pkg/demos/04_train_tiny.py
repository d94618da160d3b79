"""End-to-end miniature run: pretrain the edge encoder, train the full model
briefly on a handful of scenes, and compare against the zero-flow baseline.

Takes about a minute; for the full desk-scale protocol use the CLI.
"""

import time

import edgeflow.autodiff as ad
from edgeflow import model as M
from edgeflow.synth import generate_sample, random_scene

cfg = M.ModelConfig()
train = [generate_sample(random_scene(100 + i)) for i in range(8)]
val = [generate_sample(random_scene(500 + i)) for i in range(4)]
baseline = M.zero_baseline_report(val)
print(f"zero-flow baseline: epe2d {baseline['epe2d']:.4f}, "
      f"epe3d {baseline['epe3d']:.4f}")

t0 = time.time()
pre = M.TrainConfig(lr=1e-3, epochs=40, batch_size=8, seed=7)
plog = []
enc, _ = M.pretrain_encoder(train, cfg, pre, log=plog)
enc = enc.freeze()
print(f"pretrain 40 epochs: edge loss {plog[0]['loss']:.4f} -> "
      f"{plog[-1]['loss']:.4f}  ({time.time() - t0:.0f}s)")

t0 = time.time()
preps = [M.prepare_sample(s, cfg, enc) for s in train]
tcfg = M.TrainConfig(lr=1e-3, epochs=6, batch_size=4, seed=1)
log = []
params = M.train_model(preps, cfg, tcfg, "full", frozen=dict(enc.params), log=log)
print(f"train 6 epochs: loss {log[0]['loss']:.3f} -> {log[-1]['loss']:.3f}  "
      f"({time.time() - t0:.0f}s)")

frozen_eval = {k: ad.Tensor(v.data) for k, v in params.items()}
report = M.evaluate_checkpoint_params(frozen_eval, cfg, "full", val)
print(f"val: epe2d {report['epe2d']:.4f} ({report['epe2d'] / baseline['epe2d']:.2f}x "
      f"baseline), epe3d {report['epe3d']:.4f} "
      f"({report['epe3d'] / baseline['epe3d']:.2f}x baseline)")
print("(a few epochs on 8 scenes only demonstrates the plumbing; the")
print(" acceptance protocol trains 30 epochs on 64 scenes)")
