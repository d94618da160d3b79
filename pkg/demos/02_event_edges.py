"""Generate one synthetic scene, inspect its event stream, and print the
edge-strength field that anchors the shared embedding space."""

import numpy as np

from edgeflow.events import edge_strength, pool_edge, split_window, voxelize
from edgeflow.synth import generate_sample, random_scene

sample = generate_sample(random_scene(seed=42))
ev = sample.events
print(f"scene 42: {len(ev)} events over [{ev.t_start}, {ev.t_end}) s, "
      f"{(sample.debug['owner2d'] >= 0).mean():.0%} of pixels on objects")

past, future = split_window(ev)
vox = voxelize(past, bins=5)
print(f"past-half voxel grid {vox.shape}, total count {int(vox.sum())} "
      f"(= {len(past)} events)")

edges = edge_strength(ev)
print(f"edge strength: range [{edges.min():.3f}, {edges.max():.3f}], "
      f"pixels above 0.5: {(edges > 0.5).sum()}")

for scale in (1, 2, 3):
    pooled = pool_edge(edges, scale)
    print(f"  scale {scale}: {pooled.shape[0]}x{pooled.shape[1]}, "
          f"mean {pooled.mean():.4f}")

# coarse ASCII rendering of the full-res field, normalized to its peak
chars = " .:-=+*#%@"
peak = edges.max() if edges.max() > 0 else 1.0
rows = []
for r in range(0, edges.shape[0], 2):
    row = "".join(chars[int(min(v / peak, 0.999) * len(chars))]
                  for v in edges[r, ::2])
    rows.append(row)
print("edge field (every 2nd pixel, peak-normalized):")
print("\n".join(rows))
