"""Build a tiny network on the float64 tensor engine and verify its
gradients against central finite differences."""

import numpy as np

import edgeflow.autodiff as ad
from edgeflow.autodiff import Tensor
from edgeflow.rng import Rng

rng = Rng(7)

# a conv -> relu -> softmax chain with a scalar objective
image = Tensor(np.array(rng.uniforms(3 * 8 * 8)).reshape(3, 8, 8))
kernel = Tensor(np.array(rng.uniforms(4 * 3 * 9, -0.3, 0.3)).reshape(4, 3, 3, 3),
                requires_grad=True)
bias = Tensor(np.array(rng.uniforms(4, -0.1, 0.1)), requires_grad=True)


def objective(params):
    k, b = params
    feat = ad.relu(ad.conv2d(image, k, b, stride=2, pad=1))
    probs = ad.softmax(ad.reshape(feat, (4 * 16,)), axis=0)
    return ad.tsum(probs * probs)


loss = objective([kernel, bias])
grads = ad.backward(loss, [kernel, bias])
print(f"loss            : {float(loss.data):.6f}")
print(f"|grad kernel|   : {np.abs(grads[kernel].data).sum():.6f}")
print(f"|grad bias|     : {np.abs(grads[bias].data).sum():.6f}")

err = ad.finite_diff_check(objective, [kernel, bias])
print(f"finite-diff err : {err:.2e}  (threshold 1e-4)")

# stop_gradient blocks flow exactly
x = Tensor([5.0], requires_grad=True)
y = Tensor([2.0], requires_grad=True)
g = ad.backward(ad.tsum(ad.stop_gradient(x) * y), [x, y])
print(f"stop-gradient   : d/dx = {g[x].data}, d/dy = {g[y].data}")
