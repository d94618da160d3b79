import math

import numpy as np
import pytest

import edgeflow.autodiff as ad
from edgeflow.autodiff import Tensor
from edgeflow.contrast import (LATENT_DIM, contra_loss, make_contrast_heads,
                               motion_vectors, pull_loss, push_loss,
                               variational_encode)
from edgeflow.rng import Rng

C = 6


def rand_grid(rng, c=C, h=4, w=4):
    return Tensor(np.array(rng.uniforms(c * h * w, -1, 1)).reshape(c, h, w))


# ---------------------------------------------------------------------------
# motion vectors

def test_static_features_zero_motion():
    rng = Rng(1)
    f = rand_grid(rng)
    g = rand_grid(rng)
    m2, m3 = motion_vectors(f, Tensor(f.data), g, Tensor(g.data))
    assert np.allclose(m2.data, 0.0)
    assert np.allclose(m3.data, 0.0)


def test_constant_delta_is_that_constant():
    rng = Rng(2)
    f0 = rand_grid(rng)
    delta = np.array(rng.uniforms(C)).reshape(C, 1, 1)
    f1 = Tensor(f0.data + delta)
    m2, _ = motion_vectors(f0, f1, f0, f1)
    assert np.allclose(m2.data, delta.ravel())


def test_single_entry_mean():
    f0 = Tensor(np.zeros((1, 2, 2)))
    f1 = Tensor(np.array([[[1.0, 0.0], [0.0, 0.0]]]))
    m2, _ = motion_vectors(f0, f1, f0, f1)
    assert m2.data[0] == pytest.approx(0.25)


# ---------------------------------------------------------------------------
# pull loss

def _aligned_heads(rng):
    """Heads where proj2d == proj3d so equal inputs give equal outputs."""
    heads = make_contrast_heads(rng, C)
    heads["contrast.proj3d.w"] = Tensor(heads["contrast.proj2d.w"].data.copy(),
                                        requires_grad=True)
    heads["contrast.proj3d.b"] = Tensor(heads["contrast.proj2d.b"].data.copy(),
                                        requires_grad=True)
    return heads


def test_pull_identical_projections_near_zero():
    rng = Rng(3)
    heads = _aligned_heads(rng)
    m = Tensor(np.array(rng.uniforms(C, -1, 1)))
    loss = pull_loss(m, Tensor(m.data), heads)
    assert float(loss.data) == pytest.approx(0.0, abs=1e-6)


def test_pull_orthogonal_is_one():
    # projections mapping the same input onto orthogonal latent axes
    heads = make_contrast_heads(Rng(4), 2)
    w2 = np.zeros((2, LATENT_DIM)); w2[0, 0] = 1.0
    w3 = np.zeros((2, LATENT_DIM)); w3[0, 1] = 1.0
    heads["contrast.proj2d.w"] = Tensor(w2, requires_grad=True)
    heads["contrast.proj2d.b"] = Tensor(np.zeros(LATENT_DIM), requires_grad=True)
    heads["contrast.proj3d.w"] = Tensor(w3, requires_grad=True)
    heads["contrast.proj3d.b"] = Tensor(np.zeros(LATENT_DIM), requires_grad=True)
    m = Tensor(np.array([1.0, 0.0]))
    loss = pull_loss(m, Tensor(m.data), heads)
    assert float(loss.data) == pytest.approx(1.0, abs=1e-6)


def test_pull_antiparallel_is_two():
    w2 = np.zeros((2, LATENT_DIM)); w2[0, 0] = 1.0
    w3 = np.zeros((2, LATENT_DIM)); w3[0, 0] = -1.0
    heads = make_contrast_heads(Rng(5), 2)
    heads["contrast.proj2d.w"] = Tensor(w2, requires_grad=True)
    heads["contrast.proj2d.b"] = Tensor(np.zeros(LATENT_DIM), requires_grad=True)
    heads["contrast.proj3d.w"] = Tensor(w3, requires_grad=True)
    heads["contrast.proj3d.b"] = Tensor(np.zeros(LATENT_DIM), requires_grad=True)
    m = Tensor(np.array([1.0, 0.0]))
    loss = pull_loss(m, Tensor(m.data), heads)
    assert float(loss.data) == pytest.approx(2.0, abs=1e-6)


def test_pull_range_and_scale_invariance():
    rng = Rng(6)
    heads = make_contrast_heads(rng, C)
    for _ in range(100):
        a = Tensor(np.array(rng.uniforms(C, -2, 2)))
        b = Tensor(np.array(rng.uniforms(C, -2, 2)))
        v = float(pull_loss(a, b, heads).data)
        assert -1e-9 <= v <= 2.0 + 1e-9
    a = Tensor(np.array(rng.uniforms(C, 0.5, 1.5)))
    b = Tensor(np.array(rng.uniforms(C, 0.5, 1.5)))
    base = float(pull_loss(a, b, heads).data)
    scaled = float(pull_loss(Tensor(a.data * 7.3), b, heads).data)
    assert scaled == pytest.approx(base, abs=1e-6)


def test_pull_gradcheck():
    rng = Rng(7)
    heads = make_contrast_heads(rng, 4)
    m2 = Tensor(np.array(rng.uniforms(4, -1, 1)), requires_grad=True)
    m3 = Tensor(np.array(rng.uniforms(4, -1, 1)), requires_grad=True)
    keys = ["contrast.proj2d.w", "contrast.proj2d.b", "contrast.proj3d.w", "contrast.proj3d.b"]

    def f(ps):
        pm = dict(heads)
        pm.update(dict(zip(keys, ps[:4])))
        return pull_loss(ps[4], ps[5], pm)

    params = [heads[k] for k in keys] + [m2, m3]
    assert ad.finite_diff_check(f, params) < 1e-5


# ---------------------------------------------------------------------------
# variational encoding

def test_tiny_sigma_collapses_to_mu():
    rng = Rng(8)
    heads = make_contrast_heads(rng, C)
    # force pre-sigma very negative: softplus(pre) ~ 0
    heads["contrast.enc2d.sigma.w"] = Tensor(np.zeros((C, LATENT_DIM)), requires_grad=True)
    heads["contrast.enc2d.sigma.b"] = Tensor(np.full(LATENT_DIM, -40.0), requires_grad=True)
    feat = Tensor(np.array(rng.uniforms(C)))
    dist = variational_encode(feat, heads, "enc2d", Rng(0))
    assert np.allclose(dist.z.data, dist.mu.data, atol=1e-6)
    assert np.all(dist.sigma.data > 0.0)


def test_fixed_seed_reproducible_sample():
    rng = Rng(9)
    heads = make_contrast_heads(rng, C)
    feat = Tensor(np.array(rng.uniforms(C)))
    z1 = variational_encode(feat, heads, "enc3d", Rng(123)).z.data
    z2 = variational_encode(feat, heads, "enc3d", Rng(123)).z.data
    assert np.array_equal(z1, z2)


def test_dz_dmu_identity():
    rng = Rng(10)
    heads = make_contrast_heads(rng, C)
    feat = Tensor(np.array(rng.uniforms(C)))

    def f(ps):
        pm = dict(heads)
        pm["contrast.enc2d.mu.b"] = ps[0]
        dist = variational_encode(feat, pm, "enc2d", Rng(55))
        return ad.tsum(dist.z)

    bias = Tensor(np.zeros(LATENT_DIM), requires_grad=True)
    err = ad.finite_diff_check(f, [bias])
    assert err < 1e-6
    # analytic gradient of sum(z) w.r.t. mu bias is exactly ones
    loss = f([bias])
    g = ad.backward(loss, [bias])[bias].data
    assert np.allclose(g, 1.0)


# ---------------------------------------------------------------------------
# push loss

def test_push_half_probabilities_ln2():
    z0 = Tensor(np.zeros(LATENT_DIM))
    zs2 = {0: z0, 1: Tensor(np.zeros(LATENT_DIM))}
    zs3 = {0: Tensor(np.zeros(LATENT_DIM)), 1: Tensor(np.zeros(LATENT_DIM))}
    loss = push_loss(zs2, zs3)
    assert float(loss.data) == pytest.approx(math.log(2.0), abs=1e-12)


def test_push_equal_latents_gives_entropy():
    rng = Rng(11)
    z = np.array(rng.uniforms(LATENT_DIM, -2, 2))
    p = 1.0 / (1.0 + np.exp(-z))
    entropy = float(np.mean(-(p * np.log(p) + (1 - p) * np.log(1 - p))))
    loss = push_loss({0: Tensor(z), 1: Tensor(z)}, {0: Tensor(z), 1: Tensor(z)})
    assert float(loss.data) == pytest.approx(entropy, abs=1e-9)
    assert float(loss.data) > 0.0


def test_push_gradient_reaches_prediction_not_target():
    rng = Rng(12)
    z2 = {t: Tensor(np.array(rng.uniforms(LATENT_DIM, -1, 1)), requires_grad=True)
          for t in (0, 1)}
    z3 = {t: Tensor(np.array(rng.uniforms(LATENT_DIM, -1, 1)), requires_grad=True)
          for t in (0, 1)}
    loss = push_loss(z2, z3)
    grads = ad.backward(loss, [z2[0], z2[1], z3[0], z3[1]])
    assert np.any(grads[z2[0]].data != 0.0)
    assert np.array_equal(grads[z3[0]].data, np.zeros(LATENT_DIM))
    assert np.array_equal(grads[z3[1]].data, np.zeros(LATENT_DIM))


def test_push_nonnegative_random():
    rng = Rng(13)
    for _ in range(50):
        z2 = {t: Tensor(np.array(rng.uniforms(LATENT_DIM, -3, 3))) for t in (0, 1)}
        z3 = {t: Tensor(np.array(rng.uniforms(LATENT_DIM, -3, 3))) for t in (0, 1)}
        assert float(push_loss(z2, z3).data) >= 0.0


# ---------------------------------------------------------------------------
# combination

def test_contra_gamma_zero_is_pull():
    pull = Tensor(np.array(0.8))
    push = Tensor(np.array(0.6))
    assert float(contra_loss(pull, push, gamma=0.0).data) == pytest.approx(0.8)


def test_contra_weighted_sum():
    pull = Tensor(np.array(1.0))
    push = Tensor(np.array(math.log(2.0)))
    out = contra_loss(pull, push, gamma=0.5)
    assert float(out.data) == pytest.approx(1.0 + 0.5 * math.log(2.0), abs=1e-9)


def test_contra_push_sign_flip():
    pull = Tensor(np.array(1.0))
    push = Tensor(np.array(0.4))
    assert float(contra_loss(pull, push, 0.5, push_sign=-1.0).data) == pytest.approx(0.8)


def test_contra_zero_components():
    assert float(contra_loss(Tensor(np.array(0.0)), Tensor(np.array(0.0))).data) == 0.0


def test_contra_rejects_negative_gamma():
    with pytest.raises(ValueError):
        contra_loss(Tensor(np.array(0.0)), Tensor(np.array(0.0)), gamma=-1.0)


def test_full_contra_gradcheck():
    # the push target is detached by definition, so the checked objective
    # holds it constant at its unperturbed value
    rng = Rng(14)
    heads = make_contrast_heads(rng, 4)
    m2 = Tensor(np.array(rng.uniforms(4, -1, 1)), requires_grad=True)
    m3 = Tensor(np.array(rng.uniforms(4, -1, 1)), requires_grad=True)
    f2 = Tensor(np.array(rng.uniforms(4, -1, 1)))
    f3 = Tensor(np.array(rng.uniforms(4, -1, 1)))
    z3_frozen = {t: Tensor(variational_encode(f3, heads, "enc3d", Rng(2000 + t)).z.data)
                 for t in (0, 1)}
    names = sorted(heads)

    def f(ps):
        pm = dict(zip(names, ps[:len(names)]))
        pull = pull_loss(ps[-2], ps[-1], pm)
        z2 = {t: variational_encode(f2, pm, "enc2d", Rng(1000 + t)).z for t in (0, 1)}
        return contra_loss(pull, push_loss(z2, z3_frozen), 0.5)

    params = [heads[n] for n in names] + [m2, m3]
    assert ad.finite_diff_check(f, params) < 1e-4
