"""Cross-dimension contrast: pooled motion vectors, a cosine pull between
the 2D and 3D branches, variational latents, and a BCE push term."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import FrameGeometry, lift_points_to_grid
from .params import add_linear
from .rng import Rng

LATENT_DIM = 32
NORM_EPS = 1e-8
PROB_CLAMP = 1e-7


def make_contrast_heads(rng: Rng, c: int) -> dict:
    """Projection maps for both branches plus the two variational encoders."""
    params: dict = {}
    add_linear(params, rng, "contrast.proj2d", c, LATENT_DIM)
    add_linear(params, rng, "contrast.proj3d", c, LATENT_DIM)
    add_linear(params, rng, "contrast.enc2d.mu", c, LATENT_DIM)
    add_linear(params, rng, "contrast.enc2d.sigma", c, LATENT_DIM)
    add_linear(params, rng, "contrast.enc3d.mu", c, LATENT_DIM)
    add_linear(params, rng, "contrast.enc3d.sigma", c, LATENT_DIM)
    return params


def project_point_features(f3d: Tensor, geometry: FrameGeometry, scale: int) -> Tensor:
    """Lift per-point branch features onto the image grid for pooling."""
    return lift_points_to_grid(f3d, geometry, scale)


def motion_vectors(f2d_t0: Tensor, f2d_t1: Tensor, f3d_proj_t0: Tensor,
                   f3d_proj_t1: Tensor) -> tuple[Tensor, Tensor]:
    """Global average pool of the frame difference, per branch -> (C,) each."""
    if f2d_t0.shape != f2d_t1.shape or f3d_proj_t0.shape != f3d_proj_t1.shape:
        raise ValueError("frame feature shapes disagree")
    m2d = ad.mean(f2d_t1 - f2d_t0, axis=(1, 2))
    m3d = ad.mean(f3d_proj_t1 - f3d_proj_t0, axis=(1, 2))
    return m2d, m3d


def pull_loss(m2d: Tensor, m3d: Tensor, params: dict) -> Tensor:
    """One minus the cosine between the projected motion vectors;
    norms are epsilon-guarded so zero motion stays finite."""
    a = ad.linear(ad.reshape(m2d, (1, m2d.shape[0])),
                  params["contrast.proj2d.w"], params["contrast.proj2d.b"])
    b = ad.linear(ad.reshape(m3d, (1, m3d.shape[0])),
                  params["contrast.proj3d.w"], params["contrast.proj3d.b"])
    dot = ad.tsum(a * b)
    na = ad.reshape(ad.l2norm(a, axis=(0, 1)), ()) + NORM_EPS
    nb = ad.reshape(ad.l2norm(b, axis=(0, 1)), ()) + NORM_EPS
    return 1.0 - dot / (na * nb)


@dataclass
class LatentDist:
    mu: Tensor
    sigma: Tensor
    z: Tensor


def variational_encode(feat: Tensor, params: dict, head: str, rng: Rng) -> LatentDist:
    """Pooled branch vector (C,) -> latent with reparameterized sample.

    sigma is softplus-parameterized (always positive); the normal draw
    comes from the seeded generator so sampling is reproducible.
    """
    row = ad.reshape(feat, (1, feat.shape[0]))
    mu = ad.reshape(ad.linear(row, params[f"contrast.{head}.mu.w"],
                              params[f"contrast.{head}.mu.b"]), (LATENT_DIM,))
    pre = ad.reshape(ad.linear(row, params[f"contrast.{head}.sigma.w"],
                               params[f"contrast.{head}.sigma.b"]), (LATENT_DIM,))
    sigma = ad.softplus(pre)
    noise = Tensor(np.array(rng.normals(LATENT_DIM)))
    return LatentDist(mu=mu, sigma=sigma, z=mu + sigma * noise)


def _bce(pred: Tensor, target: Tensor) -> Tensor:
    p = ad.clip(ad.sigmoid(pred), PROB_CLAMP, 1.0 - PROB_CLAMP)
    q = ad.stop_gradient(ad.clip(ad.sigmoid(target), PROB_CLAMP, 1.0 - PROB_CLAMP))
    return ad.mean(-(q * ad.log(p) + (1.0 - q) * ad.log(1.0 - p)))


def push_loss(z2d_by_frame: dict, z3d_by_frame: dict) -> Tensor:
    """Half the summed per-frame BCE between the branch latents' sigmoids.

    The 3D side is the detached target; gradients reach only the 2D latents.
    """
    total = None
    for t in sorted(z2d_by_frame):
        term = _bce(z2d_by_frame[t], z3d_by_frame[t])
        total = term if total is None else total + term
    return total * 0.5


def contra_loss(pull: Tensor, push: Tensor, gamma: float = 0.5,
                push_sign: float = 1.0) -> Tensor:
    """Pull plus gamma-weighted push. push_sign=-1 flips the push term for
    experiments; the default follows the composite objective as written."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return pull + (gamma * push_sign) * push
