"""Edge-anchored symmetric regularization: pairwise l1 distances between the
three per-location embeddings, weighted by the event edge prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class AlignConfig:
    weight_2d: float = 1.0
    weight_3d: float = 1.0

    def __post_init__(self):
        if self.weight_2d < 0 or self.weight_3d < 0:
            raise AlignmentError("alignment weights must be non-negative")


def pairwise_l1(z_img: Tensor, z_ev: Tensor, z_pc: Tensor) -> Tensor:
    """Sum of the three unordered pairwise l1 distances per location.

    Grids are (C, H, W) reduced over channels; point sets are (N, C)
    reduced over columns. The event embedding is expected to be behind
    stop_gradient already.
    """
    if not (z_img.shape == z_ev.shape == z_pc.shape):
        raise AlignmentError(
            f"embedding shapes differ: {z_img.shape}, {z_ev.shape}, {z_pc.shape}")
    axis = 0 if z_img.ndim == 3 else 1
    return (ad.abs_sum(z_img - z_ev, axis=axis)
            + ad.abs_sum(z_img - z_pc, axis=axis)
            + ad.abs_sum(z_ev - z_pc, axis=axis))


def _weighted_term(dists, weights) -> Tensor | None:
    total = None
    for d, e in zip(dists, weights):
        e = np.asarray(e, dtype=np.float64)
        if e.shape != d.shape:
            raise AlignmentError(f"weight field {e.shape} vs distance field {d.shape}")
        if e.size and (e.min() < 0.0 or e.max() > 1.0):
            raise AlignmentError(f"edge weight outside [0, 1]: [{e.min()}, {e.max()}]")
        term = ad.mean(d * Tensor(e))
        total = term if total is None else total + term
    return total


def align_loss(d2d: list, d3d: list, e2d: list, e3d: list,
               cfg: AlignConfig = AlignConfig()) -> Tensor:
    """Edge-weighted mean of per-scale distance fields, 2D plus 3D branches.

    d2d/d3d are per-scale distance Tensors ((H_s, W_s) and (N,)); e2d/e3d
    the matching constant edge priors in [0, 1]. Either branch may be
    empty.
    """
    total = None
    t2 = _weighted_term(d2d, e2d)
    if t2 is not None:
        total = t2 * cfg.weight_2d
    t3 = _weighted_term(d3d, e3d)
    if t3 is not None:
        t3 = t3 * cfg.weight_3d
        total = t3 if total is None else total + t3
    if total is None:
        raise AlignmentError("align_loss needs at least one scale")
    return total
