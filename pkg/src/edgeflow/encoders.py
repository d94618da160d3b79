"""Image and LiDAR backbones, projection heads into the shared edge-centric
embedding space, and the 2D<->3D lifting/sampling used by both branches.

Image coordinates: pixel (row r, col c) covers [c, c+1) x [r, r+1) with its
center at (c + 0.5, r + 0.5). A 3D point (x, y, z), z > 0, projects to
u = fx*x/z + cx, v = fy*y/z + cy; scale-s coordinates divide by 2**s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import add_conv2d, add_linear
from .rng import Rng


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    height: int
    width: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")

    def project(self, positions: np.ndarray) -> np.ndarray:
        """(N, 3) camera-frame points -> (N, 2) full-res pixel coords (u, v)."""
        positions = np.asarray(positions, dtype=np.float64)
        if not np.all(np.isfinite(positions)):
            raise GeometryError("non-finite point position")
        z = positions[:, 2]
        if np.any(z <= 0):
            raise GeometryError("point at or behind the camera (z <= 0)")
        u = self.fx * positions[:, 0] / z + self.cx
        v = self.fy * positions[:, 1] / z + self.cy
        return np.stack([u, v], axis=1)


# ---------------------------------------------------------------------------
# backbones

def make_image_encoder(rng: Rng, channels=(16, 24, 32)) -> dict:
    params: dict = {}
    cin = 1
    for i, cout in enumerate(channels, start=1):
        add_conv2d(params, rng, f"img_enc.stage{i}", cout, cin, 3)
        cin = cout
    return params


def image_encode(img: np.ndarray, params: dict, channels=(16, 24, 32)) -> list[Tensor]:
    """Grayscale (H, W) in [0,1] -> pyramid [(C_s, H/2^s, W/2^s)] via
    stride-2 3x3 convs with relu."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise GeometryError(f"image must be rank 2, got {img.shape}")
    x = Tensor(img[None])
    pyramid = []
    for i in range(1, len(channels) + 1):
        # same padding schedule as the event encoder so the pyramids register
        pd = ((0, 1), (0, 1)) if i == 2 else 1
        x = ad.relu(ad.conv2d(x, params[f"img_enc.stage{i}.w"], params[f"img_enc.stage{i}.b"],
                              stride=2, pad=pd))
        pyramid.append(x)
    return pyramid


def make_lidar_encoder(rng: Rng, width: int = 32) -> dict:
    params: dict = {}
    add_linear(params, rng, "pc_enc.fc1", 6, width)
    add_linear(params, rng, "pc_enc.fc2", width, width)
    return params


def point_descriptors(positions: np.ndarray, density_radius: float = 0.5) -> np.ndarray:
    """Per-point (x, y, z, range, depth, local density) descriptor rows.

    Density counts other points within density_radius (self excluded).
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    if n < 8:
        raise GeometryError(f"need at least 8 points, got {n}")
    rng_norm = np.linalg.norm(positions, axis=1)
    d2 = ((positions[:, None, :] - positions[None, :, :]) ** 2).sum(axis=2)
    density = ((d2 <= density_radius ** 2).sum(axis=1) - 1).astype(np.float64)
    return np.concatenate([positions, rng_norm[:, None], positions[:, 2:3], density[:, None]], axis=1)


def lidar_encode(positions: np.ndarray, params: dict, density_radius: float = 0.5) -> Tensor:
    """Point cloud (N, 3) -> per-point features (N, width) via a shared MLP."""
    desc = Tensor(point_descriptors(positions, density_radius))
    h = ad.relu(ad.linear(desc, params["pc_enc.fc1.w"], params["pc_enc.fc1.b"]))
    return ad.relu(ad.linear(h, params["pc_enc.fc2.w"], params["pc_enc.fc2.b"]))


# ---------------------------------------------------------------------------
# projection heads into the shared space

def make_projection_heads(rng: Rng, channels=(16, 24, 32), lidar_width: int = 32) -> dict:
    params: dict = {}
    for i, c in enumerate(channels, start=1):
        add_conv2d(params, rng, f"proj.img.s{i}", c, c, 1)
    for i, c in enumerate(channels, start=1):
        add_linear(params, rng, f"proj.pc.s{i}", lidar_width, c)
    return params


def project_to_space(f_img_s: Tensor, f_pc: Tensor, scale: int, params: dict,
                     prefix: str = "proj") -> tuple[Tensor, Tensor]:
    """Map backbone features into the shared per-scale channel width.

    Image maps pass a 1x1 conv; point features a per-scale linear layer.
    Event features enter the shared space unchanged (behind stop_gradient,
    applied where they are produced).
    """
    zi = ad.conv2d(f_img_s, params[f"{prefix}.img.s{scale}.w"], params[f"{prefix}.img.s{scale}.b"])
    zl = ad.linear(f_pc, params[f"{prefix}.pc.s{scale}.w"], params[f"{prefix}.pc.s{scale}.b"])
    return zi, zl


# ---------------------------------------------------------------------------
# lifting / sampling between the image grid and the point cloud

class _LiftPlan:
    """Constant geometry for one (point set, scale): containing cells of the
    in-frame points, the empty-cell fill weights, and sample coords."""

    __slots__ = ("h", "w", "in_idx", "cells", "empty", "nbr_idx", "nbr_w", "coords")

    def __init__(self, uv: np.ndarray, h: int, w: int, scale: int):
        self.h, self.w = h, w
        us = uv[:, 0] / (2 ** scale)
        vs = uv[:, 1] / (2 ** scale)
        col = np.floor(us).astype(np.int64)
        row = np.floor(vs).astype(np.int64)
        inside = (col >= 0) & (col < w) & (row >= 0) & (row < h)
        self.in_idx = np.nonzero(inside)[0]
        self.cells = row[inside] * w + col[inside]
        self.coords = np.stack([us, vs], axis=1)
        self.empty = np.empty(0, dtype=np.int64)
        self.nbr_idx = np.empty((0, 1), dtype=np.int64)
        self.nbr_w = np.empty((0, 1))
        if self.in_idx.size:
            self._fill_weights()

    def _fill_weights(self) -> None:
        m = self.h * self.w
        counts = np.bincount(self.cells, minlength=m)
        occ = np.nonzero(counts > 0)[0]
        empty = np.nonzero(counts == 0)[0]
        if not (empty.size and occ.size):
            return
        er, ec = np.divmod(empty, self.w)
        orow, ocol = np.divmod(occ, self.w)
        d = np.sqrt((er[:, None] - orow[None, :]) ** 2.0 + (ec[:, None] - ocol[None, :]) ** 2.0)
        k = min(3, occ.size)
        # ties resolved toward the lower row-major cell index
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        dk = np.take_along_axis(d, order, axis=1)
        wk = 1.0 / np.maximum(dk, 1e-12)
        wk /= wk.sum(axis=1, keepdims=True)
        self.empty = empty
        self.nbr_idx = occ[order]
        self.nbr_w = wk


class FrameGeometry:
    """Projection-derived constants for one point cloud against one camera,
    shared by every lift/sample at that frame."""

    def __init__(self, positions: np.ndarray, cam: CameraModel, scales=(1, 2, 3)):
        self.positions = np.asarray(positions, dtype=np.float64)
        self.cam = cam
        self.uv = cam.project(self.positions)
        self.plans = {s: _LiftPlan(self.uv, cam.height // 2 ** s, cam.width // 2 ** s, s)
                      for s in scales}

    def n_points(self) -> int:
        return self.positions.shape[0]


def lift_points_to_grid(features: Tensor, geometry: FrameGeometry, scale: int) -> Tensor:
    """Scatter per-point features (N, C) into the scale-s grid (C, H_s, W_s).

    Points sharing a cell average; empty cells take the inverse-distance
    weighted mean of the 3 nearest occupied cells. No points in frame
    yields an all-zero grid.
    """
    plan = geometry.plans[scale]
    c = features.shape[1]
    if features.shape[0] != geometry.n_points():
        raise GeometryError(f"{features.shape[0]} feature rows vs {geometry.n_points()} points")
    if plan.in_idx.size == 0:
        return Tensor(np.zeros((c, plan.h, plan.w)))
    sub = ad.take_rows(features, plan.in_idx)
    scattered = ad.scatter_mean(sub, plan.cells, plan.h * plan.w)
    filled = ad.fill_rows(scattered, plan.empty, plan.nbr_idx, plan.nbr_w)
    return ad.reshape(ad.permute(filled, (1, 0)), (c, plan.h, plan.w))


def sample_grid_at_points(grid: Tensor, geometry: FrameGeometry, scale: int) -> Tensor:
    """Bilinearly sample a (C, H_s, W_s) grid at the projected points -> (N, C).

    Samples outside the grid clamp to the border.
    """
    plan = geometry.plans[scale]
    if grid.shape[1:] != (plan.h, plan.w):
        raise GeometryError(f"grid {grid.shape} vs scale-{scale} extent {(plan.h, plan.w)}")
    return ad.bilinear_sample(grid, Tensor(plan.coords))


def sample_map_at_points(field: np.ndarray, geometry: FrameGeometry, scale: int) -> np.ndarray:
    """Sample a constant scalar field (H_s, W_s) at projected points -> (N,)."""
    return sample_grid_at_points(Tensor(np.asarray(field)[None]), geometry, scale).data[:, 0]
