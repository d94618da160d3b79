"""Middlebury .flo interchange and color-wheel flow rendering to binary PPM."""

from __future__ import annotations

import struct

import numpy as np

FLO_MAGIC = 202021.25


class FloError(ValueError):
    pass


def write_flo(path, flow: np.ndarray) -> None:
    """(2, H, W) float flow -> little-endian .flo (float32 interleaved u, v)."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise FloError(f"expected (2, H, W) flow, got {flow.shape}")
    _, h, w = flow.shape
    inter = np.empty((h, w, 2), dtype="<f4")
    inter[:, :, 0] = flow[0]
    inter[:, :, 1] = flow[1]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_MAGIC))
        fh.write(struct.pack("<ii", w, h))
        fh.write(inter.tobytes())


def read_flo(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise FloError(f"{path}: truncated header at byte offset {len(blob)}")
    (magic,) = struct.unpack_from("<f", blob, 0)
    if magic != np.float32(FLO_MAGIC):
        raise FloError(f"{path}: bad magic {magic} at byte offset 0")
    if len(blob) < 12:
        raise FloError(f"{path}: truncated dimensions at byte offset {len(blob)}")
    w, h = struct.unpack_from("<ii", blob, 4)
    if w <= 0 or h <= 0:
        raise FloError(f"{path}: bad extents {w}x{h} at byte offset 4")
    need = 12 + 8 * h * w
    if len(blob) < need:
        raise FloError(f"{path}: truncated payload at byte offset {len(blob)} (need {need})")
    inter = np.frombuffer(blob, dtype="<f4", count=2 * h * w, offset=12).reshape(h, w, 2)
    return np.stack([inter[:, :, 0], inter[:, :, 1]]).astype(np.float64)


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized HSV->RGB, h in [0, 1)."""
    i = np.floor(h * 6.0).astype(np.int64) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def viz_flow(flow: np.ndarray) -> np.ndarray:
    """Color-wheel rendering: hue from the flow angle, saturation scaled by
    magnitude over the field maximum (1 if all zero). Returns (H, W, 3) uint8;
    zero flow renders white."""
    flow = np.asarray(flow, dtype=np.float64)
    u, v = flow[0], flow[1]
    mag = np.sqrt(u * u + v * v)
    peak = mag.max() if mag.max() > 0 else 1.0
    hue = (np.arctan2(v, u) / (2.0 * np.pi)) % 1.0
    sat = mag / peak
    rgb = _hsv_to_rgb(hue, sat, np.ones_like(sat))
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())
