"""Deterministic synthetic tri-modal scenes: textured primitives translating
rigidly in front of a static pinhole camera, rendered to image pairs,
brightness-change events, sampled LiDAR, and exact ground-truth flows.

All randomness flows from one seed; the same seed reproduces every byte.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .encoders import CameraModel
from .events import EventStream
from .rng import Rng

BACKGROUND = 0.2
LOG_FLOOR = 1e-3

EXPOSURE_PARAMS = {
    "low-exposure": {1: (0.5, 1.3), 2: (0.3, 1.5), 3: (0.15, 1.8)},
    "high-exposure": {1: (1.4, 0.8), 2: (1.8, 0.7), 3: (2.4, 0.6)},
}
SPARSE_KEEP = {1: 0.5, 2: 0.25, 3: 0.1}
DRIFT_SIGMA = {1: 0.05, 2: 0.10, 3: 0.20}
DEGRADE_KINDS = ("low-exposure", "high-exposure", "sparse-lidar", "drift-lidar")


class SceneError(ValueError):
    pass


@dataclass
class SceneObject:
    kind: str                  # "rect" or "disk"
    center: np.ndarray         # (3,) camera-frame meters at t0
    velocity: np.ndarray       # (3,) m/s, constant
    half_w: float              # rect half extents; disks use half_w as radius
    half_h: float
    cell: float                # checker cell size in meters
    shades: tuple              # two intensities in (0, 1]
    phase: tuple               # checker offset in meters

    def center_at(self, t: float) -> np.ndarray:
        return self.center + self.velocity * t

    def extents(self) -> tuple:
        if self.kind == "disk":
            return self.half_w, self.half_w
        return self.half_w, self.half_h


@dataclass
class SceneSpec:
    seed: int
    cam: CameraModel
    objects: list
    dt: float = 0.1
    substeps: int = 10
    contrast: float = 0.15
    n_points: int = 256


@dataclass
class SampleData:
    """One training instance, in memory. ``debug`` holds per-pixel/point
    owner ids for property tests and is never serialized."""

    img0: np.ndarray
    img1: np.ndarray
    events: EventStream
    points0: np.ndarray
    points1: np.ndarray
    cam: CameraModel
    gt2d: np.ndarray           # (2, H, W) pixels
    gt3d: np.ndarray           # (N, 3) meters
    manifest: dict
    debug: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# scene construction

def _object_bbox_px(obj: SceneObject, cam: CameraModel, t: float) -> tuple:
    c = obj.center_at(t)
    hw, hh = obj.extents()
    z = c[2]
    u0 = cam.fx * (c[0] - hw) / z + cam.cx
    u1 = cam.fx * (c[0] + hw) / z + cam.cx
    v0 = cam.fy * (c[1] - hh) / z + cam.cy
    v1 = cam.fy * (c[1] + hh) / z + cam.cy
    return u0, v0, u1, v1


def _swept_bbox(obj: SceneObject, cam: CameraModel, dt: float) -> tuple:
    a = _object_bbox_px(obj, cam, 0.0)
    b = _object_bbox_px(obj, cam, dt)
    return min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3])


def validate_spec(spec: SceneSpec) -> None:
    """Objects must stay fully inside the frustum over [t0, t1] and their
    swept image silhouettes must not overlap (keeps gt flow occlusion-free)."""
    cam = spec.cam
    boxes = []
    for i, obj in enumerate(spec.objects):
        if obj.center[2] <= 0 or obj.center_at(spec.dt)[2] <= 0:
            raise SceneError(f"object {i} depth not positive")
        box = _swept_bbox(obj, cam, spec.dt)
        if box[0] < 0.0 or box[1] < 0.0 or box[2] > cam.width or box[3] > cam.height:
            raise SceneError(f"object {i} exits the frustum: bbox {box}")
        boxes.append(box)
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            a, b = boxes[i], boxes[j]
            if not (a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1]):
                raise SceneError(f"objects {i} and {j} overlap in image space")


def random_scene(seed: int, height: int = 32, width: int = 32, dt: float = 0.1,
                 substeps: int = 10, contrast: float = 0.15,
                 n_points: int = 256) -> SceneSpec:
    """Draw a valid scene: 1-4 textured primitives, depths 2-6 m, 0-4 px of
    image motion each. Placement retries deterministically until valid."""
    cam = CameraModel(fx=float(width), fy=float(width),
                      cx=width / 2.0, cy=height / 2.0, height=height, width=width)
    rng = Rng(seed).spawn(101)
    dim = min(height, width)
    # object count and size scale with the frame so tiny debug frames stay valid
    k_lo, k_hi = (1, 2) if dim >= 24 else (1, 2)
    for attempt in range(64):
        k = k_lo + rng.randint(k_hi - k_lo + 1)
        objects: list[SceneObject] = []
        ok = True
        for _ in range(k):
            placed = None
            for _try in range(256):
                z0 = rng.uniform(2.0, 6.0)
                half_px = rng.uniform(0.16 * dim, 0.27 * dim)
                hw = half_px * z0 / cam.fx
                hh = (half_px * rng.uniform(0.7, 1.3)) * z0 / cam.fy
                kind = "rect" if rng.uniform() < 0.5 else "disk"
                if kind == "disk":
                    hh = hw
                mag = rng.uniform(0.0, 4.0 * dim / 32.0)
                ang = rng.uniform(0.0, 2.0 * math.pi)
                du, dv = mag * math.cos(ang), mag * math.sin(ang)
                u0 = rng.uniform(half_px + 1.0, width - half_px - 1.0)
                v0 = rng.uniform(half_px + 1.0, height - half_px - 1.0)
                vz = rng.uniform(-0.3, 0.3)
                z1 = z0 + vz * dt
                x0 = (u0 - cam.cx) * z0 / cam.fx
                y0 = (v0 - cam.cy) * z0 / cam.fy
                x1 = (u0 + du - cam.cx) * z1 / cam.fx
                y1 = (v0 + dv - cam.cy) * z1 / cam.fy
                vel = np.array([(x1 - x0) / dt, (y1 - y0) / dt, vz])
                cell_px = rng.uniform(1.8, 3.2)
                shade_a = rng.uniform(0.3, 0.95)
                shade_b = shade_a + (0.3 if shade_a < 0.6 else -0.3)
                obj = SceneObject(
                    kind=kind, center=np.array([x0, y0, z0]), velocity=vel,
                    half_w=hw, half_h=hh, cell=cell_px * z0 / cam.fx,
                    shades=(shade_a, shade_b),
                    phase=(rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)))
                try:
                    validate_spec(SceneSpec(seed, cam, objects + [obj], dt,
                                            substeps, contrast, n_points))
                except SceneError:
                    continue
                placed = obj
                break
            if placed is None:
                ok = False
                break
            objects.append(placed)
        if ok:
            return SceneSpec(seed=seed, cam=cam, objects=objects, dt=dt,
                             substeps=substeps, contrast=contrast, n_points=n_points)
        rng = rng.spawn(attempt + 7)
    raise SceneError(f"could not place a valid scene for seed {seed}")


# ---------------------------------------------------------------------------
# rendering and ground truth

def _pixel_rays(cam: CameraModel):
    cols, rows = np.meshgrid(np.arange(cam.width) + 0.5, np.arange(cam.height) + 0.5)
    return (cols - cam.cx) / cam.fx, (rows - cam.cy) / cam.fy


def render(spec: SceneSpec, t: float, with_owner: bool = False):
    """Paint objects far-to-near over the constant background."""
    cam = spec.cam
    rx, ry = _pixel_rays(cam)
    img = np.full((cam.height, cam.width), BACKGROUND)
    owner = np.full((cam.height, cam.width), -1, dtype=np.int64)
    order = sorted(range(len(spec.objects)),
                   key=lambda i: -spec.objects[i].center_at(t)[2])
    for i in order:
        obj = spec.objects[i]
        c = obj.center_at(t)
        z = c[2]
        xl = rx * z - c[0]
        yl = ry * z - c[1]
        if obj.kind == "disk":
            inside = xl * xl + yl * yl <= obj.half_w ** 2
        else:
            inside = (np.abs(xl) <= obj.half_w) & (np.abs(yl) <= obj.half_h)
        ix = np.floor((xl + obj.phase[0]) / obj.cell).astype(np.int64)
        iy = np.floor((yl + obj.phase[1]) / obj.cell).astype(np.int64)
        tex = np.where((ix + iy) % 2 == 0, obj.shades[0], obj.shades[1])
        img[inside] = tex[inside]
        owner[inside] = i
    return (img, owner) if with_owner else img


def gt_flow2d(spec: SceneSpec) -> tuple:
    """Dense (2, H, W) flow of the t0-visible surface; background zero."""
    cam = spec.cam
    rx, ry = _pixel_rays(cam)
    _, owner = render(spec, 0.0, with_owner=True)
    flow = np.zeros((2, cam.height, cam.width))
    for i, obj in enumerate(spec.objects):
        mask = owner == i
        if not mask.any():
            continue
        z0 = obj.center[2]
        x = rx[mask] * z0
        y = ry[mask] * z0
        moved = np.stack([x + obj.velocity[0] * spec.dt,
                          y + obj.velocity[1] * spec.dt,
                          np.full(x.shape, z0 + obj.velocity[2] * spec.dt)], axis=1)
        u1 = cam.fx * moved[:, 0] / moved[:, 2] + cam.cx
        v1 = cam.fy * moved[:, 1] / moved[:, 2] + cam.cy
        cols, rows = np.meshgrid(np.arange(cam.width) + 0.5, np.arange(cam.height) + 0.5)
        flow[0][mask] = u1 - cols[mask]
        flow[1][mask] = v1 - rows[mask]
    return flow, owner


def _sample_object_surface(obj: SceneObject, n: int, rng: Rng, t: float) -> np.ndarray:
    c = obj.center_at(t)
    pts = np.empty((n, 3))
    for i in range(n):
        if obj.kind == "disk":
            r = obj.half_w * math.sqrt(rng.uniform())
            a = rng.uniform(0.0, 2.0 * math.pi)
            dx, dy = r * math.cos(a), r * math.sin(a)
        else:
            dx = rng.uniform(-obj.half_w, obj.half_w)
            dy = rng.uniform(-obj.half_h, obj.half_h)
        pts[i] = (c[0] + dx, c[1] + dy, c[2])
    return pts


def sample_lidar(spec: SceneSpec, t: float, rng: Rng) -> tuple:
    """n_points cloud: object-face points plus ground-plane points (y=1 m).

    Returns (positions (N, 3), owner ids (N,), -1 for ground).
    """
    cam = spec.cam
    n_ground = max(16, int(round(0.4 * spec.n_points)))
    n_obj_total = spec.n_points - n_ground
    k = len(spec.objects)
    per = [n_obj_total // k + (1 if i < n_obj_total % k else 0) for i in range(k)]
    chunks = []
    owners = []
    for i, obj in enumerate(spec.objects):
        chunks.append(_sample_object_surface(obj, per[i], rng, t))
        owners.append(np.full(per[i], i, dtype=np.int64))
    ground = np.empty((n_ground, 3))
    half_tan = (cam.width / 2.0) / cam.fx
    for i in range(n_ground):
        z = rng.uniform(2.0, 7.0)
        x = rng.uniform(-0.9 * half_tan * z, 0.9 * half_tan * z)
        ground[i] = (x, 1.0, z)
    chunks.append(ground)
    owners.append(np.full(n_ground, -1, dtype=np.int64))
    return np.concatenate(chunks), np.concatenate(owners)


# ---------------------------------------------------------------------------
# event simulation

def simulate_events(frames: list, times: list, contrast: float,
                    height: int, width: int) -> EventStream:
    """Brightness-change events from a substep render sequence.

    Each pixel tracks a reference log-intensity; a substep moving the log
    by delta emits floor(|delta|/contrast) events of that sign, timestamps
    placed at the interpolated threshold crossings, and the reference
    advances by the emitted quanta.
    """
    ref = np.log(np.maximum(frames[0], LOG_FLOOR)).ravel()
    t_end = times[-1]
    ts, xs, ys, ps = [], [], [], []
    flat_x = np.tile(np.arange(width), height)
    flat_y = np.repeat(np.arange(height), width)
    for k in range(1, len(frames)):
        cur = np.log(np.maximum(frames[k], LOG_FLOOR)).ravel()
        delta = cur - ref
        count = np.floor(np.abs(delta) / contrast).astype(np.int64)
        active = np.nonzero(count)[0]
        if active.size:
            n = count[active]
            total = int(n.sum())
            rep = np.repeat(active, n)
            j = np.arange(total) - np.repeat(np.cumsum(n) - n, n) + 1
            frac = j * contrast / np.abs(delta)[rep]
            t = times[k - 1] + (times[k] - times[k - 1]) * frac
            t = np.where(t >= t_end, np.nextafter(t_end, times[0]), t)
            ts.append(t)
            xs.append(flat_x[rep])
            ys.append(flat_y[rep])
            ps.append(np.sign(delta)[rep].astype(np.int64))
            ref[active] += count[active] * contrast * np.sign(delta[active])
    if ts:
        t = np.concatenate(ts)
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        p = np.concatenate(ps)
        order = np.lexsort((p, x, y, t))
        t, x, y, p = t[order], x[order], y[order], p[order]
    else:
        t = np.empty(0)
        x = y = p = np.empty(0, dtype=np.int64)
    return EventStream(t, x, y, p, times[0], t_end, height, width)


# ---------------------------------------------------------------------------
# sample assembly and degradation

def generate_sample(spec: SceneSpec) -> SampleData:
    validate_spec(spec)
    cam = spec.cam
    rng = Rng(spec.seed)
    times = [spec.dt * k / spec.substeps for k in range(spec.substeps + 1)]
    frames = [render(spec, t) for t in times]
    events = simulate_events(frames, times, spec.contrast, cam.height, cam.width)
    points0, owner0 = sample_lidar(spec, 0.0, rng.spawn(11))
    points1, _ = sample_lidar(spec, spec.dt, rng.spawn(12))
    gt2d, owner2d = gt_flow2d(spec)
    gt3d = np.zeros((spec.n_points, 3))
    for i, obj in enumerate(spec.objects):
        gt3d[owner0 == i] = obj.velocity * spec.dt
    manifest = {
        "seed": spec.seed,
        "camera": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy},
        "extent": {"height": cam.height, "width": cam.width},
        "window": {"t_start": 0.0, "t_end": spec.dt},
        "n_points": spec.n_points,
        "degradations": [],
    }
    return SampleData(img0=frames[0], img1=frames[-1], events=events,
                      points0=points0, points1=points1, cam=cam,
                      gt2d=gt2d, gt3d=gt3d, manifest=manifest,
                      debug={"owner2d": owner2d, "owner3d": owner0,
                             "spec": spec})


def degrade(sample: SampleData, kind: str, severity: int, seed: int = 0) -> SampleData:
    """Apply one degradation; events and dense 2D ground truth are untouched."""
    if kind not in DEGRADE_KINDS:
        raise SceneError(f"unknown degradation kind '{kind}'")
    if severity not in (1, 2, 3):
        raise SceneError(f"severity must be 1..3, got {severity}")
    img0, img1 = sample.img0, sample.img1
    p0, p1, gt3d = sample.points0, sample.points1, sample.gt3d
    manifest = json.loads(json.dumps(sample.manifest))
    manifest["degradations"].append({"kind": kind, "severity": severity})
    rng = Rng(seed).spawn(1000 + severity)
    if kind in EXPOSURE_PARAMS:
        alpha, gamma = EXPOSURE_PARAMS[kind][severity]
        adjust = lambda im: np.clip(alpha * np.power(im, gamma), 0.0, 1.0)
        img0, img1 = adjust(img0), adjust(img1)
    elif kind == "sparse-lidar":
        keep = int(round(SPARSE_KEEP[severity] * p0.shape[0]))
        idx0 = np.array(rng.subset(p0.shape[0], keep), dtype=np.int64)
        idx1 = np.array(rng.subset(p1.shape[0], int(round(SPARSE_KEEP[severity] * p1.shape[0]))),
                        dtype=np.int64)
        p0, gt3d = p0[idx0], gt3d[idx0]
        p1 = p1[idx1]
        manifest["n_points"] = keep
    elif kind == "drift-lidar":
        sigma = DRIFT_SIGMA[severity]
        noise0 = np.array(rng.normals(p0.size)).reshape(p0.shape) * sigma
        noise1 = np.array(rng.normals(p1.size)).reshape(p1.shape) * sigma
        p0 = p0 + noise0
        p1 = p1 + noise1
    return SampleData(img0=img0, img1=img1, events=sample.events,
                      points0=p0, points1=p1, cam=sample.cam,
                      gt2d=sample.gt2d, gt3d=gt3d, manifest=manifest,
                      debug=dict(sample.debug))


# ---------------------------------------------------------------------------
# disk format

def write_pgm(path, img: np.ndarray) -> None:
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise SceneError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    data = np.frombuffer(parts[3], dtype=np.uint8, count=h * w).reshape(h, w)
    return data.astype(np.float64) / 255.0


def _write_csv(path, header: str, rows: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def save_sample(dirpath, sample: SampleData) -> None:
    from .floio import write_flo
    os.makedirs(dirpath, exist_ok=True)
    write_pgm(os.path.join(dirpath, "img0.pgm"), sample.img0)
    write_pgm(os.path.join(dirpath, "img1.pgm"), sample.img1)
    ev = sample.events
    with open(os.path.join(dirpath, "events.csv"), "w", encoding="utf-8") as fh:
        fh.write("t,x,y,p\n")
        for i in range(len(ev)):
            fh.write(f"{float(ev.t[i])!r},{int(ev.x[i])},{int(ev.y[i])},{int(ev.p[i])}\n")
    _write_csv(os.path.join(dirpath, "points0.csv"), "x,y,z", sample.points0)
    _write_csv(os.path.join(dirpath, "points1.csv"), "x,y,z", sample.points1)
    write_flo(os.path.join(dirpath, "flow2d_gt.flo"), sample.gt2d)
    _write_csv(os.path.join(dirpath, "flow3d_gt.csv"), "dx,dy,dz", sample.gt3d)
    with open(os.path.join(dirpath, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(sample.manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _read_csv(path, expect: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != expect:
            raise SceneError(f"{path}: header '{header}' != '{expect}'")
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    return np.array(rows) if rows else np.empty((0, len(expect.split(","))))


def load_sample(dirpath) -> SampleData:
    from .floio import read_flo
    with open(os.path.join(dirpath, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    cm = manifest["camera"]
    ex = manifest["extent"]
    cam = CameraModel(fx=cm["fx"], fy=cm["fy"], cx=cm["cx"], cy=cm["cy"],
                      height=ex["height"], width=ex["width"])
    img0 = read_pgm(os.path.join(dirpath, "img0.pgm"))
    img1 = read_pgm(os.path.join(dirpath, "img1.pgm"))
    evrows = _read_csv(os.path.join(dirpath, "events.csv"), "t,x,y,p")
    win = manifest["window"]
    events = EventStream(
        evrows[:, 0], evrows[:, 1].astype(np.int64), evrows[:, 2].astype(np.int64),
        evrows[:, 3].astype(np.int64), win["t_start"], win["t_end"],
        ex["height"], ex["width"])
    points0 = _read_csv(os.path.join(dirpath, "points0.csv"), "x,y,z")
    points1 = _read_csv(os.path.join(dirpath, "points1.csv"), "x,y,z")
    gt2d = read_flo(os.path.join(dirpath, "flow2d_gt.flo"))
    gt3d = _read_csv(os.path.join(dirpath, "flow3d_gt.csv"), "dx,dy,dz")
    return SampleData(img0=img0, img1=img1, events=events, points0=points0,
                      points1=points1, cam=cam, gt2d=gt2d, gt3d=gt3d,
                      manifest=manifest)


def write_dataset(dirpath, samples: list, names: list | None = None) -> None:
    os.makedirs(dirpath, exist_ok=True)
    names = names or [f"sample_{i:05d}" for i in range(len(samples))]
    for name, sample in zip(names, samples):
        save_sample(os.path.join(dirpath, name), sample)
    with open(os.path.join(dirpath, "index.json"), "w", encoding="utf-8") as fh:
        json.dump({"samples": names}, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_dataset(dirpath) -> list:
    with open(os.path.join(dirpath, "index.json"), "r", encoding="utf-8") as fh:
        index = json.load(fh)
    return [load_sample(os.path.join(dirpath, name)) for name in index["samples"]]
