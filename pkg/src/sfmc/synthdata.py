"""Deterministic synthetic dynamic-scene generator.

Scenes are a textured ground plane, a background wall and axis-aligned boxes;
dynamic boxes translate with constant 3D velocity (optionally locked to the
camera velocity to reproduce the colinear-motion degeneracy).  Depth comes
from closed-form ray intersections, so ground truth is exact and the
multi-view consistency of static geometry can be asserted to float precision.

Lidar-style supervision is emulated by horizontal row subsampling plus extra
dropout and a top cutoff on dynamic objects, reproducing the
missing-supervision pathology on moving objects.

World frame: x right, y down, z forward; cameras translate with identity
rotation, poses are world-to-camera.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidConfig, RefusingOverwrite
from .fileio import (
    config_hash,
    read_pfm,
    read_pgm,
    read_ppm,
    read_pose_csv,
    write_json,
    read_json,
    write_pfm,
    write_pgm,
    write_pose_csv,
    write_ppm,
)
from .geometry import CameraIntrinsics, Se3Pose

TEST_SEED_OFFSET = 7919  # train/test trajectories draw from disjoint seeds


def worker_count():
    """Worker-thread cap: SFMC_THREADS env var, defaulting to available cores."""
    env = os.environ.get("SFMC_THREADS", "")
    cores = os.cpu_count() or 1
    try:
        return max(1, min(int(env), cores)) if env else cores
    except ValueError:
        raise ConfigError(f"SFMC_THREADS must be an integer, got {env!r}")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; nonzero velocity (or colinear flag) makes it dynamic."""

    center: tuple
    size: tuple
    velocity: tuple = (0.0, 0.0, 0.0)
    colinear: bool = False

    def moving(self):
        return self.colinear or any(v != 0.0 for v in self.velocity)

    def to_dict(self):
        return {
            "center": list(self.center),
            "size": list(self.size),
            "velocity": list(self.velocity),
            "colinear": self.colinear,
        }

    @staticmethod
    def from_dict(d):
        return Box(
            tuple(d["center"]), tuple(d["size"]),
            tuple(d.get("velocity", (0.0, 0.0, 0.0))), bool(d.get("colinear", False)),
        )


@dataclass(frozen=True)
class SupervisionSpec:
    """Lidar emulation: keep every Nth row; on dynamic pixels drop extra rows
    and cut the top fraction of each object."""

    row_period: int = 4
    dynamic_dropout: float = 0.9
    top_cutoff: float = 0.4

    def to_dict(self):
        return {
            "row_period": self.row_period,
            "dynamic_dropout": self.dynamic_dropout,
            "top_cutoff": self.top_cutoff,
        }

    @staticmethod
    def from_dict(d):
        s = SupervisionSpec()
        return SupervisionSpec(
            int(d.get("row_period", s.row_period)),
            float(d.get("dynamic_dropout", s.dynamic_dropout)),
            float(d.get("top_cutoff", s.top_cutoff)),
        )


@dataclass(frozen=True)
class ProceduralBoxes:
    """Sampled box layout (per-split seeds give disjoint scene geometry).

    Static boxes line the camera path with a lateral clearance so the camera
    never enters them; colinear boxes lead the camera at a constant offset
    (image-stationary, the degenerate case); lateral boxes cross the scene
    ahead of the trajectory's end.
    """

    n_static: int = 7
    n_colinear: int = 1
    n_lateral: int = 1
    clearance_min: float = 0.6
    clearance_max: float = 3.5
    size_min: float = 1.0
    size_max: float = 3.0
    lateral_speed: float = 0.25
    colinear_lead_min: float = 8.0
    colinear_lead_max: float = 13.0

    def to_dict(self):
        return {
            "n_static": self.n_static, "n_colinear": self.n_colinear,
            "n_lateral": self.n_lateral,
            "clearance_min": self.clearance_min, "clearance_max": self.clearance_max,
            "size_min": self.size_min, "size_max": self.size_max,
            "lateral_speed": self.lateral_speed,
            "colinear_lead_min": self.colinear_lead_min,
            "colinear_lead_max": self.colinear_lead_max,
        }

    @staticmethod
    def from_dict(d):
        p = ProceduralBoxes()
        return ProceduralBoxes(**{k: type(getattr(p, k))(v) for k, v in d.items()})


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    width: int = 96
    height: int = 64
    fx: float = 115.0
    fy: float = 115.0
    cx: float = None  # defaults to the image center
    cy: float = None
    frames: int = 9
    cam_start: tuple = (0.0, -0.4, 0.0)
    cam_velocity: tuple = (0.12, 0.0, 0.4)
    cam_jitter: float = 0.0
    ground_y: float = 1.6
    wall_z: float = 38.0
    static_boxes: tuple = ()
    dynamic_boxes: tuple = ()
    procedural: ProceduralBoxes = None
    noise_octaves: int = 3
    noise_scale: float = 0.7  # base lattice period in meters
    supervision: SupervisionSpec = field(default_factory=SupervisionSpec)

    def intrinsics(self):
        cx = (self.width - 1) / 2.0 if self.cx is None else self.cx
        cy = (self.height - 1) / 2.0 if self.cy is None else self.cy
        return CameraIntrinsics(self.fx, self.fy, cx, cy, self.width, self.height)

    def to_dict(self):
        return {
            "seed": self.seed, "width": self.width, "height": self.height,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "frames": self.frames,
            "cam_start": list(self.cam_start),
            "cam_velocity": list(self.cam_velocity),
            "cam_jitter": self.cam_jitter,
            "ground_y": self.ground_y, "wall_z": self.wall_z,
            "static_boxes": [b.to_dict() for b in self.static_boxes],
            "dynamic_boxes": [b.to_dict() for b in self.dynamic_boxes],
            "procedural": None if self.procedural is None else self.procedural.to_dict(),
            "noise_octaves": self.noise_octaves, "noise_scale": self.noise_scale,
            "supervision": self.supervision.to_dict(),
        }

    @staticmethod
    def from_dict(d):
        base = SceneConfig()
        return SceneConfig(
            seed=int(d.get("seed", base.seed)),
            width=int(d.get("width", base.width)),
            height=int(d.get("height", base.height)),
            fx=float(d.get("fx", base.fx)),
            fy=float(d.get("fy", base.fy)),
            cx=None if d.get("cx") is None else float(d["cx"]),
            cy=None if d.get("cy") is None else float(d["cy"]),
            frames=int(d.get("frames", base.frames)),
            cam_start=tuple(d.get("cam_start", base.cam_start)),
            cam_velocity=tuple(d.get("cam_velocity", base.cam_velocity)),
            cam_jitter=float(d.get("cam_jitter", base.cam_jitter)),
            ground_y=None if d.get("ground_y", base.ground_y) is None else float(
                d.get("ground_y", base.ground_y)
            ),
            wall_z=None if d.get("wall_z", base.wall_z) is None else float(
                d.get("wall_z", base.wall_z)
            ),
            static_boxes=tuple(Box.from_dict(b) for b in d.get("static_boxes", ())),
            dynamic_boxes=tuple(Box.from_dict(b) for b in d.get("dynamic_boxes", ())),
            procedural=None if d.get("procedural") is None
            else ProceduralBoxes.from_dict(d["procedural"]),
            noise_octaves=int(d.get("noise_octaves", base.noise_octaves)),
            noise_scale=float(d.get("noise_scale", base.noise_scale)),
            supervision=SupervisionSpec.from_dict(d.get("supervision", {})),
        )


@dataclass
class SceneSample:
    """One rendered timestep."""

    frame: int
    image: np.ndarray            # (3, H, W) float in [0, 1]
    depth: np.ndarray            # (H, W) meters
    pose: Se3Pose                # world -> camera
    dynamic_mask: np.ndarray     # (H, W) bool, True on moving objects
    supervision_mask: np.ndarray  # (H, W) bool, True where ground truth is kept
    sample_id: str = ""


# -- procedural value noise -------------------------------------------------------


_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)


def _hash_lattice(ix, iy, iz, seed):
    """Integer lattice -> uniform [0, 1); deterministic splitmix-style mixing."""
    with np.errstate(over="ignore"):
        h = (
            np.asarray(ix).astype(np.uint64) * _M1
            ^ np.asarray(iy).astype(np.uint64) * _M2
            ^ np.asarray(iz).astype(np.uint64) * _M3
            ^ np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        )
        h = (h ^ (h >> np.uint64(30))) * _M2
        h = (h ^ (h >> np.uint64(27))) * _M3
        h = h ^ (h >> np.uint64(31))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def value_noise(points, seed, octaves=3, base_period=1.0):
    """Multi-octave trilinear value noise in [0, 1] at (..., 3) world points."""
    p = np.asarray(points, dtype=np.float64)
    total = np.zeros(p.shape[:-1])
    norm = 0.0
    amp = 1.0
    freq = 1.0 / base_period
    for octave in range(octaves):
        q = p * freq
        i0 = np.floor(q).astype(np.int64)
        f = _fade(q - i0)
        acc = np.zeros(p.shape[:-1])
        for dz in (0, 1):
            for dy in (0, 1):
                for dx in (0, 1):
                    corner = _hash_lattice(
                        i0[..., 0] + dx, i0[..., 1] + dy, i0[..., 2] + dz,
                        seed * 1000003 + octave,
                    )
                    wx = f[..., 0] if dx else 1.0 - f[..., 0]
                    wy = f[..., 1] if dy else 1.0 - f[..., 1]
                    wz = f[..., 2] if dz else 1.0 - f[..., 2]
                    acc += corner * wx * wy * wz
        total += amp * acc
        norm += amp
        amp *= 0.5
        freq *= 2.0
    return total / norm


def _object_color(index, seed):
    rgb = np.array([
        _hash_lattice(np.asarray(index + 1), np.asarray(7), np.asarray(c), seed + 17)
        for c in range(3)
    ])
    return 0.35 + 0.65 * rgb


# -- ray casting -------------------------------------------------------------------


def camera_position(config, t):
    p = np.asarray(config.cam_start, dtype=np.float64) + t * np.asarray(
        config.cam_velocity, dtype=np.float64
    )
    if config.cam_jitter > 0:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 101, t]))
        p = p + rng.normal(0.0, config.cam_jitter, 3)
    return p


def camera_pose(config, t):
    """World-to-camera pose of frame t (identity rotation trajectories)."""
    return Se3Pose(np.eye(3), -camera_position(config, t))


def _boxes(config):
    """(box, displacement_velocity) pairs with the colinear flag resolved."""
    cam_v = np.asarray(config.cam_velocity, dtype=np.float64)
    out = []
    for b in tuple(config.static_boxes) + tuple(config.dynamic_boxes):
        v = cam_v if b.colinear else np.asarray(b.velocity, dtype=np.float64)
        out.append((b, v))
    return out


def _trace(config, t, dirs):
    """Nearest-hit depth and object id for (N, 3) ray directions with d_z = 1.

    Returns (depth (N,), obj (N,) int, hitpoint_local (N, 3) texture coords).
    Object ids: 0 ground, 1 wall, 2+i boxes; -1 means no hit.
    """
    origin = camera_position(config, t)
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    obj = np.full(n, -1, dtype=np.int64)

    if config.ground_y is not None:
        if origin[1] >= config.ground_y:
            raise InvalidConfig(f"camera at y={origin[1]} is below the ground plane")
        dy = dirs[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(dy > 1e-12, (config.ground_y - origin[1]) / dy, np.inf)
        hit = s < best
        best = np.where(hit, s, best)
        obj = np.where(hit, 0, obj)

    if config.wall_z is not None:
        if origin[2] >= config.wall_z:
            raise InvalidConfig(f"camera at z={origin[2]} is behind the wall")
        s = np.full(n, config.wall_z - origin[2])  # d_z = 1
        hit = s < best
        best = np.where(hit, s, best)
        obj = np.where(hit, 1, obj)

    for i, (box, vel) in enumerate(_boxes(config)):
        center = np.asarray(box.center, dtype=np.float64) + t * vel
        half = np.asarray(box.size, dtype=np.float64) / 2.0
        lo, hi = center - half, center + half
        if np.all(origin > lo) and np.all(origin < hi):
            raise InvalidConfig(f"camera inside box {i} at frame {t}")
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (lo[None] - origin[None]) * inv
            t2 = (hi[None] - origin[None]) * inv
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        s = np.where((tmax >= tmin) & (tmin > 1e-9), tmin, np.inf)
        hit = s < best
        best = np.where(hit, s, best)
        obj = np.where(hit, 2 + i, obj)

    points = origin[None] + best[:, None] * dirs
    # texture anchors to the object: subtract each box's displacement
    local = points.copy()
    for i, (box, vel) in enumerate(_boxes(config)):
        on = obj == 2 + i
        if on.any():
            local[on] -= t * vel
    return best, obj, local


def _ray_dirs(config, coords):
    k = config.intrinsics()
    u, v = coords[..., 0], coords[..., 1]
    return np.stack(
        [(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1
    )


def raycast(config, t, coords):
    """Depth/object query at continuous pixel coords (..., 2).

    Depth equals the ray parameter because directions are normalized to
    d_z = 1, i.e. it is the camera-frame z of the hit point.
    """
    c = np.asarray(coords, dtype=np.float64)
    dirs = _ray_dirs(config, c).reshape(-1, 3)
    depth, obj, local = _trace(config, t, dirs)
    lead = c.shape[:-1]
    return depth.reshape(lead), obj.reshape(lead), local.reshape(lead + (3,))


def _shade(config, obj, local):
    """Per-pixel RGB from object base colors modulated by value noise."""
    flat_obj = obj.reshape(-1)
    flat_local = local.reshape(-1, 3)
    n1 = value_noise(flat_local, config.seed, config.noise_octaves, config.noise_scale)
    n2 = value_noise(
        flat_local + 31.7, config.seed + 7, config.noise_octaves, config.noise_scale
    )
    rgb = np.zeros((flat_obj.size, 3))
    for idx in np.unique(flat_obj):
        if idx < 0:
            continue
        on = flat_obj == idx
        base = _object_color(int(idx), config.seed)
        rgb[on] = base[None] * (0.25 + 0.75 * n1[on, None])
    rgb += 0.15 * (n2[:, None] - 0.5)
    return np.clip(rgb, 0.0, 1.0).reshape(obj.shape + (3,))


def _supervision_mask(config, t, dynamic, obj):
    """Row-subsampled mask with extra dropout and top cutoff on dynamic pixels."""
    spec = config.supervision
    h, w = dynamic.shape
    mask = np.zeros((h, w), dtype=bool)
    mask[:: spec.row_period] = True

    if dynamic.any():
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 102, t]))
        keep = rng.random((h, w)) >= spec.dynamic_dropout
        mask[dynamic] &= keep[dynamic]
        # cut the top rows of each dynamic object's image extent
        for idx in np.unique(obj[dynamic]):
            on = obj == idx
            rows = np.nonzero(on.any(axis=1))[0]
            span = rows[-1] - rows[0] + 1
            cut_below = rows[0] + int(np.ceil(spec.top_cutoff * span))
            cut = on & (np.arange(h)[:, None] < cut_below)
            mask[cut] = False
    return mask


def render(config, t):
    """Render one timestep: image, exact depth, pose and both masks."""
    if not 0 <= t < config.frames:
        raise ConfigError(f"frame {t} outside trajectory of length {config.frames}")
    k = config.intrinsics()
    u, v = np.meshgrid(np.arange(k.width, dtype=np.float64),
                       np.arange(k.height, dtype=np.float64))
    coords = np.stack([u, v], axis=-1)
    depth, obj, local = raycast(config, t, coords)
    if not np.all(np.isfinite(depth)):
        raise InvalidConfig("scene is not closed: some rays hit nothing")
    moving_ids = {
        2 + i for i, (b, _) in enumerate(_boxes(config)) if b.moving()
    }
    dynamic = np.isin(obj, sorted(moving_ids)) if moving_ids else np.zeros_like(obj, bool)
    image = _shade(config, obj, local)
    sup = _supervision_mask(config, t, dynamic, obj)
    return SceneSample(
        frame=t,
        image=image.transpose(2, 0, 1),
        depth=depth,
        pose=camera_pose(config, t),
        dynamic_mask=dynamic,
        supervision_mask=sup,
        sample_id=f"{t:06d}",
    )


def realize_config(config, seed):
    """Concrete per-split config: sample procedural boxes with this seed.

    Procedural mode assumes a forward-dominant trajectory (cam_velocity z > 0).
    """
    cfg = replace(config, seed=seed)
    if config.procedural is None:
        return cfg
    p = config.procedural
    rng = np.random.default_rng(np.random.SeedSequence([seed, 103]))
    start = np.asarray(config.cam_start, dtype=np.float64)
    vel = np.asarray(config.cam_velocity, dtype=np.float64)
    if vel[2] <= 0:
        raise ConfigError("procedural box sampling needs forward camera motion")
    ground = config.ground_y if config.ground_y is not None else 1.6
    wall = config.wall_z if config.wall_z is not None else 1e9
    end_z = start[2] + vel[2] * (config.frames - 1)

    def path_x(z):
        return start[0] + vel[0] * (z - start[2]) / vel[2]

    def sample_size():
        return rng.uniform(p.size_min, p.size_max, 3)

    static = []
    for _ in range(p.n_static):
        size = sample_size()
        zc = rng.uniform(start[2] + 4.0, wall - 2.0 - size[2])
        side = 1.0 if rng.random() < 0.5 else -1.0
        # clearance from the camera path at this depth: never driven through
        margin = size[0] / 2.0 + rng.uniform(p.clearance_min, p.clearance_max)
        margin += 6.0 * config.cam_jitter
        xc = path_x(zc) + side * margin
        static.append(Box((xc, ground - size[1] / 2.0, zc), tuple(size)))

    dynamic = []
    for _ in range(p.n_colinear):
        size = sample_size()
        lead = rng.uniform(p.colinear_lead_min, p.colinear_lead_max)
        zc = start[2] + lead
        xc = path_x(zc) + rng.uniform(-1.2, 1.2)
        dynamic.append(Box((xc, ground - size[1] / 2.0, zc), tuple(size),
                           colinear=True))
    for _ in range(p.n_lateral):
        size = sample_size()
        # crossing boxes stay beyond the trajectory end so paths never meet
        zc = rng.uniform(end_z + 4.0, max(end_z + 4.0, wall - 4.0) + 4.0)
        xc = path_x(zc) + rng.uniform(-2.0, 2.0)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        dynamic.append(Box((xc, ground - size[1] / 2.0, zc), tuple(size),
                           velocity=(sign * p.lateral_speed, 0.0, 0.0)))
    return replace(cfg, static_boxes=tuple(static), dynamic_boxes=tuple(dynamic),
                   procedural=None)


# -- dataset generation and loading ------------------------------------------------


def check_multiview_consistency(config, t_i, t_j, n_samples=400, rng_seed=0):
    """Static pixels must satisfy the rigid warp to 1e-6 m; dynamic must not.

    Returns (max static depth error, list of |violations| on dynamic pixels).
    Occluded static samples are excluded by a z-test.
    """
    rng = np.random.default_rng(rng_seed)
    k = config.intrinsics()
    coords = np.stack([
        rng.uniform(0, k.width - 1, n_samples),
        rng.uniform(0, k.height - 1, n_samples),
    ], axis=-1)
    z_i, obj_i, _ = raycast(config, t_i, coords)
    p_i = camera_position(config, t_i)
    p_j = camera_position(config, t_j)
    dirs = _ray_dirs(config, coords)
    world = p_i[None] + z_i[:, None] * dirs
    cam_j = world - p_j[None]
    z_expect = cam_j[:, 2]
    uv_j = np.stack([
        k.fx * cam_j[:, 0] / z_expect + k.cx,
        k.fy * cam_j[:, 1] / z_expect + k.cy,
    ], axis=-1)
    in_view = (
        (z_expect > 0.1)
        & (uv_j[:, 0] >= 0) & (uv_j[:, 0] <= k.width - 1)
        & (uv_j[:, 1] >= 0) & (uv_j[:, 1] <= k.height - 1)
    )
    z_j, _, _ = raycast(config, t_j, uv_j)

    moving_ids = {2 + i for i, (b, _) in enumerate(_boxes(config)) if b.moving()}
    is_dyn = np.isin(obj_i, sorted(moving_ids)) if moving_ids else np.zeros_like(obj_i, bool)

    err = np.abs(z_j - z_expect)
    occluded = z_j < z_expect - 1e-4
    static_sel = in_view & ~is_dyn & ~occluded
    static_err = float(err[static_sel].max()) if static_sel.any() else 0.0
    dyn_sel = in_view & is_dyn
    return static_err, err[dyn_sel]


def assert_scene_valid(config, separation=1e-3):
    """Generator self-check on the first frame pair: static geometry is
    multi-view consistent and moving objects measurably violate it."""
    if config.frames < 2:
        return
    static_err, dyn_viol = check_multiview_consistency(config, 0, config.frames - 1)
    if static_err > 1e-6:
        raise InvalidConfig(f"static multi-view error {static_err:.3e} exceeds 1e-6")
    if dyn_viol.size >= 20 and np.quantile(dyn_viol, 0.9) < separation:
        raise InvalidConfig(
            f"dynamic objects too consistent (q90 violation "
            f"{np.quantile(dyn_viol, 0.9):.3e} < {separation})"
        )


def _write_sample(out_dir, sample):
    d = Path(out_dir) / sample.sample_id
    d.mkdir(parents=True, exist_ok=True)
    write_ppm(d / "image.ppm", sample.image.transpose(1, 2, 0))
    write_pfm(d / "depth.pfm", sample.depth)
    write_pgm(d / "dynamic_mask.pgm", sample.dynamic_mask)
    write_pgm(d / "supervision_mask.pgm", sample.supervision_mask)
    write_pose_csv(d / "pose.csv", [sample.frame], [sample.pose])


def generate_split(config, n_train, n_test, out_dir, force=False):
    """Render train/test trajectories (disjoint seeds) into a dataset directory.

    Layout: NNNNNN/{image.ppm, depth.pfm, dynamic_mask.pgm,
    supervision_mask.pgm, pose.csv} plus manifest.json.  Returns the manifest
    path.
    """
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise RefusingOverwrite(f"{out} exists and is not empty (use force)")
    out.mkdir(parents=True, exist_ok=True)

    splits = []
    if n_train:
        splits.append(("train", replace(realize_config(config, config.seed),
                                        frames=n_train)))
    if n_test:
        splits.append(("test", replace(
            realize_config(config, config.seed + TEST_SEED_OFFSET), frames=n_test)))

    samples_meta = []
    split_ids = {"train": [], "test": []}
    next_id = 0
    for split_name, cfg in splits:
        assert_scene_valid(cfg)
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            rendered = list(pool.map(lambda t: render(cfg, t), range(cfg.frames)))
        for t, sample in enumerate(rendered):
            sample.sample_id = f"{next_id:06d}"
            _write_sample(out, sample)
            samples_meta.append({
                "id": sample.sample_id, "split": split_name, "frame": t,
            })
            split_ids[split_name].append(sample.sample_id)
            next_id += 1

    cfg_dict = config.to_dict()
    manifest = {
        "samples": samples_meta,
        "splits": split_ids,
        "intrinsics": config.intrinsics().to_dict(),
        "config": cfg_dict,
        "config_hash": config_hash(cfg_dict),
        "n_train": n_train,
        "n_test": n_test,
    }
    manifest_path = out / "manifest.json"
    write_json(manifest_path, manifest)
    return manifest_path


def load_split(manifest_path, split="train"):
    """Read one split back: (samples, intrinsics)."""
    manifest = read_json(manifest_path)
    root = Path(manifest_path).parent
    k = CameraIntrinsics.from_dict(manifest["intrinsics"])
    samples = []
    for meta in manifest["samples"]:
        if split != "all" and meta["split"] != split:
            continue
        d = root / meta["id"]
        frames, poses = read_pose_csv(d / "pose.csv")
        samples.append(SceneSample(
            frame=meta["frame"],
            image=read_ppm(d / "image.ppm").transpose(2, 0, 1),
            depth=read_pfm(d / "depth.pfm"),
            pose=poses[0],
            dynamic_mask=read_pgm(d / "dynamic_mask.pgm"),
            supervision_mask=read_pgm(d / "supervision_mask.pgm"),
            sample_id=meta["id"],
        ))
    return samples, k
