"""Plain-format readers/writers: PFM, PPM (P6), PGM (P5), pose CSV, canonical JSON.

Everything is byte-deterministic: float CSV cells use repr (shortest
round-trip), PFM is little-endian float32 with bottom-up rows per the netpbm
convention, and JSON is dumped with sorted keys.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import ConfigError
from .geometry import Se3Pose


def write_pfm(path, arr):
    """Grayscale PFM: float32 little-endian, rows stored bottom-to-top."""
    a = np.asarray(arr, dtype=np.float32)
    if a.ndim != 2:
        raise ConfigError(f"PFM writer expects (H, W), got {a.shape}")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(a[::-1], dtype="<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"Pf", b"PF"):
        raise ConfigError(f"{path}: not a PFM file")
    if parts[0] == b"PF":
        raise ConfigError(f"{path}: color PFM not supported")
    w, h = (int(x) for x in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    a = np.frombuffer(parts[3], dtype=dtype, count=h * w).reshape(h, w)
    return a[::-1].astype(np.float64)


def _read_pnm_header(data, magic, path):
    # header tokens: magic, width, height, maxval; comments not emitted by us
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != magic:
        raise ConfigError(f"{path}: expected {magic.decode()} file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ConfigError(f"{path}: only maxval 255 supported")
    return w, h, pos


def write_ppm(path, image):
    """Binary P6 from float (H, W, 3) in [0, 1] or uint8."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ConfigError(f"PPM writer expects (H, W, 3), got {img.shape}")
    if img.dtype != np.uint8:
        img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_ppm(path):
    """Returns float64 (H, W, 3) in [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    w, h, pos = _read_pnm_header(data, b"P6", path)
    img = np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=pos)
    return img.reshape(h, w, 3).astype(np.float64) / 255.0


def write_pgm(path, mask):
    """Binary P5; boolean/float masks are written as 0/255."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ConfigError(f"PGM writer expects (H, W), got {m.shape}")
    if m.dtype != np.uint8:
        m = (np.asarray(m, dtype=bool) * np.uint8(255))
    h, w = m.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(m.tobytes())


def read_pgm(path):
    """Returns a boolean (H, W) mask (nonzero bytes are True)."""
    with open(path, "rb") as f:
        data = f.read()
    w, h, pos = _read_pnm_header(data, b"P5", path)
    m = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=pos)
    return m.reshape(h, w) > 0


POSE_CSV_HEADER = "frame,tx,ty,tz,qw,qx,qy,qz"


def format_float(x):
    """Shortest round-trip decimal representation of a float."""
    return repr(float(x))


def pose_csv_lines(frames, poses):
    lines = [POSE_CSV_HEADER]
    for frame, pose in zip(frames, poses):
        q = pose.to_quaternion()
        t = pose.translation
        cells = [str(int(frame))] + [format_float(v) for v in (*t, *q)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_pose_csv(path, frames, poses):
    """Trajectory CSV: frame, tx, ty, tz, qw, qx, qy, qz (unit quaternion)."""
    with open(path, "w", encoding="ascii") as f:
        f.write(pose_csv_lines(frames, poses))


def read_pose_csv(path):
    """Returns (frames list, poses list)."""
    with open(path, encoding="ascii") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != POSE_CSV_HEADER:
        raise ConfigError(f"{path}: bad pose CSV header")
    frames, poses = [], []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != 8:
            raise ConfigError(f"{path}: bad pose CSV row: {ln!r}")
        frames.append(int(cells[0]))
        t = np.array([float(c) for c in cells[1:4]])
        q = np.array([float(c) for c in cells[4:8]])
        poses.append(Se3Pose.from_quaternion(q, t))
    return frames, poses


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        f.write(canonical_json(obj))


def read_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def config_hash(obj):
    """sha256 of the canonical JSON dump."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def write_csv(path, header, rows):
    """CSV with repr-formatted floats (byte-deterministic)."""
    with open(path, "w", encoding="ascii") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for v in row:
                if isinstance(v, str):
                    cells.append(v)
                elif isinstance(v, (int, np.integer)):
                    cells.append(str(int(v)))
                else:
                    cells.append(format_float(v))
            f.write(",".join(cells) + "\n")
