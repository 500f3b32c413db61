"""Pinhole camera, SE3 poses with exp/log maps, reprojection and bilinear sampling.

Coordinate conventions (fixed once, everything else derives from them):

* pixel (0, 0) is the *center* of the top-left pixel; u runs along width;
* camera frame is x-right, y-down, z-forward; depth is the camera-frame z;
* poses map world coordinates to camera coordinates, so the relative motion
  from view i to view j is ``g_j  g_i^-1``;
* twist vectors are ordered (v, w): translational part first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NearSingularRotation, NonPositiveDepth

DEPTH_EPS = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.width < 4 or self.height < 4:
            raise ConfigError(f"image size must be at least 4x4, got {self.width}x{self.height}")

    def downscale(self, k):
        """Intrinsics of the image downscaled by integer factor k."""
        if self.width % k or self.height % k:
            raise ConfigError(f"size {self.width}x{self.height} not divisible by {k}")
        return CameraIntrinsics(
            self.fx / k, self.fy / k, self.cx / k, self.cy / k,
            self.width // k, self.height // k,
        )

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @staticmethod
    def from_dict(d):
        return CameraIntrinsics(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]),
        )


def hat(w):
    """Skew-symmetric matrix of a 3-vector."""
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


def vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


class Se3Pose:
    """Rigid body motion: x_cam = R @ x_world + t."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation, check=True):
        self.rotation = np.asarray(rotation, dtype=np.float64)
        self.translation = np.asarray(translation, dtype=np.float64)
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ConfigError(
                f"pose needs 3x3 rotation and 3-vector, got {self.rotation.shape}, "
                f"{self.translation.shape}"
            )
        if check:
            err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
            if err > 1e-9 or abs(np.linalg.det(self.rotation) - 1.0) > 1e-9:
                raise ConfigError(f"rotation not orthonormal within 1e-9 (err={err:.3e})")

    @staticmethod
    def identity():
        return Se3Pose(np.eye(3), np.zeros(3), check=False)

    def compose(self, other):
        """self after other: (self * other)(x) = self(other(x))."""
        return Se3Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            check=False,
        )

    def inverse(self):
        rt = self.rotation.T
        return Se3Pose(rt, -rt @ self.translation, check=False)

    def transform(self, points):
        """Apply to (..., 3) points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def rotation_angle(self):
        c = np.clip((np.trace(self.rotation) - 1.0) / 2.0, -1.0, 1.0)
        return float(np.arccos(c))

    def is_identity(self):
        return (self.rotation == np.eye(3)).all() and (self.translation == 0.0).all()

    def almost_equal(self, other, tol=1e-9):
        return (
            np.abs(self.rotation - other.rotation).max() <= tol
            and np.abs(self.translation - other.translation).max() <= tol
        )

    def to_quaternion(self):
        """Unit quaternion (qw, qx, qy, qz) with qw >= 0 (canonical sign)."""
        r = self.rotation
        t = np.trace(r)
        if t > 0:
            s = np.sqrt(t + 1.0) * 2
            q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                          (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
        else:
            i = int(np.argmax(np.diag(r)))
            if i == 0:
                s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
                q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s,
                              (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
            elif i == 1:
                s = np.sqrt(1.0 - r[0, 0] + r[1, 1] - r[2, 2]) * 2
                q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
                              0.25 * s, (r[1, 2] + r[2, 1]) / s])
            else:
                s = np.sqrt(1.0 - r[0, 0] - r[1, 1] + r[2, 2]) * 2
                q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                              (r[1, 2] + r[2, 1]) / s, 0.25 * s])
        q /= np.linalg.norm(q)
        if q[0] < 0:
            q = -q
        return q

    @staticmethod
    def from_quaternion(q, translation):
        qw, qx, qy, qz = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
        r = np.array([
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
            [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
            [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
        ])
        return Se3Pose(r, translation, check=False)

    def __repr__(self):
        return f"Se3Pose(angle={self.rotation_angle():.4f}, t={self.translation})"


@dataclass(frozen=True)
class PixelGrid:
    """Continuous pixel-center coordinates of a full image at some level."""

    u: np.ndarray
    v: np.ndarray
    level: int = 0

    def stacked(self):
        """(H, W, 2) array of (u, v)."""
        return np.stack([self.u, self.v], axis=-1)


def pixel_grid(width, height, level=0):
    u, v = np.meshgrid(
        np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64)
    )
    return PixelGrid(u=u, v=v, level=level)


# -- projection ----------------------------------------------------------------


def project(points, intrinsics):
    """(..., 3 or 4) camera-frame points -> (..., 2) pixels.

    Raises NonPositiveDepth when any z <= DEPTH_EPS.
    """
    pts = np.asarray(points, dtype=np.float64)
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    if np.any(z <= DEPTH_EPS):
        raise NonPositiveDepth(f"projection needs z > {DEPTH_EPS}, got min z = {z.min()}")
    u = intrinsics.fx * x / z + intrinsics.cx
    v = intrinsics.fy * y / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


def backproject(pixels, depth, intrinsics):
    """(..., 2) pixels and (...,) depths -> (..., 4) homogeneous camera points."""
    px = np.asarray(pixels, dtype=np.float64)
    z = np.asarray(depth, dtype=np.float64)
    if np.any(z <= 0):
        raise NonPositiveDepth(f"backprojection needs depth > 0, got min = {z.min()}")
    x = z * (px[..., 0] - intrinsics.cx) / intrinsics.fx
    y = z * (px[..., 1] - intrinsics.cy) / intrinsics.fy
    return np.stack([x, y, z, np.ones_like(z)], axis=-1)


INVALID_COORD = -2.0  # sentinel far enough outside that bilinear reads zero
BORDER_EPS = 1e-9  # in-view slack so border pixels survive rounding


def reproject(g_ij, pixels, depth, intrinsics):
    """Warp pixels of view i into view j through depth.

    Returns (pixels_j, valid).  valid means positive transformed depth and a
    landing point inside [0, W-1] x [0, H-1] (fully interpolatable).  Invalid
    entries get sentinel coordinates so zero-padded samplers read zero; this
    keeps warps total instead of raising.  An exact identity motion
    short-circuits so the identity warp reproduces the input bit-for-bit.
    """
    px = np.asarray(pixels, dtype=np.float64)
    z = np.asarray(depth, dtype=np.float64)
    if g_ij.is_identity():
        valid = (
            (z > DEPTH_EPS)
            & (px[..., 0] >= -BORDER_EPS) & (px[..., 0] <= intrinsics.width - 1 + BORDER_EPS)
            & (px[..., 1] >= -BORDER_EPS) & (px[..., 1] <= intrinsics.height - 1 + BORDER_EPS)
        )
        out = px.copy()
        out[~valid] = INVALID_COORD
        return out, valid
    zsafe = np.where(z > DEPTH_EPS, z, 1.0)
    x = zsafe * (px[..., 0] - intrinsics.cx) / intrinsics.fx
    y = zsafe * (px[..., 1] - intrinsics.cy) / intrinsics.fy
    pts = np.stack([x, y, zsafe], axis=-1)
    pts_j = g_ij.transform(pts)
    zj = pts_j[..., 2]
    front = (z > DEPTH_EPS) & (zj > DEPTH_EPS)
    zj_safe = np.where(front, zj, 1.0)
    u = intrinsics.fx * pts_j[..., 0] / zj_safe + intrinsics.cx
    v = intrinsics.fy * pts_j[..., 1] / zj_safe + intrinsics.cy
    valid = (
        front
        & (u >= -BORDER_EPS) & (u <= intrinsics.width - 1 + BORDER_EPS)
        & (v >= -BORDER_EPS) & (v <= intrinsics.height - 1 + BORDER_EPS)
    )
    out = np.stack([u, v], axis=-1)
    out[~front] = INVALID_COORD
    return out, valid


# -- SE3 exp / log -------------------------------------------------------------


def _rot_coeffs(theta):
    """(sin t / t, (1-cos t)/t^2, (t-sin t)/t^3) with series near zero."""
    if theta < 1e-4:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / (theta * theta)
        c = (theta - np.sin(theta)) / (theta ** 3)
    return a, b, c


def se3_exp(xi):
    """Exponential map of a twist (v, w) -> Se3Pose (Rodrigues / V-matrix)."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (6,):
        raise ConfigError(f"twist must be a 6-vector, got {xi.shape}")
    v, w = xi[:3], xi[3:]
    theta = np.linalg.norm(w)
    k = hat(w)
    a, b, c = _rot_coeffs(theta)
    k2 = k @ k
    rot = np.eye(3) + a * k + b * k2
    vmat = np.eye(3) + b * k + c * k2
    return Se3Pose(rot, vmat @ v, check=False)


def se3_log(pose):
    """Logarithm map -> twist (v, w); raises NearSingularRotation near angle pi."""
    r = pose.rotation
    cos_t = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    if theta >= np.pi - 1e-3:
        raise NearSingularRotation(
            f"log undefined within 1e-3 of angle pi (angle={theta:.6f})"
        )
    axis_raw = vee(r - r.T)  # = 2 sin(theta) * axis
    if theta < 1e-7:
        w = 0.5 * axis_raw * (1.0 + theta * theta / 6.0)
    else:
        w = theta / (2.0 * np.sin(theta)) * axis_raw
    k = hat(w)
    if theta < 1e-4:
        d = 1.0 / 12.0 + theta * theta / 720.0
    else:
        d = (1.0 - 0.5 * theta * np.cos(theta / 2.0) / np.sin(theta / 2.0)) / (theta * theta)
    vinv = np.eye(3) - 0.5 * k + d * (k @ k)
    return np.concatenate([vinv @ pose.translation, w])


# -- bilinear interpolation ----------------------------------------------------


def bilinear_parts(uv, height, width):
    """Corner indices, fractional weights and in-bounds masks for (N, 2) coords.

    Non-finite coordinates are treated as fully out of bounds.
    """
    uv = np.asarray(uv, dtype=np.float64)
    u, v = uv[:, 0], uv[:, 1]
    finite = np.isfinite(u) & np.isfinite(v)
    us = np.clip(np.where(finite, u, -2.0), -1e12, 1e12)
    vs = np.clip(np.where(finite, v, -2.0), -1e12, 1e12)
    j0 = np.floor(us).astype(np.int64)
    i0 = np.floor(vs).astype(np.int64)
    fu = us - j0
    fv = vs - i0
    corners = []
    for di, dj in ((0, 0), (0, 1), (1, 0), (1, 1)):
        ii, jj = i0 + di, j0 + dj
        inb = (ii >= 0) & (ii < height) & (jj >= 0) & (jj < width)
        corners.append((ii, jj, inb))
    return j0, i0, fu, fv, corners


def bilinear_sample(field, coords):
    """4-neighbour interpolation with zero padding outside the field.

    field: (H, W) or (C, H, W); coords: (..., 2) as (u, v).
    Returns (...,) or (C, ...) matching the field layout.
    """
    f = np.asarray(field, dtype=np.float64)
    single = f.ndim == 2
    if single:
        f = f[None]
    c, h, w = f.shape
    cs = np.asarray(coords, dtype=np.float64)
    lead = cs.shape[:-1]
    uv = cs.reshape(-1, 2)
    _, _, fu, fv, corners = bilinear_parts(uv, h, w)
    vals = []
    for (ii, jj, inb) in corners:
        v = np.zeros((c, uv.shape[0]))
        v[:, inb] = f[:, ii[inb], jj[inb]]
        vals.append(v)
    v00, v01, v10, v11 = vals
    # incremental blend: exact for constant fields (weights sum to one exactly)
    out = v00 + fu * (v01 - v00) + fv * (v10 - v00) + (fu * fv) * ((v00 - v01) + (v11 - v10))
    out = out.reshape((c,) + lead)
    return out[0] if single else out
