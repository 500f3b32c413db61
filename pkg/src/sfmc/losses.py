"""Training objectives: supervised depth/flow/smoothness/focal terms,
photometric self-supervision with minimum fusion, pose geodesics, and the
gamma-weighted sequence combination.

Masked terms average over the masked pixel set rather than all H*W pixels,
so loss magnitudes do not depend on mask density.  The focal loss is
implemented exactly as printed (negative exponent, -P log P*); a positive
exponent variant is available behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_erosion

from . import gradcore as gc
from .errors import EmptySupervision, ShapeMismatch
from .geometry import BORDER_EPS, pixel_grid, reproject
from .motion import geodesic_tangent, geodesic_value, reprojection_jacobian

LOG_FLOOR = 1e-12
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
_BIG = 1e6  # padding value so invalid entries never win a minimum fusion


@dataclass
class LossWeights:
    """Balancing constants for the supervised and semi-supervised objectives."""

    supervised: tuple = (1.0, 0.02, 0.002, 1.0)     # l1, smooth, focal, flow
    semi: tuple = (10.0, 0.02, 10.0, 1.0)           # d-photo, smooth, m-photo, se3
    gamma: float = 0.5                               # sequence decay
    focal_delta: float = 2.0
    beta: float = 1.0                                # rotation weight in the geodesic
    ssim_alpha: float = 0.85
    sigma_scale: float = 2.0
    sigma_floor: float = 0.25
    focal_positive_exponent: bool = False

    def to_dict(self):
        return {
            "supervised": list(self.supervised),
            "semi": list(self.semi),
            "gamma": self.gamma,
            "focal_delta": self.focal_delta,
            "beta": self.beta,
            "ssim_alpha": self.ssim_alpha,
            "sigma_scale": self.sigma_scale,
            "sigma_floor": self.sigma_floor,
            "focal_positive_exponent": self.focal_positive_exponent,
        }

    @staticmethod
    def from_dict(d):
        w = LossWeights()
        return LossWeights(
            supervised=tuple(d.get("supervised", w.supervised)),
            semi=tuple(d.get("semi", w.semi)),
            gamma=float(d.get("gamma", w.gamma)),
            focal_delta=float(d.get("focal_delta", w.focal_delta)),
            beta=float(d.get("beta", w.beta)),
            ssim_alpha=float(d.get("ssim_alpha", w.ssim_alpha)),
            sigma_scale=float(d.get("sigma_scale", w.sigma_scale)),
            sigma_floor=float(d.get("sigma_floor", w.sigma_floor)),
            focal_positive_exponent=bool(d.get("focal_positive_exponent", False)),
        )


def _masked_mean(quantity, mask):
    """Mean of a tensor over a boolean/float mask; 0 when the mask is empty."""
    m = np.asarray(mask, dtype=np.float64)
    count = float(m.sum())
    if count == 0:
        return gc.constant(0.0)
    return gc.sum(quantity * m) * (1.0 / count)


def l1_depth(depth, depth_gt, valid):
    """Mean absolute depth error over the valid pixel set."""
    z = gc.as_tensor(depth)
    zs = np.asarray(depth_gt, dtype=np.float64)
    v = np.asarray(valid, dtype=bool)
    if z.shape != zs.shape or z.shape != v.shape:
        raise ShapeMismatch(f"l1_depth: shapes {z.shape}, {zs.shape}, {v.shape} differ")
    if not v.any():
        raise EmptySupervision("l1_depth: no valid pixels")
    return _masked_mean(gc.absolute(z - zs), v)


def smoothness(depth, missing):
    """Masked mean of |dZ/dx| + |dZ/dy| (forward differences, per-axis means).

    missing is 1 where ground truth is absent, i.e. where smoothing applies.
    """
    z = gc.as_tensor(depth)
    m = np.asarray(missing, dtype=np.float64)
    dx = gc.absolute(z[:, 1:] - z[:, :-1])
    dy = gc.absolute(z[1:, :] - z[:-1, :])
    return _masked_mean(dx, m[:, :-1]) + _masked_mean(dy, m[:-1, :])


def _grayscale(image):
    img = np.asarray(image, dtype=np.float64)
    return img.mean(axis=0) if img.ndim == 3 else img


def smoothness_edge_aware(depth, image, missing):
    """Smoothness with per-axis weights exp(-|dI|) from the grayscale image."""
    z = gc.as_tensor(depth)
    m = np.asarray(missing, dtype=np.float64)
    gray = _grayscale(image)
    wx = np.exp(-np.abs(np.diff(gray, axis=1)))
    wy = np.exp(-np.abs(np.diff(gray, axis=0)))
    dx = gc.absolute(z[:, 1:] - z[:, :-1]) * wx
    dy = gc.absolute(z[1:, :] - z[:-1, :]) * wy
    return _masked_mean(dx, m[:, :-1]) + _masked_mean(dy, m[:-1, :])


def unimodal_target(depth_gt, sigma, hyp):
    """Target distribution P*(z_d) = softmax(-|z_d - Z*| / sigma) per pixel.

    sigma may be a tensor (the confidence head output), keeping the target
    differentiable w.r.t. the predicted uncertainty.
    """
    zs = np.asarray(depth_gt, dtype=np.float64)
    s = gc.as_tensor(sigma)
    if s.shape != zs.shape:
        raise ShapeMismatch(f"unimodal_target: sigma {s.shape} vs depth {zs.shape}")
    dist = -np.abs(hyp.bins[:, None, None] - zs[None])
    logits = gc.as_tensor(dist) / gc.reshape(s, (1,) + s.shape)
    return gc.softmax(logits, axis=0)


def focal_loss(prob, target, delta_exp, valid, positive_exponent=False):
    """Masked mean over pixels of sum_d (1 - P*)^(-delta) * (-P log P*).

    P* is clamped into [1e-12, 1 - 1e-12] so one-hot-like targets stay finite.
    """
    p = gc.as_tensor(prob)
    q = gc.minimum(gc.maximum(gc.as_tensor(target), LOG_FLOOR), 1.0 - LOG_FLOOR)
    if p.shape != q.shape:
        raise ShapeMismatch(f"focal_loss: P {p.shape} vs P* {q.shape}")
    expo = delta_exp if positive_exponent else -delta_exp
    factor = gc.pow_scalar(1.0 - q, expo)
    per_pixel = gc.sum(factor * gc.neg(p * gc.log(q)), axis=0)
    return _masked_mean(per_pixel, valid)


def reproject_tensor(rel, pixels, depth, intrinsics, pose_delta=None, jacobian=None):
    """Differentiable reprojection Psi(rel, x, Z) built from tensor primitives.

    pixels: (N, 2) constants; depth: (N,) tensor or array.  With pose_delta (a
    zero-valued (6,) tensor, see GnResult.delta) and the matching Jacobian,
    the coordinates also carry d(coords)/d(twist) for pose learning.  Returns
    (coords (N, 2) tensor, valid (N,) bool) — invalid rows have finite but
    meaningless coordinates and must be masked by the caller.
    """
    px = np.asarray(pixels, dtype=np.float64)
    z = gc.as_tensor(depth)
    n = px.shape[0]
    ax = (px[:, 0] - intrinsics.cx) / intrinsics.fx
    ay = (px[:, 1] - intrinsics.cy) / intrinsics.fy
    r, t = rel.rotation, rel.translation
    x = z * ax
    y = z * ay
    xp = x * r[0, 0] + y * r[0, 1] + z * r[0, 2] + t[0]
    yp = x * r[1, 0] + y * r[1, 1] + z * r[1, 2] + t[1]
    zp = x * r[2, 0] + y * r[2, 1] + z * r[2, 2] + t[2]
    front = (z.values > 1e-6) & (zp.values > 1e-6)
    zp_safe = zp * front.astype(float) + (~front).astype(float)
    u = xp * intrinsics.fx / zp_safe + intrinsics.cx
    v = yp * intrinsics.fy / zp_safe + intrinsics.cy
    coords = gc.concat([gc.reshape(u, (n, 1)), gc.reshape(v, (n, 1))], axis=1)
    if pose_delta is not None:
        corr = gc.sum(jacobian * gc.reshape(pose_delta, (1, 1, 6)), axis=2)
        coords = coords + corr
    uc, vc = coords.values[:, 0], coords.values[:, 1]
    valid = (
        front
        & (uc >= -BORDER_EPS) & (uc <= intrinsics.width - 1 + BORDER_EPS)
        & (vc >= -BORDER_EPS) & (vc <= intrinsics.height - 1 + BORDER_EPS)
    )
    return coords, valid


def flow_loss(graph, gt_graph, depth, intrinsics, pose_delta=None, jacobians=None):
    """Mean reprojection difference |Psi(G) - Psi(G*)|_1 over keyframe pairs.

    depth lives at the resolution of ``intrinsics`` and may be a tensor;
    pixels invalid under either pose graph are excluded from the mean.
    """
    key = graph.keyframe
    z = gc.as_tensor(depth)
    h, w = z.shape
    px = pixel_grid(intrinsics.width, intrinsics.height).stacked().reshape(-1, 2)
    zf = gc.reshape(z, (h * w,))
    total = gc.constant(0.0)
    count = 0.0
    for p_idx, t in enumerate(graph.non_key):
        delta_row = pose_delta[p_idx] if pose_delta is not None else None
        jac = jacobians[p_idx] if jacobians is not None else None
        coords, valid = reproject_tensor(
            graph.relative(key, t), px, zf, intrinsics, delta_row, jac
        )
        # same arithmetic path on the reference side so G = G* gives exactly 0;
        # both warps depend on Z, so both carry depth gradients
        gt_coords, gt_valid = reproject_tensor(
            gt_graph.relative(key, t), px, zf, intrinsics
        )
        m = (valid & gt_valid).astype(np.float64)
        l1 = gc.sum(gc.absolute(coords - gt_coords), axis=1)
        total = total + gc.sum(l1 * m)
        count += float(m.sum())
    return total * (1.0 / max(count, 1.0))


def se3_geodesic(graph, gt_graph, beta=1.0):
    """Mean over edges of translation distance + beta * rotation angle."""
    return geodesic_value(graph, gt_graph, beta)


# -- photometric terms -----------------------------------------------------------


def _as_chw(image):
    img = gc.as_tensor(image)
    if img.ndim == 2:
        img = gc.reshape(img, (1,) + img.shape)
    if img.ndim != 3:
        raise ShapeMismatch(f"image must be (H, W) or (C, H, W), got {img.shape}")
    return img


def photometric_map(image, warped, alpha=0.85):
    """Per-pixel alpha*(1-SSIM)/2 + (1-alpha)*|I - I'| with 3x3 windows."""
    x = _as_chw(image)
    y = _as_chw(warped)
    if x.shape != y.shape:
        raise ShapeMismatch(f"photometric: {x.shape} vs {y.shape}")
    mu_x = gc.avg_pool2d(x, 3)
    mu_y = gc.avg_pool2d(y, 3)
    sig_x = gc.avg_pool2d(x * x, 3) - mu_x * mu_x
    sig_y = gc.avg_pool2d(y * y, 3) - mu_y * mu_y
    sig_xy = gc.avg_pool2d(x * y, 3) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * sig_xy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sig_x + sig_y + SSIM_C2)
    dssim = gc.minimum(gc.maximum((1.0 - num / den) * 0.5, 0.0), 1.0)
    l1 = gc.absolute(x - y)
    per_channel = alpha * dssim + (1.0 - alpha) * l1
    return gc.mean(per_channel, axis=0)


def photometric(image, warped, alpha=0.85):
    return gc.mean(photometric_map(image, warped, alpha))


def min_fusion(maps, valid_masks=None):
    """Mean of the per-pixel minimum across reference frames.

    With valid_masks, invalid entries are excluded from the minimum and pixels
    valid in no frame are excluded from the mean.
    """
    if valid_masks is None:
        fused = maps[0]
        for m in maps[1:]:
            fused = gc.minimum(fused, m)
        return gc.mean(fused)
    fused = None
    any_valid = np.zeros(maps[0].shape, dtype=bool)
    for mp, mask in zip(maps, valid_masks):
        mask = np.asarray(mask, dtype=bool)
        adj = mp * mask.astype(float) + _BIG * (~mask).astype(float)
        fused = adj if fused is None else gc.minimum(fused, adj)
        any_valid |= mask
    return _masked_mean(fused, any_valid)


def _erode_valid(valid):
    """Shrink a warp-validity mask by the SSIM window radius.

    A pixel whose 3x3 window touches warp-invalid samples has polluted window
    statistics; the image border itself is fine (pooling clips windows there),
    so erosion treats outside-image as valid.
    """
    return binary_erosion(valid, structure=np.ones((3, 3), dtype=bool), border_value=1)


def warp_image(image, rel, depth, intrinsics, pose_delta=None, jacobian=None):
    """Sample a reference image at Psi(rel, x, Z): returns ((C,H,W) tensor, valid)."""
    img = _as_chw(image)
    _, h, w = img.shape
    px = pixel_grid(intrinsics.width, intrinsics.height).stacked().reshape(-1, 2)
    z = gc.as_tensor(depth)
    coords, valid = reproject_tensor(
        rel, px, gc.reshape(z, (h * w,)), intrinsics, pose_delta, jacobian
    )
    sampled = gc.bilinear_sample(img, coords)
    return gc.reshape(sampled, img.shape), valid.reshape(h, w)


def sequence_loss(losses, gamma):
    """Weighted sum sum_s gamma^(m-s) L_s over a sequence of m predictions."""
    m = len(losses)
    if m < 1:
        raise EmptySupervision("sequence_loss: needs at least one prediction")
    total = None
    for i, term in enumerate(losses):
        weighted = gc.as_tensor(term) * (gamma ** (m - 1 - i))
        total = weighted if total is None else total + weighted
    return total


# -- combined objectives -----------------------------------------------------------


def total_supervised(depth_list, depth_q_list, prob_list, sigma_q, graph, gt_graph,
                     depth_gt, missing, image, intrinsics, hyp, weights,
                     pose_delta=None, jacobians=None):
    """Per-prediction l1 + smooth + focal + flow, sequence-combined.

    depth_list: full-resolution depth tensors (one per intermediate volume);
    depth_q_list / prob_list / sigma_q: quarter resolution; missing is 1
    where ground truth is absent.  Returns (total tensor, term means dict).
    """
    lam = weights.supervised
    valid = ~np.asarray(missing, dtype=bool)
    if not valid.any():
        raise EmptySupervision("total_supervised: no supervised pixels")
    k_q = intrinsics.downscale(4)
    z_star_q = np.asarray(depth_gt, dtype=np.float64)[::4, ::4]
    valid_q = valid[::4, ::4]
    p_star = unimodal_target(z_star_q, sigma_q, hyp)
    per_pred, terms = [], {"l1": 0.0, "smooth": 0.0, "focal": 0.0, "flow": 0.0}
    for z_full, z_q, prob in zip(depth_list, depth_q_list, prob_list):
        t_l1 = l1_depth(z_full, depth_gt, valid)
        t_sm = smoothness_edge_aware(z_full, image, missing)
        t_fo = focal_loss(prob, p_star, weights.focal_delta, valid_q,
                          weights.focal_positive_exponent)
        t_fl = flow_loss(graph, gt_graph, z_q, k_q, pose_delta, jacobians)
        per_pred.append(lam[0] * t_l1 + lam[1] * t_sm + lam[2] * t_fo + lam[3] * t_fl)
        for name, t in (("l1", t_l1), ("smooth", t_sm), ("focal", t_fo), ("flow", t_fl)):
            terms[name] += float(t.values) / len(depth_list)
    total = sequence_loss(per_pred, weights.gamma)
    return total, terms


def total_semi_supervised(depth_list, graph, gt_graph, images, intrinsics, weights,
                          pose_delta=None, image_mask=None):
    """Photometric depth/motion terms + smoothness + pose geodesic.

    images: per-frame (C, H, W) arrays aligned with the graph; the keyframe
    image is the reconstruction target.  The motion photometric term warps
    with the last depth prediction held constant so its gradient isolates the
    pose twist; the smoothness mask is all in-view pixels unless given.
    """
    lam = weights.semi
    key = graph.keyframe
    key_img = np.asarray(images[key], dtype=np.float64)
    h, w = key_img.shape[-2:]
    mask = np.ones((h, w), dtype=bool) if image_mask is None else image_mask
    z_last = np.asarray(
        depth_list[-1].values if isinstance(depth_list[-1], gc.Tensor) else depth_list[-1]
    )
    px = pixel_grid(intrinsics.width, intrinsics.height).stacked().reshape(-1, 2)

    if pose_delta is not None:
        se3_term = geodesic_tangent(pose_delta, graph, gt_graph, weights.beta)
    else:
        se3_term = gc.constant(geodesic_value(graph, gt_graph, weights.beta))

    # motion photometric: pose varies (tangent frame), depth constant
    m_maps, m_valid = [], []
    for p_idx, t in enumerate(graph.non_key):
        rel = graph.relative(key, t)
        delta_row = pose_delta[p_idx] if pose_delta is not None else None
        jac = (
            reprojection_jacobian(rel, px, z_last.reshape(-1), intrinsics)
            if pose_delta is not None
            else None
        )
        warped, valid = warp_image(images[t], rel, z_last, intrinsics, delta_row, jac)
        m_maps.append(photometric_map(key_img, warped, weights.ssim_alpha))
        m_valid.append(_erode_valid(valid))
    t_mphoto = min_fusion(m_maps, m_valid)

    per_pred, terms = [], {"photo_d": 0.0, "smooth": 0.0, "photo_m": float(t_mphoto.values),
                           "se3": float(se3_term.values)}
    for z_s in depth_list:
        d_maps, d_valid = [], []
        for t in graph.non_key:
            warped, valid = warp_image(images[t], graph.relative(key, t), z_s, intrinsics)
            d_maps.append(photometric_map(key_img, warped, weights.ssim_alpha))
            d_valid.append(_erode_valid(valid))
        t_dphoto = min_fusion(d_maps, d_valid)
        t_sm = smoothness_edge_aware(z_s, key_img, mask)
        per_pred.append(
            lam[0] * t_dphoto + lam[1] * t_sm + lam[2] * t_mphoto + lam[3] * se3_term
        )
        terms["photo_d"] += float(t_dphoto.values) / len(depth_list)
        terms["smooth"] += float(t_sm.values) / len(depth_list)
    total = sequence_loss(per_pred, weights.gamma)
    return total, terms
