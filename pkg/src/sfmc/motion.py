"""Pose branch: residual-flow/confidence prediction and the Gauss-Newton
pose-graph update.

Pose pairs are keyframe -> reference frame throughout (keyframe depth is the
only depth available), and the keyframe pose is gauge-fixed.  Updates use the
left-perturbation convention ``g <- exp(xi) g``; the normal equations are
assembled jointly over the stacked pair residuals (the system is block
diagonal because each pair constrains exactly one non-key pose).

The solve runs through the differentiable ``gradcore.solve`` op, so the
update twist carries gradients back into the predicted flow and confidence.
Losses that need pose gradients differentiate in the tangent frame at the
updated poses via :func:`geodesic_tangent` / the flow-loss delta hook.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .errors import ConfigError, DegenerateGeometry, ShapeMismatch
from .geometry import Se3Pose, hat, pixel_grid, reproject, se3_exp, vee

GN_DAMPING = 1e-4
CONFIDENCE_THRESHOLD = 0.01
MIN_CONSTRAINED_PIXELS = 6


class PoseGraph:
    """World-to-camera poses over a frame window with one fixed keyframe."""

    def __init__(self, poses, keyframe):
        self.poses = list(poses)
        if not 0 <= keyframe < len(self.poses):
            raise ConfigError(f"keyframe {keyframe} out of range for {len(self.poses)} frames")
        self.keyframe = keyframe

    def __len__(self):
        return len(self.poses)

    @property
    def non_key(self):
        return [i for i in range(len(self.poses)) if i != self.keyframe]

    def relative(self, i, j):
        """Motion mapping view-i camera coordinates to view j: g_j g_i^-1."""
        return self.poses[j].compose(self.poses[i].inverse())

    def replaced(self, idx, pose):
        poses = list(self.poses)
        poses[idx] = pose
        return PoseGraph(poses, self.keyframe)

    def normalized(self):
        """Gauge-fix: right-multiply by g_key^-1 so the keyframe is identity."""
        inv = self.poses[self.keyframe].inverse()
        return PoseGraph([p.compose(inv) for p in self.poses], self.keyframe)

    def copy(self):
        return PoseGraph(list(self.poses), self.keyframe)


def initialize_poses(num_frames, keyframe=None, prior_velocity=None):
    """Identity poses, optionally with a constant-velocity translation prior.

    With prior v, frame t gets translation (t - keyframe) * v.
    """
    if keyframe is None:
        keyframe = num_frames // 2
    if prior_velocity is None:
        v = np.zeros(3)
    else:
        try:
            v = np.asarray(prior_velocity, dtype=np.float64).reshape(3)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"constant-velocity prior must be a 3-vector: {e}") from e
    poses = [Se3Pose(np.eye(3), (t - keyframe) * v) for t in range(num_frames)]
    return PoseGraph(poses, keyframe)


# -- flow / confidence network --------------------------------------------------


@dataclass
class MotionNetConfig:
    in_channels: int = 3
    feat_channels: int = 8
    encoder_hidden: int = 12
    trunk_hidden: int = 16
    trunk_layers: int = 3
    depth_norm: float = 80.0  # depth input channel is z / depth_norm


def init_motion_params(config, rng, prefix="motion"):
    from .depthnet import _conv_init  # same He-style init

    c = config
    p = {}
    enc = [
        (c.encoder_hidden, c.in_channels),
        (c.encoder_hidden, c.encoder_hidden),
        (c.feat_channels, c.encoder_hidden),
    ]
    for i, (cout, cin) in enumerate(enc):
        p[f"{prefix}.enc.conv{i}.w"] = _conv_init(rng, (cout, cin, 3, 3))
        p[f"{prefix}.enc.conv{i}.b"] = gc.parameter(np.zeros(cout))
    cin = 2 * c.feat_channels + 1
    for i in range(c.trunk_layers):
        cout = c.trunk_hidden
        p[f"{prefix}.trunk.conv{i}.w"] = _conv_init(rng, (cout, cin, 3, 3))
        p[f"{prefix}.trunk.conv{i}.b"] = gc.parameter(np.zeros(cout))
        cin = cout
    p[f"{prefix}.flow.w"] = gc.parameter(np.zeros((2, cin, 1, 1)))
    p[f"{prefix}.flow.b"] = gc.parameter(np.zeros(2))
    p[f"{prefix}.conf.w"] = gc.parameter(np.zeros((1, cin, 1, 1)))
    p[f"{prefix}.conf.b"] = gc.parameter(np.zeros(1))
    return p


def predict_flow_confidence(params, key_feats, warped_feats, depth, config, prefix="motion"):
    """Residual flow (h, w, 2) and confidence (h, w) for one frame pair.

    Inputs are the keyframe features, the reference features warped by the
    current pose/depth state, and the current keyframe depth (conditioning
    channel, scaled by 1/depth_norm).  Zero parameters give R = 0 and W = 0.5.
    """
    key = gc.as_tensor(key_feats)
    warped = gc.as_tensor(warped_feats)
    if key.shape != warped.shape:
        raise ShapeMismatch(f"feature shapes differ: {key.shape} vs {warped.shape}")
    _, h, w = key.shape
    dchan = gc.reshape(gc.as_tensor(depth) * (1.0 / config.depth_norm), (1, h, w))
    x = gc.concat([key, warped, dchan], axis=0)
    for i in range(config.trunk_layers):
        x = gc.relu(gc.conv2d(x, params[f"{prefix}.trunk.conv{i}.w"],
                              params[f"{prefix}.trunk.conv{i}.b"], padding=1))
    flow = gc.conv2d(x, params[f"{prefix}.flow.w"], params[f"{prefix}.flow.b"])
    conf = gc.conv2d(x, params[f"{prefix}.conf.w"], params[f"{prefix}.conf.b"])
    return gc.transpose(flow, (1, 2, 0)), gc.sigmoid(gc.reshape(conf, (h, w)))


class MotionNetwork:
    """Feature encoder + shared flow/confidence trunk applied per frame pair."""

    def __init__(self, config=None, rng=None, prefix="motion"):
        self.config = config or MotionNetConfig()
        self.prefix = prefix
        rng = rng or np.random.default_rng(0)
        self.params = init_motion_params(self.config, rng, prefix)

    def encode(self, image):
        from .depthnet import encode_features

        return encode_features(self.params, image, self.prefix)

    def predict_pairs(self, features, graph, depth_q, intrinsics_q):
        """(R, W) per non-key frame, warping reference features by the state."""
        key = graph.keyframe
        f_key = features[key]
        _, h, w = f_key.shape
        px = pixel_grid(intrinsics_q.width, intrinsics_q.height).stacked().reshape(-1, 2)
        z = np.asarray(depth_q, dtype=np.float64).reshape(-1)
        flows, confs = [], []
        for t in graph.non_key:
            rel = graph.relative(key, t)
            coords, valid = reproject(rel, px, z, intrinsics_q)
            warped = gc.bilinear_sample(gc.as_tensor(features[t]), coords)
            warped = gc.reshape(warped, f_key.shape) * valid.reshape(1, h, w).astype(float)
            r, wconf = predict_flow_confidence(
                self.params, f_key, warped, depth_q, self.config, self.prefix
            )
            flows.append(r)
            confs.append(wconf)
        return flows, confs


# -- Gauss-Newton pose update ----------------------------------------------------


def reprojection_jacobian(rel, pixels, depth, intrinsics):
    """d Psi / d xi at xi = 0 for a left perturbation exp(xi) of ``rel``.

    pixels (N, 2), depth (N,) -> (N, 2, 6) with twist order (v, w).
    Rows where the transformed depth is non-positive are zero.
    """
    px = np.asarray(pixels, dtype=np.float64)
    z = np.asarray(depth, dtype=np.float64)
    x = z * (px[:, 0] - intrinsics.cx) / intrinsics.fx
    y = z * (px[:, 1] - intrinsics.cy) / intrinsics.fy
    pts = rel.transform(np.stack([x, y, z], axis=-1))
    zp = pts[:, 2]
    safe = zp > 1e-6
    zs = np.where(safe, zp, 1.0)
    n = px.shape[0]
    dpi = np.zeros((n, 2, 3))
    dpi[:, 0, 0] = intrinsics.fx / zs
    dpi[:, 0, 2] = -intrinsics.fx * pts[:, 0] / (zs * zs)
    dpi[:, 1, 1] = intrinsics.fy / zs
    dpi[:, 1, 2] = -intrinsics.fy * pts[:, 1] / (zs * zs)
    dx = np.zeros((n, 3, 6))
    dx[:, 0, 0] = dx[:, 1, 1] = dx[:, 2, 2] = 1.0
    # d(exp(xi) X)/dw = -hat(X)
    dx[:, 0, 4] = pts[:, 2]
    dx[:, 0, 5] = -pts[:, 1]
    dx[:, 1, 3] = -pts[:, 2]
    dx[:, 1, 5] = pts[:, 0]
    dx[:, 2, 3] = pts[:, 1]
    dx[:, 2, 4] = -pts[:, 0]
    jac = np.einsum("nij,njk->nik", dpi, dx, optimize=False)
    jac[~safe] = 0.0
    return jac


@dataclass
class GnResult:
    """One Gauss-Newton step with enough context to build training losses."""

    graph: PoseGraph            # updated poses
    xi: gc.Tensor               # (P, 6) solved twists, differentiable in R/W
    frames: list                # non-key frame ids, aligned with xi rows
    targets: list               # per pair (N, 2) corrected correspondences
    valid: list                 # per pair (N,) bool: usable residual rows
    jacobians_new: list         # per pair (N, 2, 6) Jacobians at the *updated* pose

    def delta(self):
        """Zero-valued tensor carrying d(loss)/d(xi): xi - stop_gradient(xi)."""
        return self.xi - self.xi.values


def gauss_newton_update(graph, depth, flows, confidences, intrinsics,
                        damping=GN_DAMPING):
    """One damped Gauss-Newton step on all non-key poses.

    graph: current PoseGraph; depth: (h, w) keyframe depth at the working
    resolution; flows / confidences: per non-key frame (h, w, 2) and (h, w)
    tensors or arrays; intrinsics: matching resolution.

    Targets are x_hat = Psi(rel, x, Z) + R.  Pixels with invalid reprojection
    or confidence <= 0.01 carry zero weight; fewer than 6 usable pixels in any
    pair (or an unusable normal system) raises DegenerateGeometry with the
    input poses unchanged.
    """
    key = graph.keyframe
    non_key = graph.non_key
    if len(flows) != len(non_key) or len(confidences) != len(non_key):
        raise ShapeMismatch(
            f"need {len(non_key)} flow/confidence pairs, got {len(flows)}/{len(confidences)}"
        )
    z = np.asarray(depth, dtype=np.float64)
    h, w = z.shape
    px = pixel_grid(intrinsics.width, intrinsics.height).stacked().reshape(-1, 2)
    zf = z.reshape(-1)
    n = px.shape[0]

    h_blocks, b_blocks, targets, valid_rows = [], [], [], []
    for idx, t in enumerate(non_key):
        rel = graph.relative(key, t)
        base, valid = reproject(rel, px, zf, intrinsics)
        jac = reprojection_jacobian(rel, px, zf, intrinsics)
        r = gc.reshape(gc.as_tensor(flows[idx]), (n, 2))
        wconf = gc.reshape(gc.as_tensor(confidences[idx]), (n,))
        usable = valid & (wconf.values > CONFIDENCE_THRESHOLD)
        if int(usable.sum()) < MIN_CONSTRAINED_PIXELS:
            raise DegenerateGeometry(
                f"pair (key={key} -> {t}): only {int(usable.sum())} constrained pixels"
            )
        w_eff = wconf * usable.astype(np.float64)
        jj = np.einsum("nki,nkj->nij", jac, jac, optimize=False)  # (N, 6, 6)
        h_t = gc.sum(gc.reshape(w_eff, (n, 1, 1)) * jj, axis=0) + damping * np.eye(6)
        jr = gc.sum(jac * gc.reshape(r, (n, 2, 1)), axis=1)  # (N, 6)
        b_t = gc.sum(gc.reshape(w_eff, (n, 1)) * jr, axis=0)
        h_blocks.append(gc.reshape(h_t, (1, 6, 6)))
        b_blocks.append(gc.reshape(b_t, (1, 6)))
        targets.append(base + r.values)
        valid_rows.append(usable)

    try:
        xi = gc.solve(gc.concat(h_blocks, axis=0), gc.concat(b_blocks, axis=0))
    except np.linalg.LinAlgError as e:
        raise DegenerateGeometry(f"normal equations not solvable: {e}") from e
    if not np.all(np.isfinite(xi.values)):
        raise DegenerateGeometry("non-finite Gauss-Newton update")

    new_graph = graph.copy()
    jac_new = []
    for idx, t in enumerate(non_key):
        new_pose = se3_exp(xi.values[idx]).compose(graph.poses[t])
        new_graph = new_graph.replaced(t, new_pose)
    for t in non_key:
        rel = new_graph.relative(key, t)
        jac_new.append(reprojection_jacobian(rel, px, zf, intrinsics))
    return GnResult(
        graph=new_graph, xi=xi, frames=list(non_key),
        targets=targets, valid=valid_rows, jacobians_new=jac_new,
    )


def gn_objective(graph, depth, targets, valid_rows, intrinsics):
    """Weighted squared residual sum against fixed targets (monotonicity checks)."""
    key = graph.keyframe
    z = np.asarray(depth, dtype=np.float64).reshape(-1)
    px = pixel_grid(intrinsics.width, intrinsics.height).stacked().reshape(-1, 2)
    total = 0.0
    for t, target, rows in zip(graph.non_key, targets, valid_rows):
        cur, _ = reproject(graph.relative(key, t), px, z, intrinsics)
        diff = (cur - target)[rows]
        total += float((diff * diff).sum())
    return total


# -- pose-graph geodesic with tangent-frame gradients ----------------------------


def geodesic_value(graph, gt_graph, beta=1.0):
    """Mean over keyframe->reference edges of ||t - t*|| + beta * angle(R*^T R)."""
    key = graph.keyframe
    total = 0.0
    edges = graph.non_key
    for t in edges:
        rel = graph.relative(key, t)
        rel_gt = gt_graph.relative(key, t)
        dt = float(np.linalg.norm(rel.translation - rel_gt.translation))
        e0 = rel_gt.rotation.T @ rel.rotation
        ang = float(np.arccos(np.clip((np.trace(e0) - 1.0) / 2.0, -1.0, 1.0)))
        total += dt + beta * ang
    return total / len(edges)


def geodesic_tangent(delta, graph, gt_graph, beta=1.0):
    """Geodesic pose loss as a tensor in the tangent frame at ``graph``.

    delta is a zero-valued (P, 6) tensor (one row per non-key frame, see
    GnResult.delta); the forward value is the exact geodesic of the graph and
    the gradient is the derivative of geodesic(exp(delta) g) at delta = 0.
    """
    delta = gc.as_tensor(delta)
    non_key = graph.non_key
    if delta.shape != (len(non_key), 6):
        raise ShapeMismatch(f"delta must be ({len(non_key)}, 6), got {delta.shape}")
    if np.abs(delta.values).max(initial=0.0) > 1e-9:
        raise ConfigError("geodesic_tangent gradients are only valid at delta = 0")
    key = graph.keyframe
    edges = len(non_key)

    def forward(dv):
        g2 = graph.copy()
        for p, t in enumerate(non_key):
            g2 = g2.replaced(t, se3_exp(dv[p]).compose(graph.poses[t]))
        return geodesic_value(g2, gt_graph, beta)

    value = forward(delta.values)

    grad = np.zeros((edges, 6))
    for p, t in enumerate(non_key):
        rel = graph.relative(key, t)
        rel_gt = gt_graph.relative(key, t)
        diff = rel.translation - rel_gt.translation
        nd = np.linalg.norm(diff)
        if nd > 1e-12:
            dhat = diff / nd
            grad[p, :3] += dhat
            grad[p, 3:] += np.cross(rel.translation, dhat)
        e0 = rel_gt.rotation.T @ rel.rotation
        cos_t = np.clip((np.trace(e0) - 1.0) / 2.0, -1.0, 1.0)
        theta = np.arccos(cos_t)
        sin_t = np.sin(theta)
        if sin_t > 1e-9:
            axis = vee(e0 - e0.T) / (2.0 * sin_t)
            grad[p, 3:] += beta * (rel_gt.rotation @ axis)
    grad /= edges

    def vjp(g):
        return (float(g) * grad,)

    return gc.custom_op(value, [delta], vjp, op="geodesic_tangent")


def perturb_graph(graph, rng, scale):
    """Left-perturb every non-key pose by exp(xi), xi ~ scale * N(0, 1)."""
    out = graph.copy()
    for t in graph.non_key:
        xi = rng.standard_normal(6) * scale
        out = out.replaced(t, se3_exp(xi).compose(graph.poses[t]))
    return out
