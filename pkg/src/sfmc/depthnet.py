"""Depth branch: feature encoding, plane-sweep cost volume, 3D regularization,
soft-argmax depth head and the two uncertainty mechanisms (entropy, learned
confidence).

All feature maps live at quarter resolution with channels first.  The paper's
full-scale hourglasses are replaced by small conv stacks with the same
interface shapes; widths are configurable with documented defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .errors import NeedMultipleViews, ResolutionError, ShapeMismatch
from .geometry import pixel_grid, reproject


@dataclass(frozen=True)
class DepthHypothesis:
    """Linearly spaced depth bins z_1..z_D in meters."""

    bins: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=np.float64)
        object.__setattr__(self, "bins", b)
        if b.ndim != 1 or b.size < 2:
            raise ShapeMismatch(f"hypothesis needs >= 2 bins, got shape {b.shape}")
        steps = np.diff(b)
        if np.any(steps <= 0):
            raise ShapeMismatch("hypothesis bins must be strictly increasing")
        if np.abs(steps - steps[0]).max() > 1e-12:
            raise ShapeMismatch("hypothesis bins must be linearly spaced")

    @staticmethod
    def linear(z_min=1.0, z_max=80.0, count=32):
        return DepthHypothesis(np.linspace(z_min, z_max, count))

    @property
    def count(self):
        return self.bins.size

    @property
    def spacing(self):
        return float(self.bins[1] - self.bins[0])

    @property
    def mid(self):
        return float(0.5 * (self.bins[0] + self.bins[-1]))


@dataclass
class DepthNetConfig:
    in_channels: int = 3
    feat_channels: int = 8      # L; feature maps are H/4 x W/4 x L
    encoder_hidden: int = 12
    reg_blocks: int = 2         # number of intermediate predictions m
    reg_hidden: int = 8         # bottleneck width inside each residual block
    head_hidden: int = 8        # 1x1x1 conv width in the depth head
    conf_hidden: int = 4        # uncertainty-head width
    conf_layers: int = 4
    sigma_scale: float = 2.0    # s in sigma = s*(1-f) + eps
    sigma_floor: float = 0.25   # eps


@dataclass
class CostVolume:
    """Pooled pairwise matching volume (2L, D, H/4, W/4) plus provenance."""

    data: gc.Tensor
    keyframe: int
    frames: tuple = field(default_factory=tuple)

    @property
    def shape(self):
        return self.data.shape


def _conv_init(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    return gc.parameter(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in))


def init_depth_params(config, rng, prefix="depth"):
    """Create all depth-branch parameters in a name -> Tensor dict."""
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
    cv = 2 * c.feat_channels
    for b in range(c.reg_blocks):
        p[f"{prefix}.reg{b}.conv0.w"] = _conv_init(rng, (c.reg_hidden, cv, 3, 3, 3))
        p[f"{prefix}.reg{b}.conv0.b"] = gc.parameter(np.zeros(c.reg_hidden))
        p[f"{prefix}.reg{b}.conv1.w"] = _conv_init(rng, (cv, c.reg_hidden, 3, 3, 3))
        p[f"{prefix}.reg{b}.conv1.b"] = gc.parameter(np.zeros(cv))
    p[f"{prefix}.head.conv0.w"] = _conv_init(rng, (c.head_hidden, cv, 1, 1, 1))
    p[f"{prefix}.head.conv0.b"] = gc.parameter(np.zeros(c.head_hidden))
    p[f"{prefix}.head.conv1.w"] = _conv_init(rng, (1, c.head_hidden, 1, 1, 1))
    p[f"{prefix}.head.conv1.b"] = gc.parameter(np.zeros(1))
    conf_channels = [cv] + [c.conf_hidden] * (c.conf_layers - 1) + [1]
    for i in range(c.conf_layers):
        p[f"{prefix}.conf.conv{i}.w"] = _conv_init(
            rng, (conf_channels[i + 1], conf_channels[i], 3, 3, 3)
        )
        p[f"{prefix}.conf.conv{i}.b"] = gc.parameter(np.zeros(conf_channels[i + 1]))
    return p


def encode_features(params, image, prefix="depth"):
    """Image (C, H, W) -> features (L, H/4, W/4): three convs, stride 2 twice."""
    x = gc.as_tensor(image)
    if x.ndim != 3:
        raise ShapeMismatch(f"encode_features: expected (C, H, W), got {x.shape}")
    _, h, w = x.shape
    if h % 4 or w % 4:
        raise ResolutionError(f"image size {h}x{w} not divisible by 4")
    x = gc.relu(gc.conv2d(x, params[f"{prefix}.enc.conv0.w"],
                          params[f"{prefix}.enc.conv0.b"], stride=2, padding=1))
    x = gc.relu(gc.conv2d(x, params[f"{prefix}.enc.conv1.w"],
                          params[f"{prefix}.enc.conv1.b"], stride=2, padding=1))
    return gc.conv2d(x, params[f"{prefix}.enc.conv2.w"],
                     params[f"{prefix}.enc.conv2.b"], stride=1, padding=1)


def build_cost_volume(features, poses, intrinsics, hyp, keyframe):
    """Warp reference features into the keyframe over all depth bins.

    features: per-frame (L, h, w) tensors/arrays at quarter resolution;
    poses: per-frame world-to-camera Se3Pose (same order);
    intrinsics: scaled to the feature resolution.

    Each reference frame contributes [keyframe features, warped features]
    (2L channels); pairs are mean-pooled.  Samples that land out of view or
    behind the camera contribute exactly zero.
    """
    if len(features) < 2:
        raise NeedMultipleViews(f"cost volume needs >= 2 frames, got {len(features)}")
    if len(features) != len(poses):
        raise ShapeMismatch(f"{len(features)} feature maps vs {len(poses)} poses")
    f_key = gc.as_tensor(features[keyframe])
    ch, h, w = f_key.shape
    if (h, w) != (intrinsics.height, intrinsics.width):
        raise ShapeMismatch(
            f"features {h}x{w} vs intrinsics {intrinsics.height}x{intrinsics.width}"
        )
    d = hyp.count
    px = pixel_grid(w, h).stacked().reshape(-1, 2)
    n = px.shape[0]
    depths = np.broadcast_to(hyp.bins[:, None], (d, n))
    px_all = np.broadcast_to(px[None], (d, n, 2))
    key_inv = poses[keyframe].inverse()
    key_vol = gc.reshape(f_key, (ch, 1, h, w)) * np.ones((1, d, 1, 1))

    pair_ids = []
    pooled = None
    for i in range(len(features)):
        if i == keyframe:
            continue
        rel = poses[i].compose(key_inv)
        coords, valid = reproject(rel, px_all, depths, intrinsics)
        sampled = gc.bilinear_sample(gc.as_tensor(features[i]), coords.reshape(-1, 2))
        sampled = gc.reshape(sampled, (ch, d, h, w))
        mask = valid.reshape(1, d, h, w).astype(np.float64)
        pair = gc.concat([key_vol, sampled * mask], axis=0)
        pooled = pair if pooled is None else pooled + pair
        pair_ids.append(i)
    return CostVolume(
        data=pooled * (1.0 / len(pair_ids)), keyframe=keyframe, frames=tuple(pair_ids)
    )


def regularize(params, volume, config, prefix="depth"):
    """Stack of residual conv3d blocks; one intermediate volume per block."""
    x = volume.data if isinstance(volume, CostVolume) else gc.as_tensor(volume)
    outputs = []
    for b in range(config.reg_blocks):
        y = gc.relu(gc.conv3d(x, params[f"{prefix}.reg{b}.conv0.w"],
                              params[f"{prefix}.reg{b}.conv0.b"], padding=1))
        y = gc.conv3d(y, params[f"{prefix}.reg{b}.conv1.w"],
                      params[f"{prefix}.reg{b}.conv1.b"], padding=1)
        x = x + y
        outputs.append(x)
    if isinstance(volume, CostVolume):
        return [CostVolume(o, volume.keyframe, volume.frames) for o in outputs]
    return outputs


def depth_head(params, volume, hyp, prefix="depth"):
    """1x1x1 convs + softmax over depth -> (probability volume, soft-argmax depth).

    The returned depth is the expectation sum_d P(z_d) z_d at quarter resolution.
    """
    x = volume.data if isinstance(volume, CostVolume) else gc.as_tensor(volume)
    s = gc.relu(gc.conv3d(x, params[f"{prefix}.head.conv0.w"],
                          params[f"{prefix}.head.conv0.b"]))
    s = gc.conv3d(s, params[f"{prefix}.head.conv1.w"], params[f"{prefix}.head.conv1.b"])
    _, d, h, w = s.shape
    prob = gc.softmax(gc.reshape(s, (d, h, w)), axis=0)
    depth = soft_argmax(prob, hyp)
    return prob, depth


def soft_argmax(prob, hyp):
    """Expected depth of a (D, h, w) probability volume."""
    p = gc.as_tensor(prob)
    return gc.sum(p * hyp.bins[:, None, None], axis=0)


def shannon_entropy(prob):
    """Per-pixel entropy -sum_d P log P of a (D, h, w) volume, 0*log(0) := 0."""
    p = prob.values if isinstance(prob, gc.Tensor) else np.asarray(prob, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    return -plogp.sum(axis=0)


def sigma_from_confidence(confidence, scale=2.0, floor=0.25):
    """Map confidence f in [0,1] to uncertainty sigma = scale*(1-f) + floor."""
    f = gc.as_tensor(confidence)
    return (1.0 - f) * scale + floor


def uncertainty_head(params, volume, config, prefix="depth"):
    """Confidence f in [0,1] and sigma = s*(1-f) + eps from a regularized volume.

    Four 3x3x3 convs with relu between, channel collapse to 1, sum over the
    depth axis, then a sigmoid.  The depth-axis reduction is a sum so the head
    sees evidence from every hypothesis.
    """
    x = volume.data if isinstance(volume, CostVolume) else gc.as_tensor(volume)
    for i in range(config.conf_layers):
        x = gc.conv3d(x, params[f"{prefix}.conf.conv{i}.w"],
                      params[f"{prefix}.conf.conv{i}.b"], padding=1)
        if i < config.conf_layers - 1:
            x = gc.relu(x)
    _, d, h, w = x.shape
    f = gc.sigmoid(gc.sum(gc.reshape(x, (d, h, w)), axis=0))
    return f, sigma_from_confidence(f, config.sigma_scale, config.sigma_floor)


def upsample(quarter_map, factor=4):
    """Corner-aligned bilinear upsample of an (h, w) map by an integer factor."""
    x = gc.as_tensor(quarter_map)
    if x.ndim != 2:
        raise ShapeMismatch(f"upsample: expected (h, w), got {x.shape}")
    h, w = x.shape
    ho, wo = h * factor, w * factor
    su = (w - 1) / (wo - 1) if wo > 1 else 0.0
    sv = (h - 1) / (ho - 1) if ho > 1 else 0.0
    u = np.arange(wo) * su
    v = np.arange(ho) * sv
    coords = np.stack(np.meshgrid(u, v), axis=-1)
    return gc.bilinear_sample(x, coords)


@dataclass
class DepthForward:
    """One full pass: per-block predictions plus the confidence outputs."""

    volumes: list
    prob_list: list          # (D, h, w) tensors, one per regularization block
    depth_q_list: list       # (h, w) quarter-resolution depth tensors
    depth_list: list         # (H, W) upsampled depth tensors
    confidence: gc.Tensor    # (h, w) f in [0, 1]
    sigma_q: gc.Tensor       # (h, w)
    sigma: gc.Tensor         # (H, W) upsampled
    entropy_q: np.ndarray    # (h, w) from the final probability volume

    @property
    def depth(self):
        return self.depth_list[-1]

    @property
    def prob(self):
        return self.prob_list[-1]


class DepthNetwork:
    """Parameter bundle plus the forward pass wiring the ops together."""

    def __init__(self, config=None, hyp=None, rng=None, prefix="depth"):
        self.config = config or DepthNetConfig()
        self.hyp = hyp or DepthHypothesis.linear()
        self.prefix = prefix
        rng = rng or np.random.default_rng(0)
        self.params = init_depth_params(self.config, rng, prefix)

    def encode(self, image):
        return encode_features(self.params, image, self.prefix)

    def forward(self, images, poses, intrinsics_q, keyframe, features=None):
        feats = features or [self.encode(im) for im in images]
        vol = build_cost_volume(feats, poses, intrinsics_q, self.hyp, keyframe)
        vols = regularize(self.params, vol, self.config, self.prefix)
        prob_list, zq_list, z_list = [], [], []
        for v in vols:
            prob, zq = depth_head(self.params, v, self.hyp, self.prefix)
            prob_list.append(prob)
            zq_list.append(zq)
            z_list.append(upsample(zq))
        f, sigma_q = uncertainty_head(self.params, vols[-1], self.config, self.prefix)
        return DepthForward(
            volumes=vols,
            prob_list=prob_list,
            depth_q_list=zq_list,
            depth_list=z_list,
            confidence=f,
            sigma_q=sigma_q,
            sigma=upsample(sigma_q),
            entropy_q=shannon_entropy(prob_list[-1]),
        )
