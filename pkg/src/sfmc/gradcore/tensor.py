"""Dense float64 tensors with reverse-mode differentiation.

The operation set is exactly what the depth/motion pipeline needs: elementwise
arithmetic, matmul, direct-loop convolutions, reductions, softmax, bilinear
sampling and a dense linear solve.  Everything runs on numpy arrays; graphs
are recorded eagerly and replayed in reverse topological order by
``backward``.

Conventions that tests rely on:

* all values are float64; integer/float inputs are promoted on wrapping;
* ``abs`` and ``relu`` use subgradient 0 at the kink;
* ``maximum``/``minimum`` route the gradient to the first argument on ties;
* convolution forward accumulates taps in a fixed (c_in, k...) nesting order
  so results are bit-identical to a naive loop with the same nesting.
"""

from __future__ import annotations

import numpy as np

from ..errors import BackwardOnDetached, ShapeMismatch
from ..geometry import bilinear_parts

_node_counter = 0


def _next_node_id():
    global _node_counter
    _node_counter += 1
    return _node_counter


class Node:
    """One recorded operation: op tag, parent tensors and a vjp closure."""

    __slots__ = ("id", "op", "parents", "vjp")

    def __init__(self, op, parents, vjp):
        self.id = _next_node_id()
        self.op = op
        self.parents = parents
        self.vjp = vjp


class Tensor:
    """n-dimensional float64 array, optionally tracked in a graph."""

    __slots__ = ("values", "requires_grad", "grad", "node")

    # make ndarray <op> Tensor defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values)

    def detach(self):
        """Same values, no graph membership."""
        return Tensor(self.values)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = "param" if self.requires_grad else ("node" if self.node else "const")
        return f"Tensor(shape={self.shape}, {tag})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_scalar(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def backward(self):
        backward(self)


def as_tensor(x):
    """Wrap an array-like as a constant tensor (no-op on tensors)."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def parameter(values):
    """Leaf tensor that accumulates gradients."""
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def constant(values):
    return Tensor(values)


def _tracked(*tensors):
    return any(t.requires_grad or t.node is not None for t in tensors)


def _make(values, op, parents, vjp):
    out = Tensor(values)
    if _tracked(*parents):
        out.node = Node(op, parents, vjp)
    return out


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_values(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_values("add", a.values, b.values)
    vals = a.values + b.values

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(vals, "add", [a, b], vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_values("sub", a.values, b.values)
    vals = a.values - b.values

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(vals, "sub", [a, b], vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_values("mul", a.values, b.values)
    vals = a.values * b.values

    def vjp(g):
        return (
            _unbroadcast(g * b.values, a.shape),
            _unbroadcast(g * a.values, b.shape),
        )

    return _make(vals, "mul", [a, b], vjp)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_values("div", a.values, b.values)
    vals = a.values / b.values

    def vjp(g):
        return (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * a.values / (b.values * b.values), b.shape),
        )

    return _make(vals, "div", [a, b], vjp)


def neg(a):
    a = as_tensor(a)
    return _make(-a.values, "neg", [a], lambda g: (-g,))


def relu(a):
    a = as_tensor(a)
    mask = a.values > 0

    def vjp(g):
        return (g * mask,)

    return _make(np.where(mask, a.values, 0.0), "relu", [a], vjp)


def sigmoid(a):
    a = as_tensor(a)
    # split by sign for numerical stability
    v = a.values
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _make(out, "sigmoid", [a], vjp)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.values)
    return _make(out, "exp", [a], lambda g: (g * out,))


def log(a):
    a = as_tensor(a)

    def vjp(g):
        return (g / a.values,)

    return _make(np.log(a.values), "log", [a], vjp)


def absolute(a):
    a = as_tensor(a)
    sign = np.sign(a.values)  # sign(0) = 0: subgradient choice at the kink

    def vjp(g):
        return (g * sign,)

    return _make(np.abs(a.values), "abs", [a], vjp)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.values)

    def vjp(g):
        return (g * 0.5 / out,)

    return _make(out, "sqrt", [a], vjp)


def pow_scalar(a, p):
    a = as_tensor(a)
    p = float(p)

    def vjp(g):
        return (g * p * a.values ** (p - 1.0),)

    return _make(a.values**p, "pow", [a], vjp)


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_values("maximum", a.values, b.values)
    take_a = a.values >= b.values  # ties go to the first argument

    def vjp(g):
        return (
            _unbroadcast(g * take_a, a.shape),
            _unbroadcast(g * ~take_a, b.shape),
        )

    return _make(np.where(take_a, a.values, b.values), "maximum", [a, b], vjp)


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_values("minimum", a.values, b.values)
    take_a = a.values <= b.values

    def vjp(g):
        return (
            _unbroadcast(g * take_a, a.shape),
            _unbroadcast(g * ~take_a, b.shape),
        )

    return _make(np.where(take_a, a.values, b.values), "minimum", [a, b], vjp)


# -- reductions and shape ops -------------------------------------------------


def _sum_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _sum_axes(axis, a.ndim)
    vals = a.values.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(vals, "sum", [a], vjp)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _sum_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    vals = a.values.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g, a.shape) / count,)

    return _make(vals, "mean", [a], vjp)


def softmax(a, axis):
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, "softmax", [a], vjp)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return _make(a.values.reshape(shape), "reshape", [a], vjp)


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)

    def vjp(g):
        return (g.transpose(inv),)

    return _make(a.values.transpose(axes), "transpose", [a], vjp)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    vals = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(vals, "concat", tensors, vjp)


def getitem(a, idx):
    """Basic slicing/integer indexing; backward scatters into zeros."""
    a = as_tensor(a)
    vals = a.values[idx]

    def vjp(g):
        out = np.zeros(a.shape)
        out[idx] = g
        return (out,)

    return _make(vals, "slice", [a], vjp)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul: needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dims of {a.shape} and {b.shape} disagree")
    vals = a.values @ b.values

    def vjp(g):
        ga = g @ np.swapaxes(b.values, -1, -2)
        gb = np.swapaxes(a.values, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(vals, "matmul", [a, b], vjp)


def solve(a, b):
    """x = a^-1 b for (..., n, n) against (..., n); differentiable in both."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != a.shape[-2] or a.shape[-1] != b.shape[-1]:
        raise ShapeMismatch(f"solve: incompatible shapes {a.shape} and {b.shape}")
    x = np.linalg.solve(a.values, b.values[..., None])[..., 0]

    def vjp(g):
        at = np.swapaxes(a.values, -1, -2)
        gb = np.linalg.solve(at, g[..., None])[..., 0]
        ga = -gb[..., :, None] * x[..., None, :]
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(x, "solve", [a, b], vjp)


# -- convolutions and pooling -------------------------------------------------


def _check_conv(x, w, b, x_rank, name):
    if x.ndim != x_rank or w.ndim != x_rank + 1:
        raise ShapeMismatch(
            f"{name}: expected input rank {x_rank} and kernel rank {x_rank + 1}, "
            f"got {x.shape} and {w.shape}"
        )
    if x.shape[0] != w.shape[1]:
        raise ShapeMismatch(f"{name}: input channels {x.shape} vs kernel {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeMismatch(f"{name}: bias {b.shape} vs kernel {w.shape}")


def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation of (C_in, H, W) with (C_out, C_in, kh, kw).

    Taps accumulate in (c_in, ky, kx) order, bit-identical to a naive loop.
    """
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    _check_conv(x.values, w.values, None if b is None else b.values, 3, "conv2d")
    sy, sx = (stride, stride) if isinstance(stride, int) else stride
    py, px = (padding, padding) if isinstance(padding, int) else padding
    cin, h, wdt = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * py - kh) // sy + 1
    wo = (wdt + 2 * px - kw) // sx + 1
    if ho <= 0 or wo <= 0:
        raise ShapeMismatch(f"conv2d: kernel {w.shape} too large for input {x.shape}")
    xp = np.zeros((cin, h + 2 * py, wdt + 2 * px))
    xp[:, py : py + h, px : px + wdt] = x.values
    out = np.zeros((cout, ho, wo))
    wv = w.values
    for ci in range(cin):
        for ky in range(kh):
            for kx in range(kw):
                win = xp[ci, ky : ky + sy * ho : sy, kx : kx + sx * wo : sx]
                out += wv[:, ci, ky, kx][:, None, None] * win

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wv)
        for ci in range(cin):
            for ky in range(kh):
                for kx in range(kw):
                    win = xp[ci, ky : ky + sy * ho : sy, kx : kx + sx * wo : sx]
                    gw[:, ci, ky, kx] = np.einsum("oij,ij->o", g, win, optimize=False)
                    gxp[ci, ky : ky + sy * ho : sy, kx : kx + sx * wo : sx] += np.einsum(
                        "oij,o->ij", g, wv[:, ci, ky, kx], optimize=False
                    )
        gx = gxp[:, py : py + h, px : px + wdt]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    parents = [x, w] if b is None else [x, w, b]
    vals = out if b is None else out + b.values[:, None, None]
    return _make(vals, "conv2d", parents, vjp)


def conv3d(x, w, b=None, padding=0):
    """Cross-correlation of (C_in, D, H, W) with (C_out, C_in, kd, kh, kw), stride 1."""
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    _check_conv(x.values, w.values, None if b is None else b.values, 4, "conv3d")
    pd, py, px = (padding,) * 3 if isinstance(padding, int) else padding
    cin, d, h, wdt = x.shape
    cout, _, kd, kh, kw = w.shape
    do, ho, wo = d + 2 * pd - kd + 1, h + 2 * py - kh + 1, wdt + 2 * px - kw + 1
    if do <= 0 or ho <= 0 or wo <= 0:
        raise ShapeMismatch(f"conv3d: kernel {w.shape} too large for input {x.shape}")
    xp = np.zeros((cin, d + 2 * pd, h + 2 * py, wdt + 2 * px))
    xp[:, pd : pd + d, py : py + h, px : px + wdt] = x.values
    out = np.zeros((cout, do, ho, wo))
    wv = w.values
    for ci in range(cin):
        for kz in range(kd):
            for ky in range(kh):
                for kx in range(kw):
                    win = xp[ci, kz : kz + do, ky : ky + ho, kx : kx + wo]
                    out += wv[:, ci, kz, ky, kx][:, None, None, None] * win

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wv)
        for ci in range(cin):
            for kz in range(kd):
                for ky in range(kh):
                    for kx in range(kw):
                        win = xp[ci, kz : kz + do, ky : ky + ho, kx : kx + wo]
                        gw[:, ci, kz, ky, kx] = np.einsum(
                            "ozij,zij->o", g, win, optimize=False
                        )
                        gxp[ci, kz : kz + do, ky : ky + ho, kx : kx + wo] += np.einsum(
                            "ozij,o->zij", g, wv[:, ci, kz, ky, kx], optimize=False
                        )
        gx = gxp[:, pd : pd + d, py : py + h, px : px + wdt]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2, 3))

    parents = [x, w] if b is None else [x, w, b]
    vals = out if b is None else out + b.values[:, None, None, None]
    return _make(vals, "conv3d", parents, vjp)


def avg_pool2d(x, kernel):
    """Same-size k x k box average over the trailing two axes of (C, H, W).

    Windows are clipped at the border and divided by the number of in-bounds
    taps, so border statistics stay unbiased.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeMismatch(f"avg_pool2d: expected (C, H, W), got {x.shape}")
    k = int(kernel)
    r = k // 2
    c, h, w = x.shape
    xp = np.zeros((c, h + 2 * r, w + 2 * r))
    xp[:, r : r + h, r : r + w] = x.values
    ones = np.zeros((h + 2 * r, w + 2 * r))
    ones[r : r + h, r : r + w] = 1.0
    acc = np.zeros((c, h, w))
    cnt = np.zeros((h, w))
    for ky in range(k):
        for kx in range(k):
            acc += xp[:, ky : ky + h, kx : kx + w]
            cnt += ones[ky : ky + h, kx : kx + w]
    out = acc / cnt

    def vjp(g):
        gn = g / cnt
        gxp = np.zeros_like(xp)
        for ky in range(k):
            for kx in range(k):
                gxp[:, ky : ky + h, kx : kx + w] += gn
        return (gxp[:, r : r + h, r : r + w],)

    return _make(out, "avg_pool2d", [x], vjp)


def bilinear_sample(field, coords):
    """Differentiable 4-neighbour interpolation, zero outside the field.

    field: (H, W) or (C, H, W); coords: (..., 2) as (u, v) with u along width.
    Gradients flow to both the field values and the coordinates.
    """
    field, coords = as_tensor(field), as_tensor(coords)
    if coords.shape[-1] != 2:
        raise ShapeMismatch(f"bilinear_sample: coords must end in 2, got {coords.shape}")
    single = field.ndim == 2
    fv = field.values[None] if single else field.values
    if fv.ndim != 3:
        raise ShapeMismatch(f"bilinear_sample: field must be (H,W) or (C,H,W), got {field.shape}")
    c, h, w = fv.shape
    cshape = coords.shape[:-1]
    uv = coords.values.reshape(-1, 2)
    j0, i0, fu, fv_frac, corners = bilinear_parts(uv, h, w)
    # corner values, zero when out of bounds
    vals = []
    for (ii, jj, inb) in corners:
        v = np.zeros((c, uv.shape[0]))
        v[:, inb] = fv[:, ii[inb], jj[inb]]
        vals.append(v)
    v00, v01, v10, v11 = vals
    wu, wv_ = fu, fv_frac
    # incremental blend: exact for constant fields (weights sum to one exactly)
    out_flat = v00 + wu * (v01 - v00) + wv_ * (v10 - v00) + (wu * wv_) * (
        (v00 - v01) + (v11 - v10)
    )
    out = out_flat.reshape((c,) + cshape)
    if single:
        out = out[0]

    def vjp(g):
        gf_flat = g.reshape(1, -1) if single else g.reshape(c, -1)
        gfield = np.zeros((c, h, w))
        weights = [
            (1 - wu) * (1 - wv_),
            wu * (1 - wv_),
            (1 - wu) * wv_,
            wu * wv_,
        ]
        for (ii, jj, inb), wt in zip(corners, weights):
            contrib = (gf_flat * wt)[:, inb]
            np.add.at(gfield, (slice(None), ii[inb], jj[inb]), contrib)
        # gradient w.r.t. coordinates
        du = ((v01 - v00) * (1 - wv_) + (v11 - v10) * wv_) * 1.0
        dv = ((v10 - v00) * (1 - wu) + (v11 - v01) * wu) * 1.0
        gu = (gf_flat * du).sum(axis=0)
        gv = (gf_flat * dv).sum(axis=0)
        gcoords = np.stack([gu, gv], axis=-1).reshape(coords.shape)
        gfield_out = gfield[0] if single else gfield
        return gfield_out, gcoords

    return _make(out, "bilinear_sample", [field, coords], vjp)


def custom_op(values, parents, vjp, op="custom"):
    """Record a hand-written operation (forward values + vjp closure)."""
    return _make(np.asarray(values, dtype=np.float64), op, [as_tensor(p) for p in parents], vjp)


# numpy-style aliases
sum = tsum  # noqa: A001 - module-level shadow, accessed as gradcore.sum
mean = tmean


# -- reverse pass --------------------------------------------------------------


def backward(loss):
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``."""
    if not isinstance(loss, Tensor) or loss.node is None:
        raise BackwardOnDetached("backward() needs a tensor produced by graph ops")
    if loss.size != 1:
        raise ShapeMismatch(f"backward: loss must be scalar, got shape {loss.shape}")

    # iterative topological order over nodes
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if t.node is None:
            continue
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t.node.parents:
            if p.node is not None and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.values)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        parent_grads = t.node.vjp(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None:
                continue
            if p.node is not None:
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg
            elif p.requires_grad:
                if p.grad is None:
                    p.grad = np.zeros_like(p.values)
                p.grad = p.grad + pg
