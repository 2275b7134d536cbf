"""Reverse-mode differentiation over the NCHW primitives.

A forward pass records a graph of :class:`Node` objects; the graph
reachable from the loss is the tape.  :func:`backward` replays it in
exact reverse topological order, accumulating gradients additively into
``node.grad``.  Leaves wrapped explicitly in :class:`Node` are the
trainable parameters; plain ndarrays flowing through the same ops are
treated as constants, and an op applied to ndarrays only skips recording
entirely and returns an ndarray.  That lets the upsampling pipelines be
written once and used both for inference and for training.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import PadSpec, ShapeError


class DivergenceError(RuntimeError):
    """Raised when non-finite gradients reach the optimizer."""


class Node:
    """A value in the recorded graph: data, accumulated grad, parents."""

    __slots__ = ("data", "grad", "name", "_parents", "_backprop")

    def __init__(self, data, parents=(), backprop=None, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.name = name
        self._parents = tuple(parents)
        self._backprop = backprop

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        tag = self.name or "node"
        return f"Node({tag}, shape={self.data.shape}, dtype={self.data.dtype})"


def value_of(x):
    """Underlying ndarray of a Node, or the input itself."""
    return x.data if isinstance(x, Node) else x


def _any_node(*xs) -> bool:
    return any(isinstance(x, Node) for x in xs)


def _emit(out_data, pairs, name=None):
    """Build a Node from (parent, vjp) pairs; non-Node parents are dropped."""
    links = [(p, vjp) for p, vjp in pairs if isinstance(p, Node)]
    parents = tuple(p for p, _ in links)

    def backprop(g):
        for p, vjp in links:
            p.accumulate(vjp(g))

    return Node(out_data, parents, backprop, name=name)


def _topo(root: Node):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order  # parents before children


def backward(loss: Node, seed: float = 1.0) -> None:
    """Reverse pass from ``loss``, seeding d(loss)/d(loss) = ``seed``."""
    if not isinstance(loss, Node):
        raise TypeError("backward needs a recorded Node; run a tracked forward first")
    order = _topo(loss)
    loss.accumulate(np.full_like(loss.data, seed))
    for node in reversed(order):
        if node._backprop is not None and node.grad is not None:
            node._backprop(node.grad)


def zero_grad(nodes) -> None:
    for n in nodes:
        n.grad = None


def grad_of(node: Node) -> np.ndarray:
    return node.grad if node.grad is not None else np.zeros_like(node.data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b):
    out = value_of(a) + value_of(b)
    if not _any_node(a, b):
        return out
    return _emit(
        out,
        [
            (a, lambda g: _unbroadcast(g, value_of(a).shape)),
            (b, lambda g: _unbroadcast(g, value_of(b).shape)),
        ],
        name="add",
    )


def sub(a, b):
    out = value_of(a) - value_of(b)
    if not _any_node(a, b):
        return out
    return _emit(
        out,
        [
            (a, lambda g: _unbroadcast(g, value_of(a).shape)),
            (b, lambda g: _unbroadcast(-g, value_of(b).shape)),
        ],
        name="sub",
    )


def mul(a, b):
    ad, bd = value_of(a), value_of(b)
    out = ad * bd
    if not _any_node(a, b):
        return out
    return _emit(
        out,
        [
            (a, lambda g: _unbroadcast(g * bd, ad.shape)),
            (b, lambda g: _unbroadcast(g * ad, bd.shape)),
        ],
        name="mul",
    )


def scale(a, s: float):
    out = value_of(a) * s
    if not _any_node(a):
        return out
    return _emit(out, [(a, lambda g: g * s)], name="scale")


def one_minus(a):
    out = 1.0 - value_of(a)
    if not _any_node(a):
        return out
    return _emit(out, [(a, lambda g: -g)], name="one_minus")


def relu(a):
    ad = value_of(a)
    out = np.maximum(ad, 0)
    if not _any_node(a):
        return out
    return _emit(out, [(a, lambda g: g * (ad > 0))], name="relu")


def leaky_relu(a, slope: float = 0.1):
    ad = value_of(a)
    out = np.where(ad > 0, ad, slope * ad)
    if not _any_node(a):
        return out
    return _emit(
        out, [(a, lambda g: g * np.where(ad > 0, 1.0, slope))], name="leaky_relu"
    )


def sigmoid(a):
    s = T.sigmoid(value_of(a))
    if not _any_node(a):
        return s
    return _emit(s, [(a, lambda g: g * s * (1.0 - s))], name="sigmoid")


def softmax_channel(a):
    s = T.softmax_channel(value_of(a))
    if not _any_node(a):
        return s

    def vjp(g):
        return s * (g - (g * s).sum(axis=1, keepdims=True))

    return _emit(s, [(a, vjp)], name="softmax_channel")


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def conv2d(x, w, bias=None, *, stride: int = 1, pad: PadSpec | None = None):
    """Dense cross-correlation; w is (out, in, k, k), bias (out,) or None."""
    xd, wd = value_of(x), value_of(w)
    bd = value_of(bias) if bias is not None else None
    k = wd.shape[2]
    if pad is None:
        pad = PadSpec.same(k // 2)
    if xd.shape[1] != wd.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input has {xd.shape[1]}, "
            f"weights expect {wd.shape[1]}"
        )
    cols = T.im2col(xd, k, stride, pad)
    out = T.conv_cols_matmul(cols, wd)
    if bd is not None:
        out = out + bd[None, :, None, None]
    if not _any_node(x, w, bias):
        return out
    n, c = xd.shape[0], xd.shape[1]
    o, oh, ow = out.shape[1], out.shape[2], out.shape[3]
    spatial = xd.shape[2:]

    def vjp_x(g):
        gm = g.reshape(n, o, oh * ow)
        dcols = np.matmul(wd.reshape(o, -1).T, gm)  # (n, c*k*k, oh*ow)
        return T.col2im(
            dcols.reshape(n, c, k, k, oh, ow), spatial, k, stride, pad
        )

    def vjp_w(g):
        gm = g.reshape(n, o, oh * ow)
        colsm = cols.reshape(n, c * k * k, oh * ow)
        dw = np.matmul(gm, colsm.transpose(0, 2, 1)).sum(axis=0)
        return dw.reshape(o, c, k, k)

    def vjp_b(g):
        return g.sum(axis=(0, 2, 3))

    return _emit(out, [(x, vjp_x), (w, vjp_w), (bias, vjp_b)], name="conv2d")


def conv2d_depthwise(x, w, bias=None, *, stride: int = 1, pad: PadSpec | None = None):
    """Per-channel convolution; w is (c, k, k), bias (c,) or None."""
    xd, wd = value_of(x), value_of(w)
    bd = value_of(bias) if bias is not None else None
    k = wd.shape[1]
    if pad is None:
        pad = PadSpec.same(k // 2)
    if xd.shape[1] != wd.shape[0]:
        raise ShapeError(
            f"depthwise channel mismatch: input has {xd.shape[1]}, "
            f"weights expect {wd.shape[0]}"
        )
    cols = T.im2col(xd, k, stride, pad)
    out = np.einsum("ncijhw,cij->nchw", cols, wd, optimize=True)
    if bd is not None:
        out = out + bd[None, :, None, None]
    if not _any_node(x, w, bias):
        return out
    spatial = xd.shape[2:]

    def vjp_x(g):
        dcols = np.einsum("cij,nchw->ncijhw", wd, g, optimize=True)
        return T.col2im(dcols, spatial, k, stride, pad)

    def vjp_w(g):
        return np.einsum("ncijhw,nchw->cij", cols, g, optimize=True)

    def vjp_b(g):
        return g.sum(axis=(0, 2, 3))

    return _emit(out, [(x, vjp_x), (w, vjp_w), (bias, vjp_b)], name="dwconv2d")


def conv1x1(x, w, bias=None):
    wd = value_of(w)
    if wd.shape[2] != 1 or wd.shape[3] != 1:
        raise ShapeError(f"conv1x1 requires k=1 weights, got {wd.shape[2:]}")
    return conv2d(x, w, bias, stride=1, pad=PadSpec.same(0))


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def interp_nearest_x2(x):
    out = T.interp_nearest_x2(value_of(x))
    if not _any_node(x):
        return out
    n, c, h, w = value_of(x).shape

    def vjp(g):
        return g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))

    return _emit(out, [(x, vjp)], name="nn_x2")


def interp_bilinear_x2(x, align_corners: bool = False):
    xd = value_of(x)
    out = T.interp_bilinear_x2(xd, align_corners)
    if not _any_node(x):
        return out
    n, c, h, w = xd.shape
    y0, y1, ty = T._bilinear_axis(h, align_corners, xd.dtype)
    x0, x1, tx = T._bilinear_axis(w, align_corners, xd.dtype)

    def vjp(g):
        # adjoint of the separable gather: scatter along rows, then cols
        drows = np.zeros((n, c, h, 2 * w), dtype=g.dtype)
        gy = g.transpose(2, 0, 1, 3)
        dr = drows.transpose(2, 0, 1, 3)
        np.add.at(dr, y0, gy * (1 - ty)[:, None, None, None])
        np.add.at(dr, y1, gy * ty[:, None, None, None])
        dx = np.zeros((n, c, h, w), dtype=g.dtype)
        gx = drows.transpose(3, 0, 1, 2)
        dxt = dx.transpose(3, 0, 1, 2)
        np.add.at(dxt, x0, gx * (1 - tx)[:, None, None, None])
        np.add.at(dxt, x1, gx * tx[:, None, None, None])
        return dx

    return _emit(out, [(x, vjp)], name="bilinear_x2")


def maxpool2x2(x):
    xd = value_of(x)
    out = T.maxpool2x2(xd)
    if not _any_node(x):
        return out
    n, c, h, w = xd.shape
    win = (
        xd.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    # argmax picks the first maximum in row-major (r, s) window order
    sel = win.argmax(axis=-1)

    def vjp(g):
        d = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(d, sel[..., None], g[..., None], axis=-1)
        return (
            d.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )

    return _emit(out, [(x, vjp)], name="maxpool2x2")


def pixel_shuffle_x2(x):
    out = T.pixel_shuffle_x2(value_of(x))
    if not _any_node(x):
        return out
    return _emit(out, [(x, T.pixel_unshuffle_x2)], name="pixel_shuffle_x2")


def interleave2x2(tl, tr, bl, br):
    """Weave four (n, c, H, W) phase maps into (n, c, 2H, 2W)."""
    subs = [value_of(s) for s in (tl, tr, bl, br)]
    n, c, h, w = subs[0].shape
    out = np.empty((n, c, 2 * h, 2 * w), dtype=subs[0].dtype)
    phases = ((0, 0), (0, 1), (1, 0), (1, 1))
    for (r, s), sub in zip(phases, subs):
        out[:, :, r::2, s::2] = sub
    if not _any_node(tl, tr, bl, br):
        return out

    def make_vjp(r, s):
        return lambda g: g[:, :, r::2, s::2]

    pairs = [
        (src, make_vjp(r, s)) for (r, s), src in zip(phases, (tl, tr, bl, br))
    ]
    return _emit(out, pairs, name="interleave2x2")


def concat_channels(a, b):
    ad, bd = value_of(a), value_of(b)
    out = np.concatenate([ad, bd], axis=1)
    if not _any_node(a, b):
        return out
    ca = ad.shape[1]
    return _emit(
        out,
        [(a, lambda g: g[:, :ca]), (b, lambda g: g[:, ca:])],
        name="concat_channels",
    )


# ---------------------------------------------------------------------------
# reassembly and gated fusion
# ---------------------------------------------------------------------------


def reassemble(x_de, kernels, k: int):
    """Gather-and-dot: out(c, i, j) = sum_m kern(m, i, j) * window_m(c, i//2, j//2).

    ``kernels`` has K^2 channels at twice the resolution of ``x_de``; tap m
    addresses window offset (m // K - K//2, m % K - K//2), zero outside.
    """
    xd, kd = value_of(x_de), value_of(kernels)
    n, c, h, w = xd.shape
    if kd.shape != (n, k * k, 2 * h, 2 * w):
        raise ShapeError(
            f"kernel map {kd.shape} does not match decoder {xd.shape} with K={k}"
        )
    k2 = k * k
    # stacked per-position GEMMs: (n*h*w, c, K^2) @ (n*h*w, K^2, 4 phases)
    patches = (
        T.im2col(xd, k, 1, PadSpec.same(k // 2))
        .reshape(n, c, k2, h, w)
        .transpose(0, 3, 4, 1, 2)
        .reshape(n * h * w, c, k2)
    )
    kmat = (
        kd.reshape(n, k2, h, 2, w, 2)
        .transpose(0, 2, 4, 1, 3, 5)
        .reshape(n * h * w, k2, 4)
    )
    out = (
        np.matmul(patches, kmat)
        .reshape(n, h, w, c, 2, 2)
        .transpose(0, 3, 1, 4, 2, 5)
        .reshape(n, c, 2 * h, 2 * w)
    )
    if not _any_node(x_de, kernels):
        return out

    def _grad_phases(g):
        return (
            g.reshape(n, c, h, 2, w, 2)
            .transpose(0, 2, 4, 1, 3, 5)
            .reshape(n * h * w, c, 4)
        )

    def vjp_x(g):
        dpatch = np.matmul(_grad_phases(g), kmat.transpose(0, 2, 1))
        dcols = (
            dpatch.reshape(n, h, w, c, k2)
            .transpose(0, 3, 4, 1, 2)
            .reshape(n, c, k, k, h, w)
        )
        return T.col2im(dcols, (h, w), k, 1, PadSpec.same(k // 2))

    def vjp_k(g):
        dk = np.matmul(patches.transpose(0, 2, 1), _grad_phases(g))
        return (
            dk.reshape(n, h, w, k2, 2, 2)
            .transpose(0, 3, 1, 4, 2, 5)
            .reshape(n, k2, 2 * h, 2 * w)
        )

    return _emit(out, [(x_de, vjp_x), (kernels, vjp_k)], name="reassemble")


def blend(f_en, f_up, g):
    """Convex gate blend f_en * g + f_up * (1 - g); g broadcasts over channels."""
    fe, fu, gd = value_of(f_en), value_of(f_up), value_of(g)
    out = fe * gd + fu * (1.0 - gd)
    if not _any_node(f_en, f_up, g):
        return out

    def vjp_g(grad):
        return _unbroadcast(grad * (fe - fu), gd.shape)

    return _emit(
        out,
        [
            (f_en, lambda grad: grad * gd),
            (f_up, lambda grad: grad * (1.0 - gd)),
            (g, vjp_g),
        ],
        name="blend",
    )


# ---------------------------------------------------------------------------
# reductions and losses
# ---------------------------------------------------------------------------


def sum_all(a):
    ad = value_of(a)
    out = np.asarray(ad.sum(), dtype=ad.dtype)
    if not _any_node(a):
        return out
    return _emit(out, [(a, lambda g: np.full_like(ad, g))], name="sum")


def mean_all(a):
    ad = value_of(a)
    out = np.asarray(ad.mean(), dtype=ad.dtype)
    if not _any_node(a):
        return out
    return _emit(out, [(a, lambda g: np.full_like(ad, g / ad.size))], name="mean")


def mse_loss(pred, target):
    pd, td = value_of(pred), value_of(target)
    diff = pd - td
    out = np.asarray((diff * diff).mean(), dtype=pd.dtype)
    if not _any_node(pred, target):
        return out
    return _emit(
        out,
        [
            (pred, lambda g: (2.0 / diff.size) * diff * g),
            (target, lambda g: (-2.0 / diff.size) * diff * g),
        ],
        name="mse",
    )


def softmax_cross_entropy(logits, labels: np.ndarray):
    """Mean per-pixel cross entropy; labels are int (n, h, w)."""
    zd = value_of(logits)
    n, c, h, w = zd.shape
    z = zd - zd.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, labels[:, None, :, :], axis=1)[:, 0]
    out = np.asarray(-picked.mean(), dtype=zd.dtype)
    if not _any_node(logits):
        return out

    def vjp(g):
        soft = np.exp(logp)
        onehot = np.zeros_like(soft)
        np.put_along_axis(onehot, labels[:, None, :, :], 1.0, axis=1)
        return (soft - onehot) * (g / (n * h * w))

    return _emit(out, [(logits, vjp)], name="xent")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def gradcheck(fn, inputs, eps: float = 1e-5) -> float:
    """Central-difference check of ``fn``'s analytic gradients.

    ``fn`` maps the wrapped inputs to a scalar Node.  Inputs are promoted
    to float64.  Returns the max over all coordinates of
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    nodes = [
        Node(np.ascontiguousarray(a, dtype=np.float64), name=f"arg{i}")
        for i, a in enumerate(inputs)
    ]
    loss = fn(*nodes)
    if not isinstance(loss, Node) or loss.data.size != 1:
        raise TypeError("gradcheck target must return a scalar Node")
    backward(loss)
    worst = 0.0
    for node in nodes:
        analytic = grad_of(node).ravel()
        flat = node.data.reshape(-1) if node.data.ndim else node.data.reshape(1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(value_of(fn(*nodes)))
            flat[i] = orig - eps
            fm = float(value_of(fn(*nodes)))
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            a = float(analytic[i])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst = err
    return worst


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def sgd_step(params, grads, lr: float, momentum: float = 0.0, velocity=None):
    """One classical-momentum update on plain arrays.

    v <- momentum * v + grad; p <- p - lr * v.  Returns (params, velocity).
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must be in [0, 1)")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    new_params, new_vel = [], []
    for i, (p, g, v) in enumerate(zip(params, grads, velocity)):
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {i}")
        v = momentum * v + g
        new_params.append(p - lr * v)
        new_vel.append(v)
    return new_params, new_vel


class MomentumSGD:
    """Stateful momentum SGD over parameter Nodes (updates data in place)."""

    def __init__(self, params, lr: float, momentum: float = 0.0):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        zero_grad(self.params)

    def step(self):
        for p, v in zip(self.params, self._velocity):
            g = grad_of(p)
            if not np.all(np.isfinite(g)):
                raise DivergenceError(
                    f"non-finite gradient for parameter {p.name or '<unnamed>'}"
                )
            v *= self.momentum
            v += g
            p.data -= self.lr * v
