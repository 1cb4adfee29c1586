"""Minimal reverse-mode autodiff over numpy arrays.

Covers exactly the op set the translation networks need: convolutions,
transposed convolutions, pointwise nonlinearities, channel-wise
normalization, concatenation/slicing, 2x average pooling and a few
scalar reductions.  Ops preserve the input dtype (float32 in training,
float64 in numeric checks), so scalar constants are kept as python
floats throughout.

Gradients flow only where needed: a conv skips its weight-gradient
kernel when the weight tensor does not require grad (frozen nets,
discriminator weights during a generator step), and whole subgraphs
downstream of ``detach`` are never walked.
"""

import numpy as np

from . import kernels


class Tensor:
    """Array node in the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, rg={self.requires_grad})"


def _node(data, parents, backward_fn):
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss):
    """Backpropagate from a scalar loss tensor."""
    assert loss.data.size == 1, "backward expects a scalar"
    if not loss.requires_grad:
        return
    # iterative post-order topo sort over the requires_grad subgraph
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node)


# -- convolution ops ----------------------------------------------------------

def conv2d(x, w, stride=1, pad=0):
    y = kernels.conv2d_fwd(x.data, w.data, stride, pad)
    h, wdt = x.data.shape[2], x.data.shape[3]
    kh, kw = w.data.shape[2], w.data.shape[3]

    def bw(out):
        if x.requires_grad:
            x._accum(kernels.conv2d_bwd_input(out.grad, w.data, stride, pad, h, wdt))
        if w.requires_grad:
            w._accum(kernels.conv2d_bwd_weight(x.data, out.grad, stride, pad, kh, kw))

    return _node(y, (x, w), bw)


def conv_transpose2d(x, v, stride=2, pad=1):
    """Transposed conv; v has layout (C_in, C_out, kh, kw).

    Output size is (H-1)*stride - 2*pad + kh.
    """
    n, ci, h, wdt = x.data.shape
    kh, kw = v.data.shape[2], v.data.shape[3]
    oh = (h - 1) * stride - 2 * pad + kh
    ow = (wdt - 1) * stride - 2 * pad + kw
    y = kernels.conv2d_bwd_input(x.data, v.data, stride, pad, oh, ow)

    def bw(out):
        if x.requires_grad:
            x._accum(kernels.conv2d_fwd(out.grad, v.data, stride, pad))
        if v.requires_grad:
            v._accum(kernels.conv2d_bwd_weight(out.grad, x.data, stride, pad, kh, kw))

    return _node(y, (x, v), bw)


def bias_add(x, b):
    """Add a per-channel bias (C,) to (N,C,H,W)."""
    y = x.data + b.data[None, :, None, None]

    def bw(out):
        if x.requires_grad:
            x._accum(out.grad)
        if b.requires_grad:
            b._accum(out.grad.sum(axis=(0, 2, 3)))

    return _node(y, (x, b), bw)


# -- pointwise ops ------------------------------------------------------------

def leaky_relu(x, alpha=0.2):
    mask = x.data > 0
    y = np.where(mask, x.data, x.data * alpha)

    def bw(out):
        if x.requires_grad:
            x._accum(np.where(mask, out.grad, out.grad * alpha))

    return _node(y, (x,), bw)


def relu(x):
    mask = x.data > 0
    y = np.where(mask, x.data, 0.0).astype(x.data.dtype, copy=False)

    def bw(out):
        if x.requires_grad:
            x._accum(np.where(mask, out.grad, 0.0).astype(out.grad.dtype, copy=False))

    return _node(y, (x,), bw)


def tanh(x):
    y = np.tanh(x.data)

    def bw(out):
        if x.requires_grad:
            x._accum(out.grad * (1.0 - y * y))

    return _node(y, (x,), bw)


PIXEL_NORM_EPS = 1e-8


def pixel_norm(x, eps=PIXEL_NORM_EPS):
    """Normalize each pixel's channel vector to unit RMS."""
    c = x.data.shape[1]
    m = np.mean(x.data * x.data, axis=1, keepdims=True) + eps
    s = 1.0 / np.sqrt(m)
    s = s.astype(x.data.dtype, copy=False)
    y = x.data * s

    def bw(out):
        if x.requires_grad:
            dot = np.sum(out.grad * x.data, axis=1, keepdims=True)
            x._accum(out.grad * s - x.data * (dot * (s * s * s) * (1.0 / c)))

    return _node(y, (x,), bw)


def add(a, b):
    y = a.data + b.data
    assert a.data.shape == b.data.shape

    def bw(out):
        if a.requires_grad:
            a._accum(out.grad)
        if b.requires_grad:
            b._accum(out.grad)

    return _node(y, (a, b), bw)


def sub(a, b):
    y = a.data - b.data
    assert a.data.shape == b.data.shape

    def bw(out):
        if a.requires_grad:
            a._accum(out.grad)
        if b.requires_grad:
            b._accum(-out.grad)

    return _node(y, (a, b), bw)


def add_scalar(x, c):
    y = x.data + c

    def bw(out):
        if x.requires_grad:
            x._accum(out.grad)

    return _node(y, (x,), bw)


def mul_scalar(x, c):
    y = x.data * c

    def bw(out):
        if x.requires_grad:
            x._accum(out.grad * c)

    return _node(y, (x,), bw)


def absolute(x):
    y = np.abs(x.data)

    def bw(out):
        if x.requires_grad:
            x._accum(out.grad * np.sign(x.data))

    return _node(y, (x,), bw)


def square(x):
    y = x.data * x.data

    def bw(out):
        if x.requires_grad:
            x._accum(out.grad * (2.0 * x.data))

    return _node(y, (x,), bw)


def mean(x):
    y = x.data.mean()

    def bw(out):
        if x.requires_grad:
            x._accum(np.full_like(x.data, out.grad * (1.0 / x.data.size)))

    return _node(np.asarray(y), (x,), bw)


# -- shape ops ----------------------------------------------------------------

def concat(tensors, axis=1):
    y = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bw(out):
        start = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                sl = [slice(None)] * out.grad.ndim
                sl[axis] = slice(start, start + size)
                t._accum(out.grad[tuple(sl)])
            start += size

    return _node(y, tuple(tensors), bw)


def narrow(x, axis, start, length):
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    y = x.data[sl]

    def bw(out):
        if x.requires_grad:
            g = np.zeros_like(x.data)
            g[sl] = out.grad
            x._accum(g)

    return _node(np.ascontiguousarray(y), (x,), bw)


def avg_pool2(x):
    """2x2 average pooling, stride 2. Spatial dims must be even."""
    n, c, h, w = x.data.shape
    assert h % 2 == 0 and w % 2 == 0, (h, w)
    y = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bw(out):
        if x.requires_grad:
            g = np.repeat(np.repeat(out.grad, 2, axis=2), 2, axis=3)
            x._accum(g * 0.25)

    return _node(y, (x,), bw)
