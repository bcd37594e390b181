"""Dense float64 tensors with a reverse-mode gradient tape.

Every op records its parents and a closure that pushes the output gradient
back to them. :func:`backward` visits the recorded graph in reverse
topological order, so any scalar built from these ops can be differentiated.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


def _as_array(value):
    return np.asarray(value, dtype=DTYPE)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (undo numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node of the gradient tape holding a float64 array."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, name=None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.grad = None
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        backward(self, grad)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data, parents, backward_fn):
    return Tensor(data, _parents=tuple(parents), _backward=backward_fn)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad = t.grad + g


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, grad=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if grad is None:
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    grads = {id(loss): _as_array(grad).reshape(loss.shape)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _accumulate(node, g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _node(out, (a, b), bw)


def power(a, exponent):
    a = as_tensor(a)
    p = float(exponent)

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _node(a.data**p, (a,), bw)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    # split by sign so neither branch overflows
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def absolute(a):
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _node(np.abs(a.data), (a,), lambda g: (g * sign,))


def amax(a, axis=None, keepdims=False):
    """Maximum; the gradient goes to the first maximal entry along ``axis``."""
    a = as_tensor(a)
    out = np.max(a.data, axis=axis, keepdims=True)
    if axis is None:
        mask = np.zeros(a.size, dtype=DTYPE)
        mask[np.argmax(a.data)] = 1.0
        mask = mask.reshape(a.shape)
    else:
        idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
        mask = np.zeros_like(a.data)
        np.put_along_axis(mask, idx, 1.0, axis=axis)
    result = out if keepdims else np.squeeze(out, axis=axis) if axis is not None else out.reshape(())

    def bw(g):
        g = np.asarray(g)
        if not keepdims:
            g = np.expand_dims(g, axis) if axis is not None else g.reshape((1,) * a.ndim)
        return (g * mask,)

    return _node(result, (a,), bw)


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _node(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index):
    a = as_tensor(a)

    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.data[index], (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * b.data, g * a.data
        if b.ndim == 1:
            return np.multiply.outer(g, b.data), _unbroadcast(np.einsum("...i,...ij->j", g, a.data), b.shape)
        if a.ndim == 1:
            return g @ b.data.swapaxes(-1, -2), np.multiply.outer(a.data, g)
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.data @ b.data, (a, b), bw)


# ---------------------------------------------------------------------------
# softmax family


def softmax(a, axis=-1):
    """Max-shifted softmax; outputs are positive and sum to one along ``axis``."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), bw)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), bw)


def cross_entropy(logits, labels, reduction="mean"):
    """Negative log-likelihood of integer ``labels`` under row-wise softmax."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = logits.shape[-1]
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got {labels.tolist()}")
    lp = log_softmax(logits, axis=-1)
    if logits.ndim == 1:
        nll = -lp[int(labels)]
        return nll
    picked = lp[np.arange(logits.shape[0]), labels]
    return -(picked.mean() if reduction == "mean" else picked.sum())


# ---------------------------------------------------------------------------
# convolution


def _pad_hw(x, padding):
    if padding == 0:
        return x
    return np.pad(x, [(0, 0)] * (x.ndim - 2) + [(padding, padding)] * 2)


def _windows(xp, k, h_out, w_out):
    """View (N, C, K, K, H', W') of all stride-1 K×K windows."""
    n, c = xp.shape[:2]
    s = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, k, k, h_out, w_out), strides=(s[0], s[1], s[2], s[3], s[2], s[3]), writeable=False
    )


def conv2d(x, weight, bias=None, padding=0):
    """Stride-1 cross-correlation of ``x`` (N,C,H,W or C,H,W) with ``weight`` (O,C,K,K)."""
    x, weight = as_tensor(x), as_tensor(weight)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects (N,)C,H,W input and O,C,K,K kernel; got {x.shape} and {weight.shape}")
    n, c, h, w = xd.shape
    c_out, c_in, k, k2 = weight.shape
    if c != c_in or k != k2:
        raise ValueError(f"conv2d shape mismatch: input channels {c} vs kernel {weight.shape}")
    if k % 2 == 0:
        raise ValueError(f"conv2d kernel size must be odd, got {k}")
    if padding < 0:
        raise ValueError("padding must be >= 0")
    h_out, w_out = h + 2 * padding - k + 1, w + 2 * padding - k + 1
    if h_out < 1 or w_out < 1:
        raise ValueError(f"conv2d output would be {h_out}x{w_out} for input {h}x{w}, K={k}, padding={padding}")
    xp = _pad_hw(xd, padding)
    cols = _windows(xp, k, h_out, w_out)
    out = np.einsum("ncijhw,ocij->nohw", cols, weight.data, optimize=True)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents.append(bias)
    if squeeze:
        out = out[0]

    def bw(g):
        g4 = g[None] if squeeze else g
        gw = np.einsum("ncijhw,nohw->ocij", cols, g4, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + h_out, j : j + w_out] += np.einsum("nohw,oc->nchw", g4, weight.data[:, :, i, j])
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [gx[0] if squeeze else gx, gw]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _node(out, parents, bw)


def unfold(x, r):
    """Zero-padded R×R neighbourhoods: (N,C,H,W) -> (N,C,R*R,H,W).

    Entry ``[n, c, u*R+v, h, w]`` is ``x[n, c, h+u-R//2, w+v-R//2]`` (0 off-plane).
    """
    x = as_tensor(x)
    if r % 2 == 0:
        raise ValueError(f"footprint size must be odd, got {r}")
    n, c, h, w = x.shape
    p = r // 2
    xp = _pad_hw(x.data, p)
    out = _windows(xp, r, h, w).reshape(n, c, r * r, h, w).copy()

    def bw(g):
        g = g.reshape(n, c, r, r, h, w)
        gxp = np.zeros_like(xp)
        for u in range(r):
            for v in range(r):
                gxp[:, :, u : u + h, v : v + w] += g[:, :, u, v]
        return (gxp[:, :, p : p + h, p : p + w],)

    return _node(out, (x,), bw)


def avg_pool2d(x, k):
    """Non-overlapping k×k mean pooling; H and W must be divisible by k."""
    x = as_tensor(x)
    *lead, h, w = x.shape
    if h % k or w % k:
        raise ValueError(f"avg_pool2d: {h}x{w} not divisible by {k}")
    y = x.reshape(*lead, h // k, k, w // k, k)
    return mean(y, axis=(len(lead) + 1, len(lead) + 3))


def global_avg_pool(x):
    return mean(x, axis=(-2, -1))


def straight_through(soft, hard):
    """Forward value ``hard``, gradient of ``soft``."""
    soft = as_tensor(soft)
    return soft + Tensor(np.asarray(hard, dtype=DTYPE) - soft.data)
