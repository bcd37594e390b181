"""Parameterised layers, recurrent cells and optimizers on top of the tape."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Container with named parameters in declaration order."""

    def __init__(self):
        self._params = OrderedDict()
        self._children = OrderedDict()

    def param(self, name, value):
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def child(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_params(self):
        return sum(p.size for p in self.parameters())

    def get_flat(self):
        ps = self.parameters()
        if not ps:
            return np.zeros(0)
        return np.concatenate([p.data.ravel() for p in ps])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params():
            raise ValueError(f"expected {self.n_params()} parameters, got {flat.size}")
        offset = 0
        for p in self.parameters():
            p.data = flat[offset : offset + p.size].reshape(p.shape).copy()
            offset += p.size

    def state_dict(self):
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state):
        for name, p in self.named_parameters():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.weight = self.param("weight", _uniform(rng, (n_out, n_in), n_in))
        self.bias = self.param("bias", np.zeros(n_out))

    def __call__(self, x):
        return ag.matmul(x, self.weight.T) + self.bias


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, padding=None):
        super().__init__()
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.padding = kernel // 2 if padding is None else padding
        self.weight = self.param("weight", _uniform(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel))
        self.bias = self.param("bias", np.zeros(c_out))

    def __call__(self, x):
        return ag.conv2d(x, self.weight, self.bias, self.padding)


class GRUCell(Module):
    """Gated recurrent unit.

    r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
    z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
    n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h' = (1 - z) * n + z * h
    """

    def __init__(self, n_in, n_hidden, rng):
        super().__init__()
        self.n_in, self.n_hidden = n_in, n_hidden
        self.w_ih = self.param("w_ih", _uniform(rng, (3 * n_hidden, n_in), n_hidden))
        self.w_hh = self.param("w_hh", _uniform(rng, (3 * n_hidden, n_hidden), n_hidden))
        self.b_ih = self.param("b_ih", np.zeros(3 * n_hidden))
        self.b_hh = self.param("b_hh", np.zeros(3 * n_hidden))

    def __call__(self, x, h):
        return gru_cell(x, h, self.w_ih, self.w_hh, self.b_ih, self.b_hh)

    def initial_state(self, batch=None):
        shape = (self.n_hidden,) if batch is None else (batch, self.n_hidden)
        return Tensor(np.zeros(shape))


def gru_cell(x, h, w_ih, w_hh, b_ih, b_hh):
    """One GRU step on a vector or a batch of row vectors."""
    x, h = ag.as_tensor(x), ag.as_tensor(h)
    n_hidden = w_hh.shape[1]
    if x.shape[-1] != w_ih.shape[1] or h.shape[-1] != n_hidden:
        raise ValueError(f"gru_cell: x {x.shape} / h {h.shape} do not match weights {w_ih.shape}, {w_hh.shape}")
    gi = ag.matmul(x, w_ih.T) + b_ih
    gh = ag.matmul(h, w_hh.T) + b_hh
    s = slice(0, n_hidden), slice(n_hidden, 2 * n_hidden), slice(2 * n_hidden, 3 * n_hidden)
    r = ag.sigmoid(gi[..., s[0]] + gh[..., s[0]])
    z = ag.sigmoid(gi[..., s[1]] + gh[..., s[1]])
    n = ag.tanh(gi[..., s[2]] + r * gh[..., s[2]])
    return (1.0 - z) * n + z * h


class ConvLSTMCell(Module):
    """Convolutional LSTM: one conv over [x, h] yields the i, f, o, g gates."""

    def __init__(self, c_in, c_hidden, kernel, rng):
        super().__init__()
        self.c_in, self.c_hidden, self.kernel = c_in, c_hidden, kernel
        self.gates = self.child("gates", Conv2d(c_in + c_hidden, 4 * c_hidden, kernel, rng))

    def __call__(self, x, state):
        h, c = state
        return conv_lstm_step(x, h, c, self.gates.weight, self.gates.bias)

    def initial_state(self, spatial, batch=None):
        shape = (self.c_hidden, *spatial) if batch is None else (batch, self.c_hidden, *spatial)
        return Tensor(np.zeros(shape)), Tensor(np.zeros(shape))


def conv_lstm_step(x, h, c, weight, bias):
    ch = h.shape[-3]
    axis = -3
    gates = ag.conv2d(ag.concat([x, h], axis=axis), weight, bias, weight.shape[-1] // 2)
    i = ag.sigmoid(gates[..., 0:ch, :, :])
    f = ag.sigmoid(gates[..., ch : 2 * ch, :, :])
    o = ag.sigmoid(gates[..., 2 * ch : 3 * ch, :, :])
    g = ag.tanh(gates[..., 3 * ch : 4 * ch, :, :])
    c_new = f * c + i * g
    h_new = o * ag.tanh(c_new)
    return h_new, c_new


class SGD:
    """SGD with heavy-ball momentum: v <- mu*v + g; p <- p - lr*v.

    ``milestones`` decay the learning rate by ``gamma`` at the given step counts
    (counted in calls to :meth:`schedule_epoch`).
    """

    def __init__(self, params, lr, momentum=0.9, milestones=(), gamma=0.1):
        self.params = list(params)
        self.lr = lr
        self.base_lr = lr
        self.momentum = momentum
        self.milestones = tuple(milestones)
        self.gamma = gamma
        self.epoch = 0
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None):
        grads = [p.grad for p in self.params] if grads is None else grads
        for p, v, g in zip(self.params, self.velocity, grads):
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            v *= self.momentum
            v += g
            p.data = p.data - self.lr * v

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def schedule_epoch(self):
        self.epoch += 1
        drops = sum(self.epoch >= m for m in self.milestones)
        self.lr = self.base_lr * self.gamma**drops


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, milestones=(), gamma=0.1):
        self.params = list(params)
        self.lr = self.base_lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.milestones = tuple(milestones)
        self.gamma = gamma
        self.epoch = 0
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None):
        grads = [p.grad for p in self.params] if grads is None else grads
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            if g is None:
                continue
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def schedule_epoch(self):
        self.epoch += 1
        drops = sum(self.epoch >= m for m in self.milestones)
        self.lr = self.base_lr * self.gamma**drops


def sgd_step(params, grads, opt):
    """Functional form of one momentum update, returning the updated arrays."""
    opt.step(grads)
    return [p.data for p in params]
