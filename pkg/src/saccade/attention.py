"""Local pairwise self-attention and its cumulative global attention map.

A footprint is an R×R window around a centre cell. For every centre the block
computes a per-channel softmax over the footprint (the local attention); the
global map scatter-adds those weights back onto the feature plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .nn import Module


@dataclass
class LocalAttention:
    """Weights ``C×Rh×Rw`` of one footprint whose top-left cell is ``origin``.

    ``origin`` may be negative (footprint hanging over the zero-padded border).
    """

    weights: np.ndarray
    origin: tuple

    @classmethod
    def centered(cls, weights, center):
        rh, rw = weights.shape[-2:]
        if rh % 2 == 0 or rw % 2 == 0:
            raise ValueError("centred footprints need odd extents")
        return cls(np.asarray(weights, dtype=np.float64), (center[0] - rh // 2, center[1] - rw // 2))


def _check_odd(r):
    if r < 1 or r % 2 == 0:
        raise ValueError(f"footprint size R must be a positive odd integer, got {r}")


def local_attention(logits, axis=-3):
    """Softmax over footprint positions: ``logits`` is (..., C, R*R, H, W)."""
    return ag.softmax(logits, axis=axis)


def pairwise_attention(x, w_q, w_k, w_v, b_q=None, b_k=None, b_v=None, footprint=3):
    """Pairwise self-attention over R×R footprints with zero-padded borders.

    ``x`` is (C,H,W) or (N,C,H,W); the projections are 1×1 (C×C weights with
    optional biases) applied to the zero-padded input, so an off-plane
    neighbour contributes key/value equal to the projection bias.

    Returns ``(z, alpha)`` where ``alpha[..., c, j, h, w]`` is the weight the
    centre (h, w) puts on footprint slot ``j`` (row-major over the window).
    """
    _check_odd(footprint)
    x = ag.as_tensor(x)
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape(1, *x.shape)
    n, c, h, w = x.shape
    for name, wt in (("query", w_q), ("key", w_k), ("value", w_v)):
        if tuple(wt.shape) != (c, c):
            raise ValueError(f"{name} projection must be {c}x{c}, got {tuple(wt.shape)}")

    def project(weight, bias):
        out = ag.conv2d(x, ag.reshape(ag.as_tensor(weight), (c, c, 1, 1)), None, 0)
        return out, (None if bias is None else ag.reshape(ag.as_tensor(bias), (1, c, 1, 1, 1)))

    q, bq = project(w_q, b_q)
    if bq is not None:
        q = q + ag.reshape(bq, (1, c, 1, 1))
    k_raw, bk = project(w_k, b_k)
    v_raw, bv = project(w_v, b_v)
    k = ag.unfold(k_raw, footprint)
    v = ag.unfold(v_raw, footprint)
    if bk is not None:
        k = k + bk
    if bv is not None:
        v = v + bv
    logits = ag.reshape(q, (n, c, 1, h, w)) * k
    alpha = local_attention(logits, axis=2)
    z = ag.tsum(alpha * v, axis=2)
    if squeeze:
        return z[0], alpha[0]
    return z, alpha


class PairwiseAttention(Module):
    """Attention block with learnable 1×1 query/key/value projections."""

    def __init__(self, channels, footprint, rng):
        super().__init__()
        _check_odd(footprint)
        self.channels, self.footprint = channels, footprint
        scale = 1.0 / np.sqrt(channels)
        self.w_q = self.param("w_q", rng.uniform(-scale, scale, (channels, channels)))
        self.b_q = self.param("b_q", np.full(channels, 1.0))
        # keys start out as a channel average so bright activations attract attention
        self.w_k = self.param("w_k", np.full((channels, channels), 1.0 / channels) + rng.uniform(-0.1, 0.1, (channels, channels)) * scale)
        self.b_k = self.param("b_k", np.zeros(channels))
        self.w_v = self.param("w_v", np.eye(channels) + rng.uniform(-scale, scale, (channels, channels)) * 0.5)
        self.b_v = self.param("b_v", np.zeros(channels))

    def __call__(self, x):
        return pairwise_attention(x, self.w_q, self.w_k, self.w_v, self.b_q, self.b_k, self.b_v, self.footprint)


def fold(alpha, footprint):
    """Scatter-add a dense local-attention field back onto the feature plane.

    ``alpha`` is (..., C, R*R, H, W) with one footprint centred on every cell;
    contributions falling outside the plane are dropped.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    _check_odd(footprint)
    *lead, c, rr, h, w = alpha.shape
    if rr != footprint * footprint:
        raise ValueError(f"expected {footprint * footprint} footprint slots, got {rr}")
    p = footprint // 2
    a = alpha.reshape(*lead, c, footprint, footprint, h, w)
    out = np.zeros((*lead, c, h + 2 * p, w + 2 * p))
    for u in range(footprint):
        for v in range(footprint):
            out[..., u : u + h, v : v + w] += a[..., u, v, :, :]
    return out[..., p : p + h, p : p + w]


def accumulate_global(locals_, height, width):
    """Cumulative global attention from a list of :class:`LocalAttention`.

    Each footprint's weights are added to the cells it covers; cells outside
    the ``height × width`` plane are masked out by the indicator.
    """
    locals_ = list(locals_)
    if not locals_:
        raise ValueError("need at least one local attention block")
    channels = locals_[0].weights.shape[0]
    out = np.zeros((channels, height, width))
    for la in locals_:
        wts = np.asarray(la.weights, dtype=np.float64)
        if wts.ndim != 3 or wts.shape[0] != channels:
            raise ValueError(f"local attention must be {channels}xRhxRw, got {wts.shape}")
        top, left = la.origin
        rh, rw = wts.shape[1:]
        r0, r1 = max(top, 0), min(top + rh, height)
        c0, c1 = max(left, 0), min(left + rw, width)
        if r0 >= r1 or c0 >= c1:
            raise ValueError(f"footprint at {la.origin} of extent {rh}x{rw} lies outside the {height}x{width} plane")
        out[:, r0:r1, c0:c1] += wts[:, r0 - top : r1 - top, c0 - left : c1 - left]
    return out


def global_attention(alpha, footprint):
    """Dense cumulative global attention for the ``alpha`` of :func:`pairwise_attention`."""
    return fold(alpha.data if isinstance(alpha, ag.Tensor) else alpha, footprint)


def count_mask(height, width, footprint, stride=1, layout="same"):
    """How many footprints cover each cell.

    ``layout="same"`` centres a footprint on every ``stride``-th cell (odd
    extents, zero padding); ``"valid"`` slides fully-inside windows from the
    top-left corner. ``footprint`` may be an int or a ``(rows, cols)`` pair.
    """
    rh, rw = (footprint, footprint) if np.isscalar(footprint) else footprint
    if stride < 1:
        raise ValueError("stride must be >= 1")
    counts = np.zeros((height, width), dtype=np.int64)
    if layout == "same":
        _check_odd(rh)
        _check_odd(rw)
        origins = [(r - rh // 2, c - rw // 2) for r in range(0, height, stride) for c in range(0, width, stride)]
    elif layout == "valid":
        origins = [(r, c) for r in range(0, height - rh + 1, stride) for c in range(0, width - rw + 1, stride)]
    else:
        raise ValueError(f"unknown layout {layout!r}")
    for top, left in origins:
        counts[max(top, 0) : min(top + rh, height), max(left, 0) : min(left + rw, width)] += 1
    return counts


def normalize_attention(attention, mask, mode="divide"):
    """Correct overlap duplication by the coverage count (every channel alike).

    ``mode="multiply"`` applies the literal elementwise product instead.
    """
    attention = np.asarray(attention, dtype=np.float64)
    mask = np.asarray(mask)
    if attention.shape[-2:] != mask.shape:
        raise ValueError(f"attention plane {attention.shape[-2:]} does not match mask {mask.shape}")
    if mode == "divide":
        if np.any(mask <= 0):
            raise ValueError("count mask has zero-count cells; cannot normalise")
        return attention / mask
    if mode == "multiply":
        return attention * mask
    raise ValueError(f"unknown mode {mode!r}")
