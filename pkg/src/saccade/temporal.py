"""Pre-attentive frame skipping: a recurrent policy emits a one-hot skip horizon."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .nn import GRUCell, Linear, Module


class FrameStatus(str, enum.Enum):
    FULL = "FULL"
    PRESCAN = "PRESCAN"
    SKIP = "SKIP"

    def __str__(self):
        return self.value


@dataclass
class FrameDecision:
    status: FrameStatus
    flops: float
    source: int  # frame whose prediction is current after this frame
    m_star: int = -1  # -1 where the policy did not run


@dataclass
class SamplerState:
    hidden: list
    last_decision: int = 0
    remaining: int = 0


def sample_gumbel(shape, rng):
    u = rng.random(shape)
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).eps)
    return -np.log(-np.log(u))


def gumbel_softmax(logits, tau=1.0, noise=True, rng=None, hard=False):
    """Relaxed one-hot sample ``softmax((logits + g) / tau)``.

    ``g`` is standard Gumbel noise when ``noise`` is on and zero otherwise.
    With ``hard`` the forward value is the one-hot argmax while gradients
    flow through the soft sample.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = ag.as_tensor(logits)
    if noise:
        rng = np.random.default_rng() if rng is None else rng
        logits = logits + sample_gumbel(logits.shape, rng)
    soft = ag.softmax(logits * (1.0 / tau), axis=-1)
    if not hard:
        return soft
    return ag.straight_through(soft, one_hot(decide(soft.data), soft.shape[-1]))


def one_hot(index, n):
    index = np.asarray(index)
    out = np.zeros((*index.shape, n))
    np.put_along_axis(out, index[..., None], 1.0, axis=-1)
    return out


def decide(r):
    """Skip horizon ``m* = argmax r``; ties resolve to the smaller ``m``."""
    r = np.asarray(r.data if isinstance(r, ag.Tensor) else r)
    return np.argmax(r, axis=-1) if r.ndim > 1 else int(np.argmax(r))


class SkipPolicy(Module):
    """Stacked GRU over [pre-scan features | hallucination | SSIM] with a linear head."""

    def __init__(self, n_features, n_hallucination, max_skip, hidden=128, layers=2, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_features, self.n_hallucination = n_features, n_hallucination
        self.max_skip, self.hidden, self.layers = max_skip, hidden, layers
        n_in = n_features + n_hallucination + 1
        self.cells = [self.child(f"gru{i}", GRUCell(n_in if i == 0 else hidden, hidden, rng)) for i in range(layers)]
        self.head = self.child("head", Linear(hidden, max_skip + 1, rng))

    @property
    def n_inputs(self):
        return self.n_features + self.n_hallucination + 1

    def initial_state(self, batch=None):
        return SamplerState(hidden=[c.initial_state(batch) for c in self.cells])

    def logits(self, x, hidden):
        new_hidden = []
        h = x
        for cell, h_prev in zip(self.cells, hidden):
            h = cell(h, h_prev)
            new_hidden.append(h)
        return self.head(h), new_hidden


def policy_input(prescan_features, hallucination, ssim_score):
    f = ag.as_tensor(prescan_features)
    hal = ag.as_tensor(hallucination)
    s = ag.as_tensor(ssim_score)
    batched = f.ndim > 1 and f.shape[0] != 1 or s.ndim == 1
    if batched:
        n = s.shape[0] if s.ndim == 1 else f.shape[0]
        return ag.concat([ag.reshape(f, (n, -1)), ag.reshape(hal, (n, -1)), ag.reshape(s, (n, 1))], axis=1)
    return ag.concat([ag.reshape(f, (-1,)), ag.reshape(hal, (-1,)), ag.reshape(s, (1,))], axis=0)


def policy_forward(prescan_features, hallucination, ssim_score, state, policy, tau=1.0, rng=None, noise=False, hard=True):
    """Sampling vector for the current frame and the advanced sampler state."""
    x = policy_input(prescan_features, hallucination, ssim_score)
    if x.shape[-1] != policy.n_inputs:
        raise ValueError(f"policy expects {policy.n_inputs} inputs, got {x.shape[-1]}")
    logits, hidden = policy.logits(x, state.hidden)
    r = gumbel_softmax(logits, tau, noise=noise, rng=rng, hard=hard)
    m_star = decide(r)
    new_state = SamplerState(hidden=hidden, last_decision=m_star, remaining=0)
    return r, new_state


def execute_schedule(decisions, n_frames, max_skip, o_full=0.0, o_pre=0.0):
    """Expand per-evaluation skip horizons into one :class:`FrameDecision` per frame.

    ``decisions`` is a sequence (consumed in order) or a callable ``f(t) -> m*``
    queried at each evaluated frame after the forced-FULL warm-up frame 0.
    ``m* = 0`` runs the frame fully; ``m* >= 1`` pre-scans it and skips the
    next ``m* - 1`` frames.
    """
    if n_frames < 1:
        raise ValueError("need at least one frame")
    if callable(decisions):
        next_m = decisions
    else:
        it = iter(decisions)

        def next_m(t):
            try:
                return next(it)
            except StopIteration:
                raise ValueError(f"ran out of decisions at frame {t}") from None

    out = [FrameDecision(FrameStatus.FULL, o_full, 0)]
    source = 0
    t = 1
    while t < n_frames:
        m = int(next_m(t))
        if not 0 <= m <= max_skip:
            raise ValueError(f"skip horizon {m} outside [0, {max_skip}]")
        if m == 0:
            source = t
            out.append(FrameDecision(FrameStatus.FULL, o_full, source, 0))
            t += 1
            continue
        out.append(FrameDecision(FrameStatus.PRESCAN, o_pre, source, m))
        for _ in range(t + 1, min(t + m, n_frames)):
            out.append(FrameDecision(FrameStatus.SKIP, 0.0, source))
        t += m
    return out


def count_statuses(decisions):
    counts = {s: 0 for s in FrameStatus}
    for d in decisions:
        counts[d.status] += 1
    return counts[FrameStatus.FULL], counts[FrameStatus.PRESCAN], counts[FrameStatus.SKIP]
