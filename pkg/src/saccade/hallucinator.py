"""Next-frame attention prediction with a convolutional LSTM, and the SSIM it is scored by."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import autograd as ag
from . import io
from ._validation import check_sequences
from .nn import Adam, Conv2d, ConvLSTMCell, Module, SGD

CHECKPOINT_MAGIC = "HALC"


@dataclass(frozen=True)
class SsimParams:
    dynamic_range: float = 1.0

    @property
    def c1(self):
        return (0.01 * self.dynamic_range) ** 2

    @property
    def c2(self):
        return (0.03 * self.dynamic_range) ** 2


def max_normalize(a):
    """Scale each frame by its largest magnitude; an all-zero frame stays zero.

    Accepts C×H×W or N×C×H×W tensors.
    """
    a = ag.as_tensor(a)
    batched = a.ndim == 4
    flat = ag.reshape(a, (a.shape[0] if batched else 1, -1))
    peak = ag.amax(ag.absolute(flat), axis=1, keepdims=True)
    peak = peak + ag.Tensor((peak.data == 0).astype(np.float64))
    shape = (-1, 1, 1, 1) if batched else (1, 1, 1)
    return a / ag.reshape(peak, shape)


def ssim(a, b, params=SsimParams(), normalize=True):
    """Structural similarity with whole-map moments per channel, averaged over channels.

    Inputs are C×H×W (scalar result) or N×C×H×W (one value per frame).
    Moments are population (divide-by-n) statistics.
    """
    a, b = ag.as_tensor(a), ag.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim not in (3, 4):
        raise ValueError(f"ssim expects C×H×W or N×C×H×W maps, got {a.shape}")
    if normalize:
        a, b = max_normalize(a), max_normalize(b)
    axes = (-2, -1)
    mu_a = ag.mean(a, axis=axes, keepdims=True)
    mu_b = ag.mean(b, axis=axes, keepdims=True)
    da, db = a - mu_a, b - mu_b
    var_a = ag.mean(da * da, axis=axes)
    var_b = ag.mean(db * db, axis=axes)
    cov = ag.mean(da * db, axis=axes)
    mu_a, mu_b = ag.reshape(mu_a, var_a.shape), ag.reshape(mu_b, var_b.shape)
    c1, c2 = params.c1, params.c2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return ag.mean(num / den, axis=-1)


def ssim_value(a, b, params=SsimParams()):
    return float(ssim(a, b, params).data)


class Hallucinator(Module):
    """Encoder conv -> conv-LSTM cell -> decoder conv, all 3×3 and size preserving."""

    def __init__(self, channels, hidden=8, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.channels, self.hidden = channels, hidden
        self.encoder = self.child("encoder", Conv2d(channels, hidden, 3, rng))
        self.cell = self.child("cell", ConvLSTMCell(hidden, hidden, 3, rng))
        self.decoder = self.child("decoder", Conv2d(hidden, channels, 3, rng))

    def initial_state(self, spatial, batch=None):
        return self.cell.initial_state(spatial, batch)

    def step(self, attention, state):
        return hallucinate_step(attention, state, self)


def hallucinate_step(attention, state, model):
    """Predict the next attention map from the current one; returns ``(pred, state')``."""
    attention = ag.as_tensor(attention)
    if attention.shape[-3] != model.channels:
        raise ValueError(f"hallucinator expects {model.channels} channels, got attention {attention.shape}")
    h, c = state
    if h.shape[-2:] != attention.shape[-2:]:
        raise ValueError(f"state plane {h.shape[-2:]} does not match attention {attention.shape[-2:]}")
    enc = ag.tanh(model.encoder(attention))
    h, c = model.cell(enc, (h, c))
    return model.decoder(h), (h, c)


def belief_loss(attn_seq, model, params=SsimParams()):
    """Negative mean SSIM of one-step predictions under teacher forcing.

    ``attn_seq`` is T×C×H×W or N×T×C×H×W; every prediction is made from the
    ground-truth previous map.
    """
    attn_seq = np.asarray(attn_seq.data if isinstance(attn_seq, ag.Tensor) else attn_seq, dtype=np.float64)
    batched = attn_seq.ndim == 5
    seq = attn_seq if batched else attn_seq[None]
    n, t_len = seq.shape[:2]
    if t_len < 2:
        raise ValueError("belief loss needs at least two frames")
    state = model.initial_state(seq.shape[-2:], batch=n)
    terms = []
    for t in range(1, t_len):
        pred, state = hallucinate_step(seq[:, t - 1], state, model)
        terms.append(ssim(pred, seq[:, t], params))
    return -ag.mean(ag.stack(terms, axis=0))


def predict_sequence(attn_seq, model, params=SsimParams()):
    """Teacher-forced predictions for frames 1..T-1 and their SSIM to the truth (numpy)."""
    seq = np.asarray(attn_seq, dtype=np.float64)
    batched = seq.ndim == 5
    seq = seq if batched else seq[None]
    n, t_len = seq.shape[:2]
    state = model.initial_state(seq.shape[-2:], batch=n)
    preds, scores = [], []
    for t in range(1, t_len):
        pred, state = hallucinate_step(seq[:, t - 1], state, model)
        preds.append(pred.data)
        scores.append(ssim(pred.data, seq[:, t], params).data)
    preds = np.stack(preds, axis=1)
    scores = np.stack(scores, axis=1)
    return (preds, scores) if batched else (preds[0], scores[0])


def train_hallucinator(model, dataset, epochs, optimizer, batch_size=16, rng=None, params=SsimParams()):
    """Minimise the belief loss; returns per-epoch mean training loss.

    The returned dict also carries the full-set loss before and after training.
    """
    dataset = check_sequences(dataset, name="attention sequences")
    if dataset.shape[1] < 2:
        raise ValueError("attention sequences need at least two frames")
    rng = np.random.default_rng(0) if rng is None else rng
    initial = float(belief_loss(dataset, model, params).data)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(dataset), batch_size):
            batch = dataset[order[start : start + batch_size]]
            optimizer.zero_grad()
            loss = belief_loss(batch, model, params)
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch)
        optimizer.schedule_epoch()
        history.append(total / len(dataset))
    final = float(belief_loss(dataset, model, params).data) if epochs else initial
    return {"history": history, "initial": initial, "final": final}


def save_checkpoint(path, model, spatial):
    io.write_checkpoint(path, CHECKPOINT_MAGIC, [model.channels, model.hidden, *spatial], model.get_flat())


def load_checkpoint(path, channels=None, hidden=None):
    dims, flat = io.read_checkpoint(path, CHECKPOINT_MAGIC)
    if len(dims) != 4:
        raise io.DimensionMismatchError(f"{path}: expected 4 header dims, got {dims}")
    c, h = dims[:2]
    if (channels is not None and c != channels) or (hidden is not None and h != hidden):
        raise io.DimensionMismatchError(f"{path}: checkpoint dims C={c}, hidden={h} do not match configuration C={channels}, hidden={hidden}")
    model = Hallucinator(c, h)
    model.set_flat(flat)
    return model, tuple(dims[2:])


class AttentionHallucinator(BaseEstimator):
    """Estimator wrapper: ``fit`` on attention sequences (n, T, C, H, W).

    ``predict`` returns teacher-forced next-frame maps (n, T-1, C, H, W) and
    ``score`` the mean SSIM of those predictions (the negated belief loss).
    """

    def __init__(self, hidden=8, epochs=30, learning_rate=0.01, optimizer="adam", momentum=0.9, batch_size=16, random_state=0):
        self.hidden = hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.momentum = momentum
        self.batch_size = batch_size
        self.random_state = random_state

    def _make_optimizer(self, params):
        if self.optimizer == "adam":
            return Adam(params, lr=self.learning_rate)
        if self.optimizer == "sgd":
            return SGD(params, lr=self.learning_rate, momentum=self.momentum)
        raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def fit(self, X, y=None):
        X = check_sequences(X, name="attention sequences")
        rng = np.random.default_rng(self.random_state)
        self.model_ = Hallucinator(X.shape[2], self.hidden, rng)
        self.spatial_shape_ = X.shape[-2:]
        result = train_hallucinator(self.model_, X, self.epochs, self._make_optimizer(self.model_.parameters()), self.batch_size, rng)
        self.loss_curve_ = result["history"]
        self.initial_loss_ = result["initial"]
        self.final_loss_ = result["final"]
        return self

    def predict(self, X):
        check_is_fitted(self)
        return predict_sequence(check_sequences(X, name="attention sequences"), self.model_)[0]

    def score(self, X, y=None):
        check_is_fitted(self)
        return float(predict_sequence(check_sequences(X, name="attention sequences"), self.model_)[1].mean())
