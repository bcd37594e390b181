"""End-to-end adaptive video classifier: backbone with an attention tap, samplers, classifier.

Training runs in four phases (features, hallucinator, spatial classifier,
joint temporal sampler); evaluation runs one sequence at a time so results do
not depend on how many worker processes share the work.
"""

from __future__ import annotations

import copy
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import autograd as ag
from . import cost, io
from ._validation import check_labels, check_sequences
from .attention import PairwiseAttention, count_mask, global_attention, normalize_attention
from .config import RunConfig
from .hallucinator import Hallucinator, hallucinate_step, save_checkpoint as save_hallucinator, load_checkpoint as load_hallucinator, ssim, train_hallucinator
from .nn import SGD, Adam, Conv2d, GRUCell, Linear, Module
from .spatial import SpatialConfig, sample_frame
from .temporal import FrameDecision, FrameStatus, SkipPolicy, decide, policy_forward
from .io import read_fixture, write_fixture  # noqa: F401  re-exported for callers

log = logging.getLogger(__name__)

N_LAYERS = 6
TAP = 3  # layers[:TAP] end with the attention block


def downsample_batch(images, d):
    """Area-average a stack (..., C, H, W) by ``d``."""
    images = np.asarray(images, dtype=np.float64)
    *lead, c, h, w = images.shape
    if h % d or w % d:
        raise ValueError(f"down-sampling factor {d} must divide the image size {h}x{w}")
    return images.reshape(*lead, c, h // d, d, w // d, d).mean(axis=(-3, -1))


def standardize(x, eps=1e-6):
    """Zero mean, unit deviation per image channel."""
    x = ag.as_tensor(x)
    centred = x - ag.mean(x, axis=(-2, -1), keepdims=True)
    return centred / ag.sqrt(ag.mean(centred * centred, axis=(-2, -1), keepdims=True) + eps)


class ToyBackbone(Module):
    """standardise -> conv stem -> 4×4 pool -> pairwise attention (tap) -> two convs -> global pool.

    Layers are numbered 0..5; a split ``λ`` runs layers ``[0, λ)`` as the
    pre-scan and ``[λ, 6)`` afterwards.
    """

    def __init__(self, channels=8, head=32, footprint=3, attention_norm="divide", rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.channels, self.head, self.footprint = channels, head, footprint
        self.attention_norm = attention_norm
        self.stem = self.child("stem", Conv2d(3, channels, 3, rng))
        self.attention = self.child("attention", PairwiseAttention(channels, footprint, rng))
        self.conv1 = self.child("conv1", Conv2d(channels, head, 3, rng))
        self.conv2 = self.child("conv2", Conv2d(head, head, 3, rng))
        for conv in (self.stem, self.conv1, self.conv2):
            # He initialisation keeps the ReLU stack from shrinking the signal
            fan_in = conv.c_in * conv.kernel * conv.kernel
            conv.weight.data = rng.normal(0.0, np.sqrt(2.0 / fan_in), conv.weight.shape)

    def run(self, x, start=0, stop=N_LAYERS):
        """Apply layers ``[start, stop)``; returns ``(out, alpha)`` (alpha None unless the tap ran)."""
        alpha = None
        for i in range(start, stop):
            if i == 0:
                x = ag.relu(self.stem(standardize(x)))
            elif i == 1:
                x = ag.avg_pool2d(x, 4)
            elif i == 2:
                x, alpha = self.attention(x)
            elif i == 3:
                x = ag.relu(self.conv1(x))
            elif i == 4:
                x = ag.relu(self.conv2(x))
            else:
                x = ag.global_avg_pool(x)
        return x, alpha

    def attention_map(self, alpha):
        """Count-normalised cumulative global attention, (N, C, h, w)."""
        a = global_attention(alpha, self.footprint)
        mask = count_mask(a.shape[-2], a.shape[-1], self.footprint)
        return normalize_attention(a, mask, self.attention_norm)

    def prescan(self, x, split=TAP):
        out, alpha = self.run(x, 0, split)
        return out, self.attention_map(alpha)

    def finish(self, z, split=TAP):
        return self.run(z, split, N_LAYERS)[0]

    def features(self, x):
        return self.run(x)[0]

    def cost_table(self, split=TAP):
        t = cost.default_table(self.channels, self.head, self.footprint)
        return cost.LayerCostTable(t.layers, split, t.mac)


def prescan_dim(cfg):
    h, w = cfg.attention_size
    if cfg.split == TAP:
        return cfg.channels * h * w
    if cfg.split < N_LAYERS:
        return cfg.head_channels * h * w
    return cfg.head_channels


class ThreeHeadClassifier(Module):
    """Low-res, crop and master GRU heads, each with its own linear read-out.

    Crop features enter as ``max(k, 1)`` zero-padded slots; the master head
    sees the low-res and crop inputs concatenated.
    """

    def __init__(self, feat_dim, k, classes, hidden=32, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.feat_dim, self.k, self.classes, self.hidden = feat_dim, k, classes, hidden
        slots = max(k, 1) * feat_dim
        self.cells = [
            self.child("low", GRUCell(feat_dim, hidden, rng)),
            self.child("high", GRUCell(slots, hidden, rng)),
            self.child("master", GRUCell(feat_dim + slots, hidden, rng)),
        ]
        self.outs = [self.child(f"out_{name}", Linear(hidden, classes, rng)) for name in ("low", "high", "master")]

    @property
    def high_dim(self):
        return max(self.k, 1) * self.feat_dim

    def initial_state(self, batch=None):
        return [c.initial_state(batch) for c in self.cells]

    def update(self, low, high, state, gate=None):
        """Advance all heads; with ``gate`` the memory becomes ``gate·new + (1-gate)·old``."""
        low, high = ag.as_tensor(low), ag.as_tensor(high)
        if low.shape[-1] != self.feat_dim or high.shape[-1] != self.high_dim:
            raise ValueError(f"classifier expects {self.feat_dim}+{self.high_dim} inputs, got {low.shape[-1]}+{high.shape[-1]}")
        inputs = [low, high, ag.concat([low, high], axis=-1)]
        new = [cell(x, h) for cell, x, h in zip(self.cells, inputs, state)]
        if gate is None:
            return new
        return [gate * n + (1.0 - gate) * h for n, h in zip(new, state)]

    def head_logits(self, state):
        return [out(h) for out, h in zip(self.outs, state)]


def pad_crops(crop_feats, k, feat_dim):
    """Flatten up to ``k`` crop feature rows into ``max(k,1)·feat_dim`` slots, zero-filled."""
    out = np.zeros(max(k, 1) * feat_dim)
    for j, f in enumerate(crop_feats[:k]):
        out[j * feat_dim : (j + 1) * feat_dim] = f
    return out


def mean_logits(per_head):
    return (per_head[0] + per_head[1] + per_head[2]) * (1.0 / 3.0)


def classify(low_seq, high_seq, classifier, statuses=None):
    """Final and per-head logits after a stream of frames.

    Memories advance only on FULL frames (all frames when ``statuses`` is None).
    """
    low_seq, high_seq = np.asarray(low_seq), np.asarray(high_seq)
    batch = None if low_seq.ndim == 2 else low_seq.shape[0]
    state = classifier.initial_state(batch)
    for t in range(low_seq.shape[-2]):
        if statuses is not None and statuses[t] is not FrameStatus.FULL:
            continue
        state = classifier.update(low_seq[..., t, :], high_seq[..., t, :], state)
    per_head = classifier.head_logits(state)
    return mean_logits(per_head), per_head


def class_loss(per_head, labels, theta_h=(1.0, 1.0, 1.0)):
    """``Σ_h θ_h · CE_h`` with batch-mean cross-entropy per head."""
    if len(theta_h) != len(per_head) or min(theta_h) < 0:
        raise ValueError("need one non-negative weight per head")
    total = None
    for w, logits in zip(theta_h, per_head):
        term = float(w) * ag.cross_entropy(logits, labels)
        total = term if total is None else total + term
    return total


# ---------------------------------------------------------------------------
# cost model of the assembled system


def pipeline_costs(cfg, k=None):
    k = cfg.k if k is None else k
    h, w = cfg.attention_size
    c = cfg.channels
    table = ToyBackbone(c, cfg.head_channels, cfg.footprint).cost_table(cfg.split)
    hid = cfg.hallucinator_hidden
    hallucinator = (
        cost.conv_flops(c, hid, 3, h, w)
        + cost.conv_lstm_flops(hid, hid, 3, h, w)
        + cost.conv_flops(hid, c, 3, h, w)
        + cost.ssim_flops(c, h, w)
    )
    n_in = prescan_dim(cfg) + c * h * w + 1
    sampler = sum(cost.gru_flops(n_in if i == 0 else cfg.policy_hidden, cfg.policy_hidden) for i in range(cfg.policy_layers))
    sampler += 2 * cfg.policy_hidden * (cfg.max_skip + 1)
    f, hc = cfg.head_channels, cfg.classifier_hidden
    slots = max(k, 1) * f
    classifier = cost.gru_flops(f, hc) + cost.gru_flops(slots, hc) + cost.gru_flops(f + slots, hc) + 3 * 2 * hc * cfg.classes
    return cost.breakdown(table, cfg.split, hallucinator, sampler, cfg.low_size, (cfg.crop_size, cfg.crop_size), k, classifier)


# ---------------------------------------------------------------------------
# feature cache for frozen-backbone phases


def spatial_config(cfg, k):
    return SpatialConfig(k=k, d=cfg.d, crop_size=(cfg.crop_size, cfg.crop_size), suppression=cfg.suppression, adjacency=cfg.adjacency)


def crop_stack(images, attention, cfg, k):
    """Crops chosen by the attention maps: ``(stack, owner index per crop)``."""
    scfg = spatial_config(cfg, k)
    crops, owner = [], []
    for i, (img, a) in enumerate(zip(images, attention)):
        for crop in sample_frame(img, a, scfg).crops:
            crops.append(crop)
            owner.append(i)
    shape = (0, images.shape[1], cfg.crop_size, cfg.crop_size)
    return (np.stack(crops) if crops else np.zeros(shape)), np.asarray(owner, dtype=np.int64)


@dataclass
class FeatureCache:
    z: np.ndarray  # N×T×prescan_dim
    attention: np.ndarray  # N×T×C×h×w
    low: np.ndarray  # N×T×F
    crops: np.ndarray  # N×T×k×F, zero rows for missing crops

    def high(self, k):
        n, t = self.low.shape[:2]
        f = self.low.shape[-1]
        out = np.zeros((n, t, max(k, 1) * f))
        out[..., : k * f] = self.crops[:, :, :k].reshape(n, t, k * f)
        return out

    def subset(self, idx):
        return FeatureCache(self.z[idx], self.attention[idx], self.low[idx], self.crops[idx])


def encode(backbone, frames, cfg, k=None, chunk=64):
    """Run the frozen backbone over every frame of every sequence."""
    k = cfg.k if k is None else k
    frames = np.asarray(frames, dtype=np.float64)
    n, t = frames.shape[:2]
    flat = frames.reshape(n * t, *frames.shape[2:])
    zs, atts, lows, crops = [], [], [], []
    f = backbone.head
    for s in range(0, len(flat), chunk):
        imgs = flat[s : s + chunk]
        z, att = backbone.prescan(downsample_batch(imgs, cfg.d), cfg.split)
        zs.append(z.data.reshape(len(imgs), -1))
        atts.append(att)
        lows.append(backbone.finish(z, cfg.split).data)
        cf = np.zeros((len(imgs), k, f))
        if k:
            stack, owner = crop_stack(imgs, att, cfg, k)
            if len(stack):
                feats = backbone.features(stack).data
                slot = np.zeros(len(imgs), dtype=np.int64)
                for row, i in zip(feats, owner):
                    cf[i, slot[i]] = row
                    slot[i] += 1
        crops.append(cf)
    cat = lambda xs: np.concatenate(xs).reshape(n, t, *xs[0].shape[1:])  # noqa: E731
    return FeatureCache(cat(zs), cat(atts), cat(lows), cat(crops))


# ---------------------------------------------------------------------------
# training phases


def _history_rows(history, term):
    return [(e + 1, term, float(v)) for e, v in enumerate(history)]


def train_features(frames, labels, cfg, rng, frames_per_sequence=3):
    """Backbone plus a linear probe trained on single low-res frames and their top attention crop."""
    frames = check_sequences(frames, name="video sequences")
    labels = check_labels(labels, len(frames), cfg.classes)
    backbone = ToyBackbone(cfg.channels, cfg.head_channels, cfg.footprint, cfg.attention_norm, rng)
    probe = Linear(cfg.head_channels, cfg.classes, rng)
    params = backbone.parameters() + probe.parameters()
    opt = SGD(params, cfg.learning_rate, cfg.momentum, cfg.milestones, cfg.gamma)
    n, t = frames.shape[:2]
    history = []
    for _ in range(cfg.epochs_features):
        picks = np.stack([rng.choice(t, size=min(frames_per_sequence, t), replace=False) for _ in range(n)])
        seq_idx = np.repeat(np.arange(n), picks.shape[1])
        order = rng.permutation(len(seq_idx))
        total, count = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            sel = order[s : s + cfg.batch_size]
            imgs = frames[seq_idx[sel], picks.reshape(-1)[sel]]
            y = labels[seq_idx[sel]]
            opt.zero_grad()
            z, alpha = backbone.run(downsample_batch(imgs, cfg.d), 0, TAP)
            loss = ag.cross_entropy(probe(backbone.finish(z, TAP)), y)
            if cfg.k:
                crops, owner = crop_stack(imgs, backbone.attention_map(alpha), cfg, 1)
                if len(crops):
                    loss = loss + ag.cross_entropy(probe(backbone.features(crops)), y[owner])
            loss.backward()
            opt.step()
            total += loss.item() * len(sel)
            count += len(sel)
        opt.schedule_epoch()
        history.append(total / count)
        log.info("features epoch %d loss %.4f", len(history), history[-1])
    return backbone, probe, _history_rows(history, "features")


def train_hallucinator_phase(backbone, frames, cfg, rng, cache=None):
    cache = encode(backbone, frames, cfg, 0) if cache is None else cache
    model = Hallucinator(cfg.channels, cfg.hallucinator_hidden, rng)
    opt = Adam(model.parameters(), cfg.hallucinator_learning_rate)
    result = train_hallucinator(model, cache.attention, cfg.epochs_hallucinator, opt, cfg.batch_size, rng)
    log.info("hallucinator belief loss %.4f -> %.4f", result["initial"], result["final"])
    return model, _history_rows(result["history"], "belief")


def train_spatial(cache, labels, cfg, k, rng):
    """Three-head classifier on always-FULL streams of cached features."""
    labels = np.asarray(labels)
    clf = ThreeHeadClassifier(cfg.head_channels, k, cfg.classes, cfg.classifier_hidden, rng)
    opt = Adam(clf.parameters(), cfg.classifier_learning_rate)
    high = cache.high(k)
    history = []
    for _ in range(cfg.epochs_spatial):
        order = rng.permutation(len(labels))
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            sel = order[s : s + cfg.batch_size]
            opt.zero_grad()
            _, per_head = classify(cache.low[sel], high[sel], clf)
            loss = class_loss(per_head, labels[sel], cfg.theta_h)
            loss.backward()
            opt.step()
            total += loss.item() * len(sel)
        history.append(total / len(labels))
    log.info("spatial k=%d final loss %.4f", k, history[-1] if history else float("nan"))
    return clf, _history_rows(history, "class")


def _masked(e, new, old):
    """Row-wise select between tensors: ``new`` where ``e`` is 1."""
    return ag.Tensor(np.where(e.reshape(-1, *([1] * (new.ndim - 1))) > 0, new.data, old.data))


def rollout(cache, k, policy, classifier, hallucinator, cb, cfg, noise, rng, labels=None):
    """Batched adaptive pass over cached features.

    Returns final per-head logits, the integer decisions per frame (-1 where
    the policy did not run, including the warm-up frame) and the efficiency loss
    tensor. Memories and hallucinations of rows that are inside a skip span
    are held.
    """
    n, t_len = cache.low.shape[:2]
    high = cache.high(k)
    o_full, o_pre = cb.o_full, cb.o_pre
    rate = np.array([o_full] + [o_pre / m for m in range(1, cfg.max_skip + 1)]) / o_full
    cls_state = classifier.update(cache.low[:, 0], high[:, 0], classifier.initial_state(n))
    pol_state = policy.initial_state(n)
    hal_state = hallucinator.initial_state(cache.attention.shape[-2:], n)
    hal_pred, hal_state = hallucinate_step(cache.attention[:, 0], hal_state, hallucinator)
    hal_pred, hal_state = hal_pred.detach(), tuple(s.detach() for s in hal_state)
    remaining = np.zeros(n, dtype=np.int64)
    exact = np.full(n, float(o_full))
    surrogate = ag.Tensor(np.zeros(n))
    decisions = np.full((n, t_len), -1, dtype=np.int64)
    for t in range(1, t_len):
        e = (remaining == 0).astype(np.float64)
        score = ssim(hal_pred.data, cache.attention[:, t]).data
        r, new_pol = policy_forward(cache.z[:, t], hal_pred.data.reshape(n, -1), score, pol_state, policy, cfg.tau, rng, noise=noise, hard=True)
        pol_state.hidden = [e[:, None] * hn + (1.0 - e[:, None]) * ho for hn, ho in zip(new_pol.hidden, pol_state.hidden)]
        m = decide(r.data)
        gate = ag.reshape(r[:, 0], (n, 1)) * e[:, None]
        cls_state = classifier.update(cache.low[:, t], high[:, t], cls_state, gate)
        pred, new_hal = hallucinate_step(cache.attention[:, t], hal_state, hallucinator)
        hal_pred = _masked(e, pred, hal_pred)
        hal_state = tuple(_masked(e, a, b) for a, b in zip(new_hal, hal_state))
        exact += e * np.where(m == 0, o_full, o_pre)
        surrogate = surrogate + ag.tsum(r * rate, axis=1) * e
        decisions[:, t] = np.where(e > 0, m, -1)
        remaining = np.where(e > 0, np.maximum(m - 1, 0), remaining - 1)
    denom = t_len * o_full if cfg.normalize_efficiency_loss else 1.0
    scale = 1.0 / t_len if cfg.normalize_efficiency_loss else o_full
    # value: exact FLOP-weighted count; gradient: expected per-frame cost rate of each decision
    l_e = ag.Tensor(exact / denom) + (surrogate - ag.Tensor(surrogate.data)) * scale
    return classifier.head_logits(cls_state), decisions, ag.mean(l_e)


def train_joint(cache, labels, classifier, hallucinator, cfg, theta_e, rng, k=None, policy=None):
    """Jointly train the skip policy and the classifier on ``L_class + θ_e·L_e``.

    The backbone (through ``cache``) and the hallucinator stay frozen. Returns
    ``(policy, classifier, rows)`` with one ``class`` and one ``efficiency``
    row per epoch.
    """
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("cannot train on an empty dataset")
    k = classifier.k if k is None else k
    cb = pipeline_costs(cfg, k)
    h, w = cfg.attention_size
    policy = SkipPolicy(prescan_dim(cfg), cfg.channels * h * w, cfg.max_skip, cfg.policy_hidden, cfg.policy_layers, rng) if policy is None else policy
    classifier = copy.deepcopy(classifier)
    opt = Adam(policy.parameters() + classifier.parameters(), cfg.temporal_learning_rate)
    rows = []
    for epoch in range(cfg.epochs_temporal):
        order = rng.permutation(len(labels))
        tot_c = tot_e = 0.0
        for s in range(0, len(order), cfg.batch_size):
            sel = order[s : s + cfg.batch_size]
            opt.zero_grad()
            per_head, _, l_e = rollout(cache.subset(sel), k, policy, classifier, hallucinator, cb, cfg, True, rng)
            l_c = class_loss(per_head, labels[sel], cfg.theta_h)
            loss = l_c + float(theta_e) * l_e
            loss.backward()
            opt.step()
            tot_c += l_c.item() * len(sel)
            tot_e += l_e.item() * len(sel)
        rows += [(epoch + 1, "class", tot_c / len(labels)), (epoch + 1, "efficiency", tot_e / len(labels))]
        log.info("temporal epoch %d class %.4f efficiency %.4f", epoch + 1, tot_c / len(labels), tot_e / len(labels))
    return policy, classifier, rows


# ---------------------------------------------------------------------------
# inference


@dataclass
class Pipeline:
    cfg: RunConfig
    backbone: ToyBackbone
    hallucinator: Hallucinator
    classifier: ThreeHeadClassifier
    policy: SkipPolicy = None

    @property
    def k(self):
        return self.classifier.k

    @property
    def costs(self):
        return pipeline_costs(self.cfg, self.k)


@dataclass
class SequenceResult:
    logits: np.ndarray
    decisions: list
    trace: list = field(default_factory=list)  # (t, status, ssim, m_star)

    @property
    def prediction(self):
        return int(np.argmax(self.logits))


def run_sequence(frames, pipe, mode="adaptive"):
    """Process one clip frame by frame, computing only what each frame's status needs."""
    if mode not in ("adaptive", "always_full"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "adaptive" and pipe.policy is None:
        raise ValueError("adaptive mode needs a trained policy")
    cfg, bb, k = pipe.cfg, pipe.backbone, pipe.k
    cb = pipe.costs
    frames = np.asarray(frames, dtype=np.float64)
    clf_state = pipe.classifier.initial_state()
    pol_state = pipe.policy.initial_state() if pipe.policy is not None else None
    hal_state = pipe.hallucinator.initial_state(cfg.attention_size, batch=1)
    hal_pred = None
    decisions, trace = [], []
    remaining, source = 0, 0
    for t, image in enumerate(frames):
        if remaining:
            remaining -= 1
            decisions.append(FrameDecision(FrameStatus.SKIP, 0.0, source))
            trace.append((t, FrameStatus.SKIP, None, -1))
            continue
        z, att = bb.prescan(downsample_batch(image[None], cfg.d), cfg.split)
        score, m = None, 0
        if t > 0:
            score = float(ssim(hal_pred.data, att).data[0])
            if mode == "adaptive":
                r, pol_state = policy_forward(z.data.reshape(-1), hal_pred.data.reshape(-1), score, pol_state, pipe.policy, cfg.tau, noise=False, hard=True)
                m = decide(r)
        hal_pred, hal_state = hallucinate_step(att, hal_state, pipe.hallucinator)
        if m == 0:
            source = t
            low = bb.finish(z, cfg.split).data[0]
            crops = []
            if k:
                stack, _ = crop_stack(image[None], att, cfg, k)
                crops = bb.features(stack).data if len(stack) else []
            clf_state = pipe.classifier.update(low, pad_crops(list(crops), k, bb.head), clf_state)
            decisions.append(FrameDecision(FrameStatus.FULL, cb.o_full, source, m if t else -1))
            trace.append((t, FrameStatus.FULL, score, m if t else -1))
        else:
            remaining = m - 1
            decisions.append(FrameDecision(FrameStatus.PRESCAN, cb.o_pre, source, m))
            trace.append((t, FrameStatus.PRESCAN, score, m))
    logits = mean_logits(pipe.classifier.head_logits(clf_state)).data
    return SequenceResult(logits, decisions, trace)


def _run_one(args):
    frames, pipe, mode = args
    return run_sequence(frames, pipe, mode)


def evaluate(frames, labels, pipe, mode="adaptive", jobs=1):
    """Accuracy, FLOP statistics and per-sequence results (bit-identical for any ``jobs``)."""
    frames = check_sequences(frames, name="video sequences")
    labels = check_labels(labels, len(frames))
    tasks = [(f, pipe, mode) for f in frames]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_run_one(a) for a in tasks]
    logits = np.stack([r.logits for r in results])
    stats = cost.aggregate([r.decisions for r in results])
    top1 = 100.0 * float(np.mean(topk_hits(logits, labels, 1)))
    top5 = 100.0 * float(np.mean(topk_hits(logits, labels, 5)))
    reference = pipe.costs.o_full * stats.frames
    return {
        "top1": top1,
        "top5": top5,
        "stats": stats,
        "avg_flops": stats.avg_flops,
        "tradeoff": cost.tradeoff(stats.avg_flops / 1e9, top1) if top1 > 0 else float("inf"),
        "speedup": cost.speedup(reference, stats.total_flops),
        "results": results,
        "labels": labels,
    }


def topk_hits(logits, labels, k):
    """A hit when the label is among the ``k`` largest logits (ties resolved by index)."""
    order = np.argsort(-np.asarray(logits), axis=1, kind="stable")[:, :k]
    return np.any(order == np.asarray(labels)[:, None], axis=1)


# ---------------------------------------------------------------------------
# whole-system training and checkpoints


@dataclass
class TrainedSystem:
    """Everything the phases produce: shared backbone, hallucinator, per-k classifiers."""

    cfg: RunConfig
    backbone: ToyBackbone
    hallucinator: Hallucinator
    classifiers: dict
    cache: FeatureCache
    labels: np.ndarray
    history: list = field(default_factory=list)

    def pipeline(self, k=None, policy=None, classifier=None):
        k = self.cfg.k if k is None else k
        return Pipeline(self.cfg, self.backbone, self.hallucinator, classifier or self.classifiers[k], policy)


def train_system(frames, labels, cfg, ks=None, rng=None):
    """Phases one to three: features, hallucinator, and a spatial classifier per ``k``."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    ks = sorted({cfg.k} if ks is None else set(ks))
    backbone, _, rows = train_features(frames, labels, cfg, rng)
    cache = encode(backbone, frames, cfg, max(ks))
    hallucinator, hrows = train_hallucinator_phase(backbone, frames, cfg, rng, cache)
    rows += hrows
    classifiers = {}
    for k in ks:
        classifiers[k], crows = train_spatial(cache, labels, cfg, k, rng)
        rows += [(e, f"class_k{k}", v) for e, _, v in crows]
    return TrainedSystem(cfg, backbone, hallucinator, classifiers, cache, np.asarray(labels), rows)


FEATURES_MAGIC = "FEAT"
SPATIAL_MAGIC = "SPAT"
TEMPORAL_MAGIC = "TEMP"


def _check_dims(path, dims, expected):
    if list(dims) != list(expected):
        raise io.DimensionMismatchError(f"{path}: checkpoint dims {list(dims)} do not match configuration {list(expected)}")


def save_backbone(path, backbone, cfg):
    io.write_checkpoint(path, FEATURES_MAGIC, [cfg.channels, cfg.head_channels, cfg.footprint], backbone.get_flat())


def load_backbone(path, cfg):
    dims, flat = io.read_checkpoint(path, FEATURES_MAGIC)
    _check_dims(path, dims, [cfg.channels, cfg.head_channels, cfg.footprint])
    bb = ToyBackbone(cfg.channels, cfg.head_channels, cfg.footprint, cfg.attention_norm)
    bb.set_flat(flat)
    return bb


def save_hallucinator_ckpt(path, model, cfg):
    save_hallucinator(path, model, cfg.attention_size)


def load_hallucinator_ckpt(path, cfg):
    model, spatial = load_hallucinator(path, cfg.channels, cfg.hallucinator_hidden)
    if tuple(spatial) != tuple(cfg.attention_size):
        raise io.DimensionMismatchError(f"{path}: attention plane {tuple(spatial)} does not match configuration {cfg.attention_size}")
    return model


def _classifier_dims(cfg, k):
    return [cfg.head_channels, k, cfg.classes, cfg.classifier_hidden]


def save_classifier(path, clf, cfg):
    io.write_checkpoint(path, SPATIAL_MAGIC, _classifier_dims(cfg, clf.k), clf.get_flat())


def load_classifier(path, cfg):
    dims, flat = io.read_checkpoint(path, SPATIAL_MAGIC)
    _check_dims(path, dims, _classifier_dims(cfg, cfg.k))
    clf = ThreeHeadClassifier(cfg.head_channels, cfg.k, cfg.classes, cfg.classifier_hidden)
    clf.set_flat(flat)
    return clf


def _temporal_dims(cfg):
    return [prescan_dim(cfg), cfg.max_skip, cfg.policy_hidden, cfg.policy_layers] + _classifier_dims(cfg, cfg.k)


def new_policy(cfg, rng=None):
    h, w = cfg.attention_size
    return SkipPolicy(prescan_dim(cfg), cfg.channels * h * w, cfg.max_skip, cfg.policy_hidden, cfg.policy_layers, rng)


def save_temporal(path, policy, clf, cfg):
    io.write_checkpoint(path, TEMPORAL_MAGIC, _temporal_dims(cfg), np.concatenate([policy.get_flat(), clf.get_flat()]))


def load_temporal(path, cfg):
    dims, flat = io.read_checkpoint(path, TEMPORAL_MAGIC)
    _check_dims(path, dims, _temporal_dims(cfg))
    policy = new_policy(cfg)
    clf = ThreeHeadClassifier(cfg.head_channels, cfg.k, cfg.classes, cfg.classifier_hidden)
    n = policy.n_params()
    if flat.size != n + clf.n_params():
        raise io.DimensionMismatchError(f"{path}: payload holds {flat.size} parameters, expected {n + clf.n_params()}")
    policy.set_flat(flat[:n])
    clf.set_flat(flat[n:])
    return policy, clf


class AdaptiveVideoClassifier(ClassifierMixin, BaseEstimator):
    """Estimator over clips ``X`` of shape (n, T, 3, H, W).

    ``fit`` runs all four training phases; ``predict`` runs each clip through
    the adaptive pipeline (or ``mode="always_full"``). After ``predict`` the
    per-clip frame decisions are in ``last_decisions_``.
    """

    def __init__(self, k=3, max_skip=2, theta_e=1.0, tau=1.0, mode="adaptive", random_state=0,
                 epochs_features=12, epochs_hallucinator=25, epochs_spatial=40, epochs_temporal=30):
        self.k = k
        self.max_skip = max_skip
        self.theta_e = theta_e
        self.tau = tau
        self.mode = mode
        self.random_state = random_state
        self.epochs_features = epochs_features
        self.epochs_hallucinator = epochs_hallucinator
        self.epochs_spatial = epochs_spatial
        self.epochs_temporal = epochs_temporal

    def _config(self, X, y):
        _, t, _, h, w = X.shape
        return RunConfig(
            seed=self.random_state, frames=t, image_height=h, image_width=w, classes=int(np.max(y)) + 1,
            k=self.k, max_skip=self.max_skip, theta_e=self.theta_e, tau=self.tau,
            epochs_features=self.epochs_features, epochs_hallucinator=self.epochs_hallucinator,
            epochs_spatial=self.epochs_spatial, epochs_temporal=self.epochs_temporal,
        )

    def fit(self, X, y):
        X = check_sequences(X, name="video sequences")
        y = check_labels(y, len(X))
        self.classes_ = np.unique(y)
        if not np.array_equal(self.classes_, np.arange(len(self.classes_))):
            raise ValueError("labels must be 0..n_classes-1 with every class present")
        cfg = self._config(X, y)
        rng = np.random.default_rng(cfg.seed)
        system = train_system(X, y, cfg, rng=rng)
        policy, clf, rows = train_joint(system.cache, y, system.classifiers[cfg.k], system.hallucinator, cfg, cfg.theta_e, rng)
        self.config_ = cfg
        self.pipeline_ = system.pipeline(policy=policy, classifier=clf)
        self.loss_history_ = system.history + rows
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        X = check_sequences(X, name="video sequences")
        results = [run_sequence(x, self.pipeline_, self.mode) for x in X]
        self.last_decisions_ = [r.decisions for r in results]
        return np.stack([r.logits for r in results])

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def flops_report(self):
        check_is_fitted(self)
        return cost.aggregate(self.last_decisions_)
