"""FLOP accounting for a layered backbone, split-point costs and derived efficiency metrics.

A multiply-add counts as ``mac`` FLOPs (2 by default, 1 for MAC counting).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .temporal import FrameStatus

LAYER_KINDS = ("conv", "pool", "attention", "gap", "linear")


def conv_flops(c_in, c_out, kernel, h_out, w_out, mac=2):
    return mac * c_in * c_out * kernel * kernel * h_out * w_out


def attention_flops(channels, footprint, h, w, mac=2):
    """Pairwise attention on an H×W plane.

    Three 1×1 projections, then per position and channel: one product per
    neighbour, a three-op softmax, and a weighted sum.
    """
    hw = h * w
    r2 = footprint * footprint
    return 3 * mac * channels * channels * hw + channels * r2 * hw * (1 + 3 + mac)


def gru_flops(n_in, n_hidden, mac=2):
    # three gate products, plus about ten elementwise ops per unit
    return 3 * mac * n_hidden * (n_in + n_hidden) + 10 * n_hidden


def conv_lstm_flops(c_in, c_hidden, kernel, h, w, mac=2):
    return conv_flops(c_in + c_hidden, 4 * c_hidden, kernel, h, w, mac) + 10 * c_hidden * h * w


def ssim_flops(channels, h, w):
    # means, centred products and the final ratio per channel
    return 12 * channels * h * w


@dataclass(frozen=True)
class Layer:
    kind: str
    c_in: int
    c_out: int
    kernel: int = 1
    stride: int = 1

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")
        if min(self.c_in, self.c_out, self.kernel, self.stride) < 1:
            raise ValueError(f"layer {self} needs positive channels, kernel and stride")

    def out_size(self, h, w):
        if self.kind == "gap":
            return 1, 1
        if self.kind == "linear":
            return h, w
        return math.ceil(h / self.stride), math.ceil(w / self.stride)

    def flops(self, h, w, mac=2):
        ho, wo = self.out_size(h, w)
        if self.kind == "conv":
            return conv_flops(self.c_in, self.c_out, self.kernel, ho, wo, mac)
        if self.kind == "pool":
            return self.c_in * self.kernel * self.kernel * ho * wo
        if self.kind == "attention":
            return attention_flops(self.c_in, self.kernel, h, w, mac)
        if self.kind == "gap":
            return self.c_in * h * w
        return mac * self.c_in * self.c_out


@dataclass
class LayerCostTable:
    layers: list
    split: int
    mac: int = 2

    def __post_init__(self):
        if not self.layers:
            raise ValueError("cost table has no layers")
        if not 1 <= self.split <= len(self.layers):
            raise ValueError(f"split {self.split} outside [1, {len(self.layers)}]")

    def __len__(self):
        return len(self.layers)

    def layer_flops(self, size):
        h, w = (size, size) if isinstance(size, int) else size
        out = []
        for layer in self.layers:
            out.append(layer.flops(h, w, self.mac))
            h, w = layer.out_size(h, w)
        return out

    def total(self, size):
        return sum(self.layer_flops(size))

    def first_half(self, size, split=None):
        return sum(self.layer_flops(size)[: self.split if split is None else split])

    def second_half(self, size, split=None):
        return sum(self.layer_flops(size)[self.split if split is None else split :])

    def to_text(self):
        lines = ["# kind c_in c_out kernel stride"]
        lines += [f"{l.kind} {l.c_in} {l.c_out} {l.kernel} {l.stride}" for l in self.layers]
        lines.append(f"split {self.split}")
        lines.append(f"mac {self.mac}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        """Parse ``kind c_in c_out kernel stride`` lines plus ``split N`` and optional ``mac N``."""
        layers, split, mac = [], None, 2
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "split":
                    split = int(parts[1])
                elif parts[0] == "mac":
                    mac = int(parts[1])
                else:
                    nums = [int(p) for p in parts[1:]]
                    if not 2 <= len(nums) <= 4:
                        raise ValueError("expected c_in c_out [kernel [stride]]")
                    layers.append(Layer(parts[0], *nums))
            except (ValueError, IndexError) as e:
                raise ValueError(f"cost table line {lineno}: {raw.strip()!r}: {e}") from None
        if split is None:
            raise ValueError("cost table has no 'split' line")
        return cls(layers, split, mac)

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text())


def default_table(channels=8, head=32, tap=3):
    """Cost table of the toy backbone: conv stem, pool, attention tap, conv head, pooling."""
    return LayerCostTable(
        [
            Layer("conv", 3, channels, 3),
            Layer("pool", channels, channels, 4, 4),
            Layer("attention", channels, channels, tap),
            Layer("conv", channels, head, 3),
            Layer("conv", head, head, 3),
            Layer("gap", head, head),
        ],
        split=3,
    )


def scaling_curve(table, sides):
    if any(n < 1 for n in sides):
        raise ValueError("sides must be positive")
    return [(n, table.total(n)) for n in sides]


@dataclass(frozen=True)
class CostBreakdown:
    backbone_pre: float
    hallucinator: float
    sampler: float
    backbone_rest: float
    crops: float
    classifier: float
    crop_unit: float = 0.0

    @property
    def o_pre(self):
        return self.backbone_pre + self.hallucinator + self.sampler

    @property
    def o_rest(self):
        return self.backbone_rest + self.crops + self.classifier

    @property
    def o_full(self):
        return self.o_pre + self.o_rest

    def rows(self):
        return [("O_pre", self.o_pre), ("O_rest", self.o_rest), ("O_full", self.o_full)]


def breakdown(table, split, hallucinator, sampler, input_size, crop_size, k, classifier):
    """Per-frame costs at split ``split``; each crop runs the whole backbone once."""
    if not 1 <= split <= len(table):
        raise ValueError(f"split {split} outside [1, {len(table)}]")
    if k < 0:
        raise ValueError("k must be non-negative")
    flops = table.layer_flops(input_size)
    crop_unit = table.total(crop_size)
    return CostBreakdown(
        backbone_pre=sum(flops[:split]),
        hallucinator=hallucinator,
        sampler=sampler,
        backbone_rest=sum(flops[split:]),
        crops=k * crop_unit,
        classifier=classifier,
        crop_unit=crop_unit,
    )


def efficiency_loss(n_full, n_pre, cb, normalize=False, n_skip=0):
    """FLOP-weighted frame count ``n_full·O_full + n_pre·O_pre``.

    Counts may be autograd tensors (soft counts during training). Normalized,
    the value is divided by ``(n_full + n_pre + n_skip)·O_full``.
    """
    raw = n_full * cb.o_full + n_pre * cb.o_pre
    if not normalize:
        return raw
    frames = n_full + n_pre + n_skip
    if isinstance(frames, (int, float)) and frames == 0:
        return 0.0
    return raw / (frames * cb.o_full)


def tradeoff(avg_gflops, top1_percent):
    if top1_percent <= 0:
        raise ValueError("top-1 accuracy must be positive")
    return avg_gflops / top1_percent


def speedup(reference_avg, model_avg):
    if model_avg <= 0:
        raise ValueError("model cost must be positive")
    return reference_avg / model_avg


@dataclass
class RunStats:
    n_full: int = 0
    n_pre: int = 0
    n_skip: int = 0
    total_flops: float = 0.0
    per_sequence: list = field(default_factory=list)

    @property
    def frames(self):
        return self.n_full + self.n_pre + self.n_skip

    @property
    def avg_flops(self):
        return self.total_flops / self.frames if self.frames else 0.0

    def percentages(self):
        n = self.frames or 1
        return {"full": 100.0 * self.n_full / n, "prescan": 100.0 * self.n_pre / n, "skip": 100.0 * self.n_skip / n}


def aggregate(streams):
    """Totals over one FrameDecision stream or a list of them."""
    if not streams:
        raise ValueError("no decisions to aggregate")
    if not isinstance(streams[0], (list, tuple)):
        streams = [streams]
    stats = RunStats()
    for stream in streams:
        seq_total = 0.0
        for d in stream:
            if d.status is FrameStatus.FULL:
                stats.n_full += 1
            elif d.status is FrameStatus.PRESCAN:
                stats.n_pre += 1
            else:
                stats.n_skip += 1
            seq_total += d.flops
        stats.total_flops += seq_total
        stats.per_sequence.append(seq_total)
    return stats
