"""Attention-driven region sampling: a low-res global view plus high-res crops."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_attention, check_image

ADJACENCY = {
    "manhattan2": tuple((dy, dx) for dy in range(-2, 3) for dx in range(-2, 3) if 0 < abs(dy) + abs(dx) <= 2),
    "eightway": tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)),
}


@dataclass
class SpatialConfig:
    k: int = 3
    d: int = 2
    crop_size: tuple = (16, 16)
    suppression: float = 0.5
    adjacency: str = "manhattan2"

    def __post_init__(self):
        if np.isscalar(self.crop_size):
            self.crop_size = (int(self.crop_size), int(self.crop_size))
        self.crop_size = tuple(int(v) for v in self.crop_size)
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.d < 1:
            raise ValueError("down-sampling factor d must be >= 1")
        if not 0.0 < self.suppression < 1.0:
            raise ValueError("suppression fraction must lie in (0, 1)")
        if self.adjacency not in ADJACENCY:
            raise ValueError(f"adjacency must be one of {sorted(ADJACENCY)}")

    def within_budget(self, cost_at, image_size):
        """True when the low-res view plus ``k`` crops costs less than the full image.

        ``cost_at(h, w)`` returns the backbone cost of an ``h × w`` input.
        """
        h, w = image_size
        low = cost_at(h // self.d, w // self.d)
        crops = self.k * cost_at(*self.crop_size)
        return low + crops < cost_at(h, w)


@dataclass
class RegionBox:
    score: float
    centroid: tuple
    box: tuple  # top, left, height, width in pixels
    rank: int
    pixels: list = field(default_factory=list, repr=False)


@dataclass
class FrameViews:
    low: np.ndarray
    crops: list
    boxes: list


def downsample(image, d):
    """Area-average ``image`` (C×H×W) by an integer factor ``d``.

    On an aligned grid this is what bilinear resampling at d=2 produces.
    """
    image = np.asarray(image, dtype=np.float64)
    c, h, w = image.shape
    if d < 1 or h % d or w % d:
        raise ValueError(f"down-sampling factor {d} must divide the image size {h}x{w}")
    if d == 1:
        return image.copy()
    return image.reshape(c, h // d, d, w // d, d).mean(axis=(2, 4))


def suppress(attention, fraction=0.5):
    """Binary mask of cells whose channel-mean attention reaches ``fraction·max``."""
    m = np.asarray(attention, dtype=np.float64)
    if m.ndim == 3:
        m = m.mean(axis=0)
    peak = m.max()
    if peak <= 0:
        return np.zeros(m.shape, dtype=bool)
    return m >= fraction * peak


def connected_regions(mask, adjacency="manhattan2"):
    """Maximal connected groups of set cells, in row-major order of first cell.

    ``manhattan2`` links cells with |dr| + |dc| <= 2; ``eightway`` uses the
    8-neighbourhood.
    """
    mask = np.asarray(mask, dtype=bool)
    offsets = ADJACENCY[adjacency]
    h, w = mask.shape
    seen = np.zeros_like(mask)
    regions = []
    for r0 in range(h):
        for c0 in range(w):
            if not mask[r0, c0] or seen[r0, c0]:
                continue
            seen[r0, c0] = True
            queue, members = deque([(r0, c0)]), []
            while queue:
                r, c = queue.popleft()
                members.append((r, c))
                for dr, dc in offsets:
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w and mask[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        queue.append((rr, cc))
            regions.append(sorted(members))
    return regions


def top_k_regions(attention, regions, k):
    """Rank regions by summed channel-mean attention and keep the best ``k``.

    Ties go to the region whose centroid is higher, then further left.
    """
    m = np.asarray(attention, dtype=np.float64)
    if m.ndim == 3:
        m = m.mean(axis=0)
    scored = []
    for members in regions:
        rows = np.array([p[0] for p in members], dtype=np.float64)
        cols = np.array([p[1] for p in members], dtype=np.float64)
        vals = m[rows.astype(int), cols.astype(int)]
        score = float(vals.sum())
        if score > 0:
            centroid = (float((vals * rows).sum() / score), float((vals * cols).sum() / score))
        else:
            centroid = (float(rows.mean()), float(cols.mean()))
        scored.append((score, centroid, members))
    scored.sort(key=lambda s: (-s[0], s[1][0], s[1][1]))
    return [RegionBox(score=s, centroid=c, box=(), rank=i + 1, pixels=mem) for i, (s, c, mem) in enumerate(scored[:k])]


def project_to_pixels(centroid, attn_size, image_size, crop_size):
    """Pixel box (top, left, height, width) of a crop centred on ``centroid``.

    The centroid cell maps to ``(r + 0.5) * H / h``; the box slides (never
    shrinks) to stay inside the image.
    """
    (r, c), (ah, aw), (h, w), (ch, cw) = centroid, attn_size, image_size, crop_size
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} is larger than the image {h}x{w}")
    cy, cx = (r + 0.5) * h / ah, (c + 0.5) * w / aw
    top = int(np.floor(cy - ch / 2 + 0.5))
    left = int(np.floor(cx - cw / 2 + 0.5))
    top = min(max(top, 0), h - ch)
    left = min(max(left, 0), w - cw)
    return (top, left, ch, cw)


def sample_frame(image, attention, cfg):
    """Low-res view plus up to ``cfg.k`` crops taken from the original image."""
    image = check_image(image)
    attention = check_attention(attention)
    low = downsample(image, cfg.d)
    if cfg.k == 0:
        return FrameViews(low=low, crops=[], boxes=[])
    regions = connected_regions(suppress(attention, cfg.suppression), cfg.adjacency)
    boxes = top_k_regions(attention, regions, cfg.k)
    crops = []
    for rb in boxes:
        rb.box = project_to_pixels(rb.centroid, attention.shape[-2:], image.shape[-2:], cfg.crop_size)
        top, left, ch, cw = rb.box
        crops.append(image[:, top : top + ch, left : left + cw].copy())
    return FrameViews(low=low, crops=crops, boxes=boxes)


class SpatialSampler(TransformerMixin, BaseEstimator):
    """Pick the ``k`` most salient connected regions of attention maps.

    ``transform`` maps attention maps (n, C, h, w) to an array (n, k, 4) of
    pixel boxes ``(top, left, height, width)``; rows for missing regions
    are -1.
    """

    def __init__(self, k=3, d=2, crop_size=16, suppression=0.5, adjacency="manhattan2", image_size=(48, 48)):
        self.k = k
        self.d = d
        self.crop_size = crop_size
        self.suppression = suppression
        self.adjacency = adjacency
        self.image_size = image_size

    def _config(self):
        return SpatialConfig(self.k, self.d, self.crop_size, self.suppression, self.adjacency)

    def fit(self, X, y=None):
        X = check_attention(X, batched=True)
        self.config_ = self._config()
        self.attention_shape_ = X.shape[1:]
        return self

    def regions(self, attention):
        check_is_fitted(self)
        attention = check_attention(attention)
        regions = connected_regions(suppress(attention, self.config_.suppression), self.config_.adjacency)
        boxes = top_k_regions(attention, regions, self.config_.k)
        for rb in boxes:
            rb.box = project_to_pixels(rb.centroid, attention.shape[-2:], tuple(self.image_size), self.config_.crop_size)
        return boxes

    def transform(self, X):
        check_is_fitted(self)
        X = check_attention(X, batched=True)
        if X.shape[1:] != self.attention_shape_:
            raise ValueError(f"attention shape {X.shape[1:]} differs from fitted {self.attention_shape_}")
        out = np.full((len(X), self.config_.k, 4), -1, dtype=np.int64)
        for i, a in enumerate(X):
            for j, rb in enumerate(self.regions(a)):
                out[i, j] = rb.box
        return out

    def sample(self, images, attention):
        check_is_fitted(self)
        return [sample_frame(img, a, self.config_) for img, a in zip(images, attention)]
