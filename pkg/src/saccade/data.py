"""Synthetic videos and attention streams with per-sequence random streams."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TRAJECTORIES = ("left-right", "top-down", "static", "diagonal")

_DIRECTIONS = {
    "left-right": (0.0, 1.0),
    "top-down": (1.0, 0.0),
    "static": (0.0, 0.0),
    "diagonal": (np.sqrt(0.5), np.sqrt(0.5)),
}


def sequence_rng(seed, sequence_id):
    """Independent generator for one sequence, whatever order sequences are built in."""
    return np.random.default_rng([int(seed), int(sequence_id)])


@dataclass
class SyntheticSequence:
    frames: np.ndarray  # T×3×H×W
    label: int
    params: dict = field(default_factory=dict)

    @property
    def trajectory(self):
        return self.params["trajectory"]


def _blob(size, center, direction, sigma_along, sigma_across):
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - center[0], xx - center[1]
    uy, ux = direction
    if uy == 0.0 and ux == 0.0:
        return np.exp(-(dy**2 + dx**2) / (2 * sigma_along**2))
    along = dy * uy + dx * ux
    across = -dy * ux + dx * uy
    return np.exp(-(along**2) / (2 * sigma_along**2) - across**2 / (2 * sigma_across**2))


def make_sequence(sequence_id, label, n_frames=10, image_size=(48, 48), seed=0, noise=0.05):
    """One clip of a bright blob on a noisy background.

    The trajectory kind is the class. Moving blobs are smeared along their
    direction of motion (motion blur), so single frames carry a hint too.
    """
    rng = sequence_rng(seed, sequence_id)
    kind = TRAJECTORIES[label]
    h, w = image_size
    direction = _DIRECTIONS[kind]
    speed = 0.0 if kind == "static" else float(rng.uniform(1.5, 2.5)) * (h / 48.0)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    margin = 0.22 * min(h, w)
    travel = speed * (n_frames - 1)
    start = np.empty(2)
    for axis, extent in enumerate((h, w)):
        span = travel * abs(direction[axis])
        lo, hi = margin, extent - margin - span
        start[axis] = rng.uniform(lo, max(hi, lo))
        if sign < 0 and span > 0:
            start[axis] += span
    velocity = sign * speed * np.asarray(direction)
    sigma = 0.055 * min(h, w)
    sigma_along = sigma * (1.0 + 0.7 * speed * 48.0 / h) if speed else sigma
    sigma_across = 0.6 * sigma if speed else sigma
    color = rng.uniform(0.6, 1.0, size=3)
    frames = np.empty((n_frames, 3, h, w))
    for t in range(n_frames):
        center = start + velocity * t
        blob = _blob(image_size, center, tuple(sign * np.asarray(direction)), sigma_along, sigma_across)
        background = 0.1 + noise * rng.standard_normal((3, h, w))
        frames[t] = background + color[:, None, None] * blob[None]
    params = {
        "trajectory": kind,
        "speed": speed,
        "start": tuple(float(v) for v in start),
        "velocity": tuple(float(v) for v in velocity),
        "seed": int(seed),
        "sequence_id": int(sequence_id),
    }
    return SyntheticSequence(frames=frames, label=int(label), params=params)


def blob_centers(seq):
    p = seq.params
    t = np.arange(seq.frames.shape[0])[:, None]
    return np.asarray(p["start"]) + np.asarray(p["velocity"]) * t


def gen_dataset(n_sequences, classes=3, image_size=(48, 48), n_frames=10, seed=0, first_id=0):
    """Class-balanced clips; sequence ``i`` has label ``i % classes``."""
    if not 2 <= classes <= len(TRAJECTORIES):
        raise ValueError(f"classes must be between 2 and {len(TRAJECTORIES)}")
    return [
        make_sequence(first_id + i, i % classes, n_frames, image_size, seed)
        for i in range(n_sequences)
    ]


def as_arrays(sequences):
    """(X, y) with X of shape (n, T, 3, H, W)."""
    if not sequences:
        return np.zeros((0,)), np.zeros((0,), dtype=np.int64)
    return np.stack([s.frames for s in sequences]), np.array([s.label for s in sequences], dtype=np.int64)


def translating_blob_attention(n_sequences, n_frames=6, channels=4, size=9, sigma=1.0, seed=0, noise=0.02):
    """Attention streams of a blob moving one cell per frame along a random axis.

    Start cells are chosen so the blob stays inside the plane; planes too small
    for a straight run make the blob bounce off the edges.
    """
    out = np.empty((n_sequences, n_frames, channels, size, size))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    steps = [(0, 1), (0, -1), (1, 0), (-1, 0)]
    for i in range(n_sequences):
        rng = sequence_rng(seed, i)
        dy, dx = steps[int(rng.integers(len(steps)))]
        travel = n_frames - 1
        lo, hi = 1, size - 2
        if hi - lo < travel:
            r0, c0 = (int(v) for v in rng.integers(0, size, size=2))
            gains = rng.uniform(0.5, 1.0, size=channels)
            for t in range(n_frames):
                g = np.exp(-((yy - _bounce(r0 + dy * t, size)) ** 2 + (xx - _bounce(c0 + dx * t, size)) ** 2) / (2 * sigma**2))
                out[i, t] = gains[:, None, None] * g[None] + noise * rng.random((channels, size, size))
            continue

        def start_for(d):
            if d > 0:
                return int(rng.integers(lo, hi - travel + 1))
            if d < 0:
                return int(rng.integers(lo + travel, hi + 1))
            return int(rng.integers(lo, hi + 1))

        r0, c0 = start_for(dy), start_for(dx)
        gains = rng.uniform(0.5, 1.0, size=channels)
        for t in range(n_frames):
            g = np.exp(-((yy - r0 - dy * t) ** 2 + (xx - c0 - dx * t) ** 2) / (2 * sigma**2))
            out[i, t] = gains[:, None, None] * g[None] + noise * rng.random((channels, size, size))
    return out


def _bounce(p, size):
    if size == 1:
        return 0
    period = 2 * (size - 1)
    p = p % period
    return p if p < size else period - p
