"""Synthetic moving-dot videos, velocity features, and a tiny seeded trainer."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fixedpoint import FixedPointFormat
from .model import Dense, Flatten, ModelSpec, ReLU, predict

ACTIONS = ("stationary", "move-right", "move-up", "jump")

DEFAULT_WEIGHT_FORMAT = FixedPointFormat(8, 4)
DEFAULT_ACT_FORMAT = FixedPointFormat(4, 2)


class HarnessError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class SyntheticVideo:
    frames: np.ndarray  # (T, H, W) uint8, one active cell per frame; row 0 is the top
    label: int
    positions: list = field(default_factory=list)  # (x, y) per frame, y measured upward

    @property
    def shape(self) -> tuple:
        return self.frames.shape


def motion_template(label: int, steps: int) -> list[tuple[int, int]]:
    """Per-step (dx, dy) displacement for an action, before jitter."""
    name = ACTIONS[label]
    if name == "stationary":
        return [(0, 0)] * steps
    if name == "move-right":
        return [(1, 0)] * steps
    if name == "move-up":
        return [(0, 1)] * steps
    up = math.ceil(steps / 2)
    return [(0, 1)] * up + [(0, -1)] * (steps - up)


def _render(positions, H, W) -> np.ndarray:
    frames = np.zeros((len(positions), H, W), dtype=np.uint8)
    for t, (x, y) in enumerate(positions):
        frames[t, H - 1 - y, x] = 1
    return frames


def make_video(label: int, T: int, H: int, W: int, rng: np.random.Generator, jitter: float = 0.1) -> SyntheticVideo:
    steps = motion_template(label, T - 1)
    xs = np.cumsum([0] + [d[0] for d in steps])
    ys = np.cumsum([0] + [d[1] for d in steps])
    # start so the un-jittered trajectory stays on the grid
    x0 = int(rng.integers(-xs.min(), W - xs.max()))
    y0 = int(rng.integers(-ys.min(), H - ys.max()))
    pos = [(x0, y0)]
    for dx, dy in steps:
        x, y = pos[-1]
        x, y = x + dx, y + dy
        if rng.random() < jitter:
            delta = 1 if rng.random() < 0.5 else -1
            if rng.random() < 0.5:
                x += delta
            else:
                y += delta
        pos.append((min(max(x, 0), W - 1), min(max(y, 0), H - 1)))
    return SyntheticVideo(_render(pos, H, W), label, pos)


@dataclass
class Dataset:
    videos: list
    seed: int
    train_idx: list
    test_idx: list
    jitter: float = 0.1

    @property
    def labels(self) -> np.ndarray:
        return np.array([v.label for v in self.videos], dtype=int)

    def features(self) -> np.ndarray:
        return np.stack([extract_features(v) for v in self.videos])

    def to_dict(self) -> dict:
        T, H, W = self.videos[0].shape if self.videos else (0, 0, 0)
        return {
            "seed": self.seed,
            "frames": T, "height": H, "width": W,
            "jitter": repr(float(self.jitter)),
            "actions": list(ACTIONS),
            "train": list(self.train_idx),
            "test": list(self.test_idx),
            "videos": [{"label": v.label, "frames": [rle_encode(f) for f in v.frames]} for v in self.videos],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dataset":
        H, W = int(d["height"]), int(d["width"])
        videos = []
        for v in d["videos"]:
            frames = np.stack([rle_decode(s, H, W) for s in v["frames"]])
            pos = []
            for f in frames:
                r, c = np.argwhere(f)[0]
                pos.append((int(c), int(H - 1 - r)))
            videos.append(SyntheticVideo(frames, int(v["label"]), pos))
        return cls(videos, int(d["seed"]), list(d["train"]), list(d["test"]), float(d.get("jitter", 0.1)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_dict(json.loads(Path(path).read_text()))


def rle_encode(frame: np.ndarray) -> str:
    """Row-major run-length string: runs of '.' (off) and '#' (on), e.g. ``12.1#11.``."""
    flat = "".join("#" if v else "." for v in np.asarray(frame).reshape(-1))
    return "".join(f"{len(m.group(0))}{m.group(0)[0]}" for m in re.finditer(r"\.+|#+", flat))


def rle_decode(s: str, H: int, W: int) -> np.ndarray:
    cells = []
    for count, ch in re.findall(r"(\d+)([.#])", s):
        cells.extend([1 if ch == "#" else 0] * int(count))
    if len(cells) != H * W:
        raise HarnessError(f"run-length frame has {len(cells)} cells, expected {H * W}")
    return np.array(cells, dtype=np.uint8).reshape(H, W)


def gen_videos(seed: int, count: int, T: int, H: int, W: int, jitter: float = 0.1,
               test_fraction: float = 0.25) -> Dataset:
    if T < 2:
        raise HarnessError("need at least 2 frames")
    if H < 4 or W < 4:
        raise HarnessError("grid must be at least 4x4")
    if count < 1:
        raise HarnessError("count must be positive")
    if math.ceil((T - 1) / 2) >= H or T - 1 >= W or T - 1 >= H:
        raise HarnessError(f"{T} frames do not fit a {H}x{W} grid for every action")
    rng = np.random.default_rng(seed)
    videos = [make_video(i % len(ACTIONS), T, H, W, rng, jitter) for i in range(count)]
    order = rng.permutation(count)
    n_test = int(round(count * test_fraction))
    return Dataset(videos, seed, sorted(int(i) for i in order[n_test:]), sorted(int(i) for i in order[:n_test]),
                   jitter)


def centroid(frame: np.ndarray) -> tuple[float, float]:
    """(x, y) centroid of the active cells, y measured upward."""
    H = frame.shape[0]
    rows, cols = np.nonzero(frame)
    return float(cols.mean()), float(H - 1 - rows.mean())


def extract_features(video: SyntheticVideo) -> np.ndarray:
    """(T-1) x 2 grid of centroid displacements (dx, dy), scaled by grid size into [-1, 1]."""
    frames = video.frames
    _, H, W = frames.shape
    cents = [centroid(f) for f in frames]
    out = np.zeros((len(frames) - 1, 2))
    for t in range(len(frames) - 1):
        out[t, 0] = (cents[t + 1][0] - cents[t][0]) / (W - 1)
        out[t, 1] = (cents[t + 1][1] - cents[t][1]) / (H - 1)
    return out


# ---------------------------------------------------------------------------
# training


def init_mlp(n_in: int, hidden: Sequence[int], n_out: int, rng: np.random.Generator) -> list:
    sizes = [n_in, *hidden, n_out]
    params = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        params.append((rng.normal(0.0, math.sqrt(2.0 / a), size=(b, a)), np.zeros(b)))
    return params


def mlp_to_model(params, frames: int, features: int, num_classes: int,
                 weight_format=DEFAULT_WEIGHT_FORMAT, act_format=DEFAULT_ACT_FORMAT) -> ModelSpec:
    layers = [Flatten()]
    for i, (w, b) in enumerate(params):
        layers.append(Dense(w, b))
        if i < len(params) - 1:
            layers.append(ReLU())
    return ModelSpec(frames, features, tuple(layers), num_classes, weight_format, act_format)


def _forward(params, x):
    acts = [x]
    for i, (w, b) in enumerate(params):
        z = w @ acts[-1] + b
        acts.append(np.maximum(z, 0.0) if i < len(params) - 1 else z)
    return acts


def squared_hinge(scores: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """One-vs-all squared hinge loss and its gradient w.r.t. the scores."""
    y = -np.ones_like(scores)
    y[label] = 1.0
    margin = np.maximum(0.0, 1.0 - y * scores)
    return float(np.sum(margin ** 2)), -2.0 * y * margin


def train_model(X, y=None, hidden: Sequence[int] = (8,), epochs: int = 200,
                lr: float = 0.05, seed: int = 7, num_classes: int | None = None,
                weight_format=DEFAULT_WEIGHT_FORMAT, act_format=DEFAULT_ACT_FORMAT) -> tuple[ModelSpec, float]:
    """Seeded per-sample SGD on a Dense-ReLU MLP over flattened features.

    ``X`` is either a Dataset (its training split is used) or an array of
    shape ``(n, frames, features)`` with labels ``y``. Returns the float model
    (with the given formats attached for later quantization) and its training
    accuracy.
    """
    if isinstance(X, Dataset):
        X, y = X.features()[X.train_idx], X.labels[X.train_idx]
        num_classes = len(ACTIONS) if num_classes is None else num_classes
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 3 or len(X) == 0:
        raise TrainingError("X must be a non-empty (n, frames, features) array")
    n, frames, feats = X.shape
    C = int(num_classes if num_classes is not None else y.max() + 1)
    rng = np.random.default_rng(seed)
    params = init_mlp(frames * feats, hidden, C, rng)
    flat = X.reshape(n, -1)
    # divergence is detected below; silence numpy's overflow chatter on the way there
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(epochs):
            for i in rng.permutation(n):
                acts = _forward(params, flat[i])
                loss, g = squared_hinge(acts[-1], y[i])
                if not math.isfinite(loss):
                    raise TrainingError("loss became non-finite; try a smaller learning rate")
                for li in range(len(params) - 1, -1, -1):
                    w, b = params[li]
                    gw = np.outer(g, acts[li])
                    g_prev = w.T @ g
                    params[li] = (w - lr * gw, b - lr * g)
                    if li > 0:
                        g = g_prev * (acts[li] > 0)
            if not all(np.isfinite(w).all() and np.isfinite(b).all() for w, b in params):
                raise TrainingError("weights became non-finite; try a smaller learning rate")
    model = mlp_to_model(params, frames, feats, C, weight_format, act_format)
    acc = float(np.mean([np.argmax(_forward(params, x)[-1]) == t for x, t in zip(flat, y)]))
    return model, acc


def float_accuracy(model: ModelSpec, X, y) -> float:
    from .model import argmax_lowest, float_forward
    return float(np.mean([argmax_lowest(list(float_forward(model, x))) == t for x, t in zip(X, y)]))


def quantized_accuracy(model: ModelSpec, X, y) -> float:
    return float(np.mean([predict(model, x) == t for x, t in zip(X, y)]))
