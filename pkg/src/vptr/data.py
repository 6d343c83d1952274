"""Deterministic synthetic moving-shapes video generator and flip augmentation.

Clips show rigid shapes (squares and crosses) moving with constant integer
velocity and reflecting off the canvas borders; overlaps composite by max.
Clip i is a pure function of ``(spec.seed, i)``, so splits are just
disjoint index ranges and generation parallelizes trivially.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from .core import ValueRange, VideoBatch
from .errors import DatasetSpecError

SHAPE_KINDS = ("square", "cross")


@dataclass
class SyntheticDatasetSpec:
    seed: int = 0
    num_clips: int = 16
    clip_length: int = 8
    canvas: int = 64
    shapes_per_clip: int = 2
    kinds: tuple[str, ...] = SHAPE_KINDS
    side_min: int = 8
    side_max: int = 12
    speed_min: int = 1
    speed_max: int = 3
    value_range: ValueRange = ValueRange.UNIT

    def __post_init__(self) -> None:
        if isinstance(self.value_range, str):
            self.value_range = ValueRange(self.value_range)
        self.kinds = tuple(self.kinds)

    def validate(self) -> "SyntheticDatasetSpec":
        if self.num_clips < 1:
            raise DatasetSpecError("num_clips must be >= 1")
        if self.clip_length < 1:
            raise DatasetSpecError("clip_length must be >= 1")
        if self.shapes_per_clip < 1:
            raise DatasetSpecError("shapes_per_clip must be >= 1")
        if not self.kinds or any(k not in SHAPE_KINDS for k in self.kinds):
            raise DatasetSpecError(f"kinds must be drawn from {SHAPE_KINDS}, got {self.kinds}")
        if self.side_min < 2 or self.side_min > self.side_max:
            raise DatasetSpecError(f"invalid side range [{self.side_min}, {self.side_max}]")
        if self.side_max > self.canvas:
            raise DatasetSpecError(
                f"shape side {self.side_max} larger than canvas {self.canvas}"
            )
        if self.speed_min < 0 or self.speed_min > self.speed_max:
            raise DatasetSpecError(f"invalid speed range [{self.speed_min}, {self.speed_max}]")
        return self


def _stamp(kind: str, side: int, intensity: float) -> np.ndarray:
    """Binary stamp of one shape scaled by its intensity, [side, side]."""
    patch = np.zeros((side, side), dtype=np.float32)
    if kind == "square":
        patch[:, :] = intensity
    else:  # cross: horizontal and vertical bars through the center
        bar = max(2, side // 3)
        off = (side - bar) // 2
        patch[off:off + bar, :] = intensity
        patch[:, off:off + bar] = intensity
    return patch


def reflect_position(start: int, velocity: int, steps: int, limit: int) -> int:
    """Closed-form reflected (triangle-wave) position after ``steps`` steps
    of motion on the integer interval [0, limit]."""
    if limit == 0:
        return 0
    m = (start + velocity * steps) % (2 * limit)
    return m if m <= limit else 2 * limit - m


@dataclass
class _Shape:
    kind: str
    side: int
    intensity: float
    row: int
    col: int
    vr: int
    vc: int


def _draw_shapes(spec: SyntheticDatasetSpec, rng: np.random.Generator) -> list[_Shape]:
    shapes = []
    for _ in range(spec.shapes_per_clip):
        kind = str(rng.choice(list(spec.kinds)))
        side = int(rng.integers(spec.side_min, spec.side_max + 1))
        intensity = float(rng.uniform(0.6, 1.0))
        hi = spec.canvas - side
        row = int(rng.integers(0, hi + 1))
        col = int(rng.integers(0, hi + 1))
        vr = int(rng.integers(spec.speed_min, spec.speed_max + 1))
        vc = int(rng.integers(spec.speed_min, spec.speed_max + 1))
        if hi == 0:
            vr = vc = 0
        else:
            vr *= 1 if rng.random() < 0.5 else -1
            vc *= 1 if rng.random() < 0.5 else -1
        shapes.append(_Shape(kind, side, intensity, row, col, vr, vc))
    return shapes


def make_clip(spec: SyntheticDatasetSpec, index: int) -> np.ndarray:
    """Render clip ``index`` as float32 [T, 1, canvas, canvas] in unit range."""
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(index,)))
    shapes = _draw_shapes(spec, rng)
    frames = np.zeros((spec.clip_length, 1, spec.canvas, spec.canvas), dtype=np.float32)
    for t in range(spec.clip_length):
        canvas = frames[t, 0]
        for s in shapes:
            hi = spec.canvas - s.side
            r = reflect_position(s.row, s.vr, t, hi)
            c = reflect_position(s.col, s.vc, t, hi)
            stamp = _stamp(s.kind, s.side, s.intensity)
            region = canvas[r:r + s.side, c:c + s.side]
            np.maximum(region, stamp, out=region)
    return frames


def gen_moving_shapes(
    spec: SyntheticDatasetSpec, indices: range | None = None
) -> VideoBatch:
    """Generate the clips for ``indices`` (default: all of them)."""
    spec.validate()
    if indices is None:
        indices = range(spec.num_clips)
    clips = np.stack([make_clip(spec, i) for i in indices])
    data = torch.from_numpy(clips)
    if spec.value_range is ValueRange.SIGNED:
        data = data * 2.0 - 1.0
    return VideoBatch(data=data, value_range=spec.value_range)


def flip_clip(clip: Tensor, horizontal: bool, vertical: bool) -> Tensor:
    """Flip every frame of a [T, C, H, W] clip together."""
    dims = []
    if vertical:
        dims.append(-2)
    if horizontal:
        dims.append(-1)
    return torch.flip(clip, dims) if dims else clip


def augment_flips(clip: Tensor, rng: np.random.Generator) -> Tensor:
    """Random horizontal/vertical flip, one decision per clip."""
    return flip_clip(clip, horizontal=bool(rng.random() < 0.5),
                     vertical=bool(rng.random() < 0.5))


def copy_last_baseline(past: Tensor, steps: int) -> Tensor:
    """Predict every future step as a copy of the last observed frame."""
    return past[:, -1:].repeat(1, steps, 1, 1, 1)
