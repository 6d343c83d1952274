"""Shared array types and shape algebra.

Conventions used everywhere in this package:

* videos are rank-5 tensors ``[N, T, C, H, W]`` in pixel space,
* feature maps are rank-5 tensors ``[N, T, Hf, Wf, D]``, channels last,
* batch/time folding is always N outer, T inner.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import torch
from torch import Tensor

from .errors import ShapeMismatchError


class ValueRange(str, Enum):
    """Declared pixel range of a video batch."""

    SIGNED = "signed"  # values in [-1, 1]
    UNIT = "unit"      # values in [0, 1]

    @property
    def bounds(self) -> tuple[float, float]:
        return (-1.0, 1.0) if self is ValueRange.SIGNED else (0.0, 1.0)

    @property
    def peak(self) -> float:
        """Peak-to-peak span, used as the PSNR/SSIM dynamic range."""
        lo, hi = self.bounds
        return hi - lo


@dataclass
class VideoBatch:
    """A batch of video clips in pixel space, ``data`` shaped [N, T, C, H, W]."""

    data: Tensor
    value_range: ValueRange = ValueRange.UNIT

    def __post_init__(self) -> None:
        if isinstance(self.value_range, str):
            self.value_range = ValueRange(self.value_range)

    @property
    def num_clips(self) -> int:
        return int(self.data.shape[0])

    @property
    def clip_length(self) -> int:
        return int(self.data.shape[1])

    def validate(self) -> "VideoBatch":
        d = self.data
        if d.ndim != 5:
            raise ShapeMismatchError(f"video batch must be rank 5, got shape {tuple(d.shape)}")
        if min(d.shape) < 1:
            raise ShapeMismatchError(f"all video dims must be >= 1, got {tuple(d.shape)}")
        if not torch.isfinite(d).all():
            raise ValueError("video batch contains non-finite values")
        lo, hi = self.value_range.bounds
        if float(d.min()) < lo or float(d.max()) > hi:
            raise ValueError(
                f"pixel values outside declared {self.value_range.value} range "
                f"[{lo}, {hi}]: observed [{float(d.min()):.4g}, {float(d.max()):.4g}]"
            )
        return self


@dataclass
class FeatureSeq:
    """A latent feature sequence, ``data`` shaped [N, T, Hf, Wf, D]."""

    data: Tensor
    window: int | None = field(default=None)

    def validate(self) -> "FeatureSeq":
        d = self.data
        if d.ndim != 5:
            raise ShapeMismatchError(f"feature seq must be rank 5, got shape {tuple(d.shape)}")
        if not torch.isfinite(d).all():
            raise ValueError("feature seq contains non-finite values")
        if self.window is not None:
            _, _, hf, wf, _ = d.shape
            if (hf * wf) % (self.window * self.window) != 0:
                raise ShapeMismatchError(
                    f"Hf*Wf = {hf * wf} not divisible by window^2 = {self.window ** 2}"
                )
        return self


def window_partition(z: Tensor, window: int) -> Tensor:
    """Split feature maps into non-overlapping window-sized tiles.

    Args:
        z: features ``[NT, Hf, Wf, D]`` (time already folded into batch).
        window: tile side length K.

    Returns:
        Tiles ``[NT * P, K*K, D]`` with ``P = Hf*Wf / K^2``. Tiles are ordered
        row-major over the tile grid, values within a tile row-major as well,
        and all tiles of one frame are contiguous.
    """
    if z.ndim != 4:
        raise ShapeMismatchError(f"expected [NT, Hf, Wf, D], got shape {tuple(z.shape)}")
    nt, hf, wf, d = z.shape
    if window < 1 or hf % window != 0 or wf % window != 0:
        raise ShapeMismatchError(
            f"window {window} does not evenly divide feature grid {hf}x{wf}"
        )
    gh, gw = hf // window, wf // window
    tiles = z.reshape(nt, gh, window, gw, window, d)
    tiles = tiles.permute(0, 1, 3, 2, 4, 5)
    return tiles.reshape(nt * gh * gw, window * window, d)


def window_merge(patches: Tensor, window: int, height: int, width: int) -> Tensor:
    """Reassemble tiles produced by :func:`window_partition`.

    Exact inverse: ``window_merge(window_partition(z, k), k, Hf, Wf) == z``.
    """
    if patches.ndim != 3:
        raise ShapeMismatchError(f"expected [NT*P, K*K, D], got shape {tuple(patches.shape)}")
    ntp, kk, d = patches.shape
    if kk != window * window:
        raise ShapeMismatchError(f"tile size {kk} does not match window^2 = {window ** 2}")
    if height % window != 0 or width % window != 0:
        raise ShapeMismatchError(f"window {window} does not divide target grid {height}x{width}")
    gh, gw = height // window, width // window
    if ntp % (gh * gw) != 0:
        raise ShapeMismatchError(
            f"{ntp} tiles cannot fill a {height}x{width} grid with window {window}"
        )
    nt = ntp // (gh * gw)
    tiles = patches.reshape(nt, gh, gw, window, window, d)
    tiles = tiles.permute(0, 1, 3, 2, 4, 5)
    return tiles.reshape(nt, height, width, d)


def fold_time(z: Tensor) -> Tensor:
    """[N, T, Hf, Wf, D] -> [N*T, Hf, Wf, D] (N outer, T inner)."""
    n, t, hf, wf, d = z.shape
    return z.reshape(n * t, hf, wf, d)


def unfold_time(z: Tensor, batch: int) -> Tensor:
    """Inverse of :func:`fold_time` for a known batch size."""
    nt, hf, wf, d = z.shape
    if nt % batch != 0:
        raise ShapeMismatchError(f"cannot unfold {nt} frames into batch {batch}")
    return z.reshape(batch, nt // batch, hf, wf, d)
