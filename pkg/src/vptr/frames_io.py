"""Grayscale frame export/import: binary PGM natively, PNG via Pillow if present."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .core import ValueRange
from .errors import ShapeMismatchError, VptrError


def frame_to_u8(frame: Tensor, value_range: ValueRange) -> np.ndarray:
    """[C, H, W] float frame -> [H, W] (or [H, W, C]) uint8 in 0..255."""
    x = frame.detach().cpu().numpy()
    lo, hi = value_range.bounds
    x = (x - lo) / (hi - lo)
    u8 = np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)
    if u8.shape[0] == 1:
        return u8[0]
    return np.moveaxis(u8, 0, -1)


def u8_to_frame(img: np.ndarray, value_range: ValueRange) -> Tensor:
    """[H, W] or [H, W, C] uint8 -> [C, H, W] float tensor in the declared range."""
    if img.ndim == 2:
        img = img[:, :, None]
    x = img.astype(np.float32) / 255.0
    lo, hi = value_range.bounds
    x = x * (hi - lo) + lo
    return torch.from_numpy(np.moveaxis(x, -1, 0).copy())


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    """Binary (P5) PGM with maxval 255."""
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ShapeMismatchError("pgm export needs a [H, W] uint8 image")
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read binary (P5) or ASCII (P2) PGM into a [H, W] uint8 array."""
    raw = Path(path).read_bytes()
    if raw[:2] not in (b"P5", b"P2"):
        raise VptrError(f"{path}: not a PGM file (magic {raw[:2]!r})")
    binary = raw[:2] == b"P5"
    tokens = []
    pos = 2
    while len(tokens) < 3:
        match = re.compile(rb"\s*(?:#[^\n]*\n)*\s*(\S+)").match(raw, pos)
        if match is None:
            raise VptrError(f"{path}: truncated PGM header")
        tokens.append(match.group(1))
        pos = match.end()
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise VptrError(f"{path}: only maxval 255 supported, got {maxval}")
    if binary:
        data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos + 1)
    else:
        data = np.array(raw[pos:].split(), dtype=np.uint8)
        if data.size != w * h:
            raise VptrError(f"{path}: expected {w * h} pixels, got {data.size}")
    return data.reshape(h, w).copy()


def write_frame(path: str | Path, frame: Tensor, value_range: ValueRange,
                image_format: str = "pgm") -> None:
    img = frame_to_u8(frame, value_range)
    if image_format == "pgm":
        if img.ndim != 2:
            raise ShapeMismatchError("pgm export supports single-channel frames only")
        write_pgm(path, img)
    elif image_format == "png":
        try:
            from PIL import Image
        except ImportError as exc:
            raise VptrError("png export needs Pillow installed") from exc
        Image.fromarray(img).save(path)
    else:
        raise VptrError(f"unknown image format {image_format!r}")


def read_frame(path: str | Path, value_range: ValueRange) -> Tensor:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return u8_to_frame(read_pgm(path), value_range)
    try:
        from PIL import Image
    except ImportError as exc:
        raise VptrError(f"reading {path.suffix} frames needs Pillow installed") from exc
    return u8_to_frame(np.asarray(Image.open(path).convert("L")), value_range)
