"""Skip-free convolutional frame autoencoder and its stage-one trainer.

64x64 frames are mapped to 8x8xD features through three stride-2 stages
(channel ladder C -> D/4 -> D/2 -> D) with a residual block at the
bottleneck; the decoder mirrors the ladder. There are no connections from
encoder activations to the decoder: reconstruction is a function of the
bottleneck feature alone.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .config import AutoencoderSection
from .core import ValueRange
from .errors import ShapeMismatchError, TrainingDivergedError
from .losses import gdl_loss, l2_loss

FRAME_SIZE = 64
FEAT_SIZE = 8


def _norm(channels: int) -> nn.GroupNorm:
    """Per-sample group normalization: batch-independent and deterministic.

    Statistics pool over space and channel groups; purely per-position
    channel norms blow up on flat (near-constant) image regions and make
    the encoder wildly sensitive to background level, which breaks
    recurrent pixel-space inference.
    """
    groups = next(g for g in (4, 2, 1) if channels % g == 0)
    return nn.GroupNorm(groups, channels)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.norm1 = _norm(channels)
        self.norm2 = _norm(channels)

    def forward(self, x: Tensor) -> Tensor:
        h = F.gelu(self.norm1(self.conv1(x)))
        return x + self.norm2(self.conv2(h))


class FrameEncoder(nn.Module):
    """[B, C, 64, 64] -> [B, D, 8, 8] via three stride-2 stages."""

    def __init__(self, channels: int, d_model: int):
        super().__init__()
        if d_model % 4 != 0 or d_model < 8:
            # d_model/4 must give every stage >= 2 channels, else the
            # per-position channel norm degenerates to a constant
            raise ShapeMismatchError(f"d_model must be a multiple of 4 and >= 8, got {d_model}")
        widths = (d_model // 4, d_model // 2, d_model)
        stages = []
        c_in = channels
        for c_out in widths:
            stages += [
                nn.Conv2d(c_in, c_out, 3, stride=2, padding=1, bias=False),
                _norm(c_out),
                nn.GELU(),
            ]
            c_in = c_out
        self.stages = nn.Sequential(*stages)
        self.bottleneck = ResidualBlock(d_model)

    def forward(self, x: Tensor) -> Tensor:
        return self.bottleneck(self.stages(x))


class FrameDecoder(nn.Module):
    """[B, D, 8, 8] -> [B, C, 64, 64]; Tanh head for signed pixels, Sigmoid for unit."""

    def __init__(self, channels: int, d_model: int, value_range: ValueRange):
        super().__init__()
        self.value_range = value_range
        self.bottleneck = ResidualBlock(d_model)
        self.up = nn.Sequential(
            nn.ConvTranspose2d(d_model, d_model // 2, 3, stride=2, padding=1,
                               output_padding=1, bias=False),
            _norm(d_model // 2),
            nn.GELU(),
            nn.ConvTranspose2d(d_model // 2, d_model // 4, 3, stride=2, padding=1,
                               output_padding=1, bias=False),
            _norm(d_model // 4),
            nn.GELU(),
            nn.ConvTranspose2d(d_model // 4, channels, 3, stride=2, padding=1,
                               output_padding=1, bias=True),
        )

    def forward(self, z: Tensor) -> Tensor:
        x = self.up(self.bottleneck(z))
        if self.value_range is ValueRange.SIGNED:
            return torch.tanh(x)
        return torch.sigmoid(x)


class FrameAutoencoder(nn.Module):
    """Per-frame encoder/decoder pair applied over folded [N, T] batches."""

    def __init__(self, channels: int = 1, d_model: int = 64,
                 value_range: ValueRange = ValueRange.UNIT):
        super().__init__()
        if isinstance(value_range, str):
            value_range = ValueRange(value_range)
        self.channels = channels
        self.d_model = d_model
        self.value_range = value_range
        self.encoder = FrameEncoder(channels, d_model)
        self.decoder = FrameDecoder(channels, d_model, value_range)

    def encode(self, video: Tensor) -> Tensor:
        """[N, T, C, 64, 64] -> [N, T, 8, 8, D], frames folded into the batch."""
        if video.ndim != 5:
            raise ShapeMismatchError(f"expected [N, T, C, H, W], got {tuple(video.shape)}")
        n, t, c, h, w = video.shape
        if c != self.channels or h != FRAME_SIZE or w != FRAME_SIZE:
            raise ShapeMismatchError(
                f"encoder expects {self.channels}x{FRAME_SIZE}x{FRAME_SIZE} frames, "
                f"got {c}x{h}x{w}"
            )
        feats = self.encoder(video.reshape(n * t, c, h, w))
        return feats.permute(0, 2, 3, 1).reshape(n, t, FEAT_SIZE, FEAT_SIZE, self.d_model)

    def decode(self, feats: Tensor) -> Tensor:
        """[N, T, 8, 8, D] -> [N, T, C, 64, 64]."""
        if feats.ndim != 5:
            raise ShapeMismatchError(f"expected [N, T, Hf, Wf, D], got {tuple(feats.shape)}")
        n, t, hf, wf, d = feats.shape
        if hf != FEAT_SIZE or wf != FEAT_SIZE or d != self.d_model:
            raise ShapeMismatchError(
                f"decoder expects {FEAT_SIZE}x{FEAT_SIZE}x{self.d_model} features, "
                f"got {hf}x{wf}x{d}"
            )
        # contiguous copy: conv kernels are layout-sensitive, and decode must
        # be bit-identical whether features are live or reloaded from disk
        maps = feats.reshape(n * t, hf, wf, d).permute(0, 3, 1, 2).contiguous()
        frames = self.decoder(maps)
        return frames.reshape(n, t, self.channels, FRAME_SIZE, FRAME_SIZE)

    def forward(self, video: Tensor) -> Tensor:
        return self.decode(self.encode(video))


def build_autoencoder(cfg: AutoencoderSection, channels: int = 1,
                      value_range: ValueRange = ValueRange.UNIT) -> FrameAutoencoder:
    torch.manual_seed(cfg.seed)
    return FrameAutoencoder(channels=channels, d_model=cfg.d_model, value_range=value_range)


@torch.no_grad()
def reconstruction_mse(model: FrameAutoencoder, clips: Tensor, batch_clips: int = 32) -> float:
    """Mean per-element reconstruction squared error over a clip tensor."""
    model.eval()
    total, count = 0.0, 0
    for start in range(0, clips.shape[0], batch_clips):
        x = clips[start:start + batch_clips]
        err = (model(x) - x) ** 2
        total += float(err.sum())
        count += err.numel()
    return total / max(count, 1)


def train_autoencoder(
    train_clips: Tensor,
    val_clips: Tensor,
    cfg: AutoencoderSection,
    value_range: ValueRange = ValueRange.UNIT,
    log=None,
):
    """Stage one: train the frame autoencoder on clips ([n, T, C, 64, 64]).

    Objective is L2 + GDL summed per clip and averaged over the batch (the
    adversarial term is disabled, lambda1 = 0). Returns
    ``(model, history)`` where history rows carry epoch, a per-element
    train loss for logging, and the held-out reconstruction MSE.
    """
    from .data import augment_flips  # local import to avoid a cycle
    import numpy as np

    model = build_autoencoder(cfg, channels=int(train_clips.shape[2]), value_range=value_range)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    gen = torch.Generator().manual_seed(cfg.seed)
    flip_rng = np.random.default_rng(cfg.seed + 1)

    n_clips, t = train_clips.shape[0], train_clips.shape[1]
    batch_clips = max(1, cfg.batch_frames // t)
    clips_per_epoch = n_clips
    if cfg.frames_per_epoch > 0:
        clips_per_epoch = min(n_clips, max(batch_clips, cfg.frames_per_epoch // t))

    history = []
    step = 0
    clip_numel = train_clips[0].numel()
    for epoch in range(cfg.epochs):
        perm = torch.randperm(n_clips, generator=gen)[:clips_per_epoch]
        epoch_loss, num_batches = 0.0, 0
        for start in range(0, len(perm), batch_clips):
            idx = perm[start:start + batch_clips]
            x = train_clips[idx]
            if cfg.flip_augment:
                x = torch.stack([augment_flips(clip, flip_rng) for clip in x])
            recon = model(x)
            loss = (l2_loss(x, recon) + gdl_loss(x, recon, cfg.gdl_alpha)) / x.shape[0]
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite autoencoder loss at epoch {epoch} step {step}: {loss.item()!r}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())
            num_batches += 1
            step += 1
        val_mse = reconstruction_mse(model, val_clips)
        model.train()
        mean_loss = epoch_loss / max(num_batches, 1)
        row = {
            "epoch": epoch,
            "train_loss": mean_loss,
            "train_loss_per_elem": mean_loss / clip_numel,
            "val_mse": val_mse,
        }
        history.append(row)
        if log is not None:
            log(row)
        if val_mse < cfg.target_mse * 0.8:
            break
    model.eval()
    return model, history
